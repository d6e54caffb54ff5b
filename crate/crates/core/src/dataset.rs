//! In-memory labelled datasets and their CSV form.
//!
//! CSV layout: header `x_1,…,x_d,y[,relevant]`; `relevant` is a
//! pipe-separated list of 1-based feature indices. Internally relevant
//! indices are 0-based.

use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `[n, d]` feature matrix.
    pub x: Array2<f64>,
    pub y: Vec<usize>,
    pub n_classes: usize,
    /// Ground-truth relevant features per sample (0-based), synthetic data only.
    pub relevant: Option<Vec<Vec<usize>>>,
}

impl Dataset {
    pub fn new(
        x: Array2<f64>,
        y: Vec<usize>,
        n_classes: usize,
        relevant: Option<Vec<Vec<usize>>>,
    ) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::LengthMismatch {
                what: "labels",
                expected: x.nrows(),
                got: y.len(),
            });
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
            return Err(invalid("labels", format!("label {bad} outside 0..{n_classes}")));
        }
        if let Some(rel) = &relevant {
            if rel.len() != y.len() {
                return Err(Error::LengthMismatch {
                    what: "relevant sets",
                    expected: y.len(),
                    got: rel.len(),
                });
            }
            if rel.iter().flatten().any(|&i| i >= x.ncols()) {
                return Err(invalid("relevant", "feature index out of range"));
            }
        }
        Ok(Self {
            x,
            y,
            n_classes,
            relevant,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.select(Axis(0), rows),
            y: rows.iter().map(|&r| self.y[r]).collect(),
            n_classes: self.n_classes,
            relevant: self
                .relevant
                .as_ref()
                .map(|rel| rows.iter().map(|&r| rel[r].clone()).collect()),
        }
    }

    /// Seeded shuffle, then the last `holdout` fraction becomes the second part.
    pub fn split(&self, holdout: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&holdout) {
            return Err(invalid("holdout", format!("must lie in [0, 1), got {holdout}")));
        }
        let mut rows: Vec<usize> = (0..self.len()).collect();
        rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = self.len() - (self.len() as f64 * holdout).round() as usize;
        Ok((self.subset(&rows[..cut]), self.subset(&rows[cut..])))
    }

    /// Concatenates rows of two datasets with the same width.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::LengthMismatch {
                what: "feature count",
                expected: self.dim(),
                got: other.dim(),
            });
        }
        let x = ndarray::concatenate(Axis(0), &[self.x.view(), other.x.view()])
            .expect("matching widths");
        let y = self.y.iter().chain(&other.y).copied().collect();
        let relevant = match (&self.relevant, &other.relevant) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).cloned().collect()),
            _ => None,
        };
        Self::new(x, y, self.n_classes.max(other.n_classes), relevant)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        let mut header: Vec<String> = (1..=self.dim()).map(|i| format!("x_{i}")).collect();
        header.push("y".into());
        if self.relevant.is_some() {
            header.push("relevant".into());
        }
        w.write_record(&header).map_err(|e| csv_error(path, e))?;
        for (r, row) in self.x.rows().into_iter().enumerate() {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push(self.y[r].to_string());
            if let Some(rel) = &self.relevant {
                let list: Vec<String> = rel[r].iter().map(|i| (i + 1).to_string()).collect();
                rec.push(list.join("|"));
            }
            w.write_record(&rec).map_err(|e| csv_error(path, e))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV layout above. Feature columns are those named `x_*`;
    /// `n_classes` is one more than the largest label.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
        let features: Vec<usize> = (0..header.len()).filter(|&i| header[i].starts_with("x_")).collect();
        let y_col = header
            .iter()
            .position(|h| h == "y")
            .ok_or_else(|| format_error(path, "missing `y` column"))?;
        let rel_col = header.iter().position(|h| h == "relevant");
        let mut values = Vec::new();
        let mut y = Vec::new();
        let mut relevant = rel_col.map(|_| Vec::new());
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            for &c in &features {
                values.push(parse_field::<f64>(path, line, &rec[c])?);
            }
            y.push(parse_field::<usize>(path, line, &rec[y_col])?);
            if let (Some(c), Some(rel)) = (rel_col, relevant.as_mut()) {
                let set = rec[c]
                    .split('|')
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_field::<usize>(path, line, s).map(|i| i.saturating_sub(1)))
                    .collect::<Result<Vec<_>>>()?;
                rel.push(set);
            }
        }
        let n = y.len();
        let x = Array2::from_shape_vec((n, features.len()), values)
            .map_err(|e| format_error(path, &e.to_string()))?;
        let n_classes = y.iter().max().map_or(0, |m| m + 1);
        Self::new(x, y, n_classes, relevant)
    }
}

fn parse_field<F: std::str::FromStr>(path: &Path, line: usize, s: &str) -> Result<F> {
    s.trim()
        .parse()
        .map_err(|_| format_error(path, &format!("record {}: cannot parse {s:?}", line + 1)))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    format_error(path, &e.to_string())
}

fn format_error(path: &Path, detail: &str) -> Error {
    Error::Format {
        context: path.display().to_string(),
        detail: detail.to_string(),
    }
}
