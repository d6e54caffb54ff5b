//! Syn1–Syn6 binary classification benchmarks.
//!
//! Features are standard normal, either independent or with the AR(1)
//! covariance `Σᵢⱼ = 0.5^|i−j|`. Each family defines a logit `γ` from a few
//! of the first eleven coordinates; the label is Bernoulli with
//! `P(y = 1) = 1/(1 + exp(γ))` unless the sign is flipped.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{invalid, Error, Result};
use crate::tensor::cholesky_lower;

/// Number of coordinates the family formulas read.
pub const MIN_DIM: usize = 11;
/// AR(1) coefficient of the correlated design.
pub const CORRELATION_DECAY: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Syn1,
    Syn2,
    Syn3,
    Syn4,
    Syn5,
    Syn6,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Syn1,
        Family::Syn2,
        Family::Syn3,
        Family::Syn4,
        Family::Syn5,
        Family::Syn6,
    ];
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = Family::ALL.iter().position(|g| g == self).expect("listed") + 1;
        write!(f, "syn{i}")
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| invalid("family", format!("unknown family {s:?}, expected syn1..syn6")))
    }
}

/// Which way the logit enters the label probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSign {
    /// `P(y = 1) = 1/(1 + exp(γ))`
    Literal,
    /// `P(y = 1) = 1/(1 + exp(−γ))`
    Flipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub family: Family,
    pub d: usize,
    pub correlated: bool,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub label_sign: LabelSign,
    /// Count `x₁₁` as relevant in the switching families Syn4–6.
    pub switch_relevant: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            family: Family::Syn1,
            d: MIN_DIM,
            correlated: false,
            n_train: 10_000,
            n_test: 10_000,
            seed: 0,
            label_sign: LabelSign::Literal,
            switch_relevant: true,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d < MIN_DIM {
            return Err(invalid("d", format!("families read x_1..x_11, got d = {}", self.d)));
        }
        if self.n_train < 2 {
            return Err(invalid("n_train", format!("need at least 2 samples, got {}", self.n_train)));
        }
        Ok(())
    }
}

fn syn1(x: ArrayView1<f64>) -> f64 {
    x[0] * x[1]
}

fn syn2(x: ArrayView1<f64>) -> f64 {
    x[0] * x[0] + x[1] * x[1] + x[2] * x[2] - 4.0
}

fn syn3(x: ArrayView1<f64>) -> f64 {
    -10.0 * (2.0 * x[6]).sin() + 2.0 * x[7].abs() + x[8] + (-x[9]).exp()
}

fn quad4(x: ArrayView1<f64>) -> f64 {
    (2..6).map(|i| x[i] * x[i]).sum::<f64>() - 4.0
}

/// The family's logit. Syn4–6 branch on the sign of `x₁₁`.
pub fn gamma(family: Family, x: ArrayView1<f64>) -> f64 {
    let low = x[10] < 0.0;
    match family {
        Family::Syn1 => syn1(x),
        Family::Syn2 => syn2(x),
        Family::Syn3 => syn3(x),
        Family::Syn4 => if low { syn1(x) } else { quad4(x) },
        Family::Syn5 => if low { syn1(x) } else { syn3(x) },
        Family::Syn6 => if low { quad4(x) } else { syn3(x) },
    }
}

pub fn label_probability(gamma: f64, sign: LabelSign) -> f64 {
    match sign {
        LabelSign::Literal => 1.0 / (1.0 + gamma.exp()),
        LabelSign::Flipped => 1.0 / (1.0 + (-gamma).exp()),
    }
}

pub fn label<R: Rng + ?Sized>(gamma: f64, sign: LabelSign, rng: &mut R) -> usize {
    usize::from(rng.random::<f64>() < label_probability(gamma, sign))
}

/// Relevant features of one sample, 0-based and sorted.
pub fn ground_truth(family: Family, x: ArrayView1<f64>, switch_relevant: bool) -> Vec<usize> {
    let low = x[10] < 0.0;
    let mut set: Vec<usize> = match family {
        Family::Syn1 => vec![0, 1],
        Family::Syn2 => vec![0, 1, 2],
        Family::Syn3 => vec![6, 7, 8, 9],
        Family::Syn4 => if low { vec![0, 1] } else { vec![2, 3, 4, 5] },
        Family::Syn5 => if low { vec![0, 1] } else { vec![6, 7, 8, 9] },
        Family::Syn6 => if low { vec![2, 3, 4, 5] } else { vec![6, 7, 8, 9] },
    };
    if switch_relevant && matches!(family, Family::Syn4 | Family::Syn5 | Family::Syn6) {
        set.push(10);
    }
    set
}

/// `Σᵢⱼ = 0.5^|i−j|`
pub fn ar1_covariance(d: usize) -> Array2<f64> {
    Array2::from_shape_fn((d, d), |(i, j)| CORRELATION_DECAY.powi(i.abs_diff(j) as i32))
}

/// `n × d` feature matrix.
pub fn gen_features<R: Rng + ?Sized>(n: usize, d: usize, correlated: bool, rng: &mut R) -> Result<Array2<f64>> {
    let z = Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal));
    if !correlated {
        return Ok(z);
    }
    let l = cholesky_lower(ar1_covariance(d).view())?;
    Ok(z.dot(&l.t()))
}

/// Training and test sets for `spec`. Features and labels come from two
/// streams of one seeded generator, so the output depends only on the spec.
pub fn generate(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let n = spec.n_train + spec.n_test;
    let mut feature_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    feature_rng.set_stream(0);
    let mut label_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    label_rng.set_stream(1);
    let x = gen_features(n, spec.d, spec.correlated, &mut feature_rng)?;
    let mut y = Vec::with_capacity(n);
    let mut relevant = Vec::with_capacity(n);
    for row in x.axis_iter(Axis(0)) {
        y.push(label(gamma(spec.family, row), spec.label_sign, &mut label_rng));
        relevant.push(ground_truth(spec.family, row, spec.switch_relevant));
    }
    let all = Dataset::new(x, y, 2, Some(relevant))?;
    let train: Vec<usize> = (0..spec.n_train).collect();
    let test: Vec<usize> = (spec.n_train..n).collect();
    Ok((all.subset(&train), all.subset(&test)))
}

/// Writes `<stem>.csv` (training rows, then test rows) and the `<stem>.json`
/// sidecar holding the spec.
pub fn write(spec: &SyntheticSpec, dir: &Path, stem: &str) -> Result<()> {
    let (train, test) = generate(spec)?;
    fs::create_dir_all(dir)?;
    train.concat(&test)?.write_csv(&dir.join(format!("{stem}.csv")))?;
    fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(spec)? + "\n")?;
    Ok(())
}

/// Reads a dataset written by [`write`], split back into training and test
/// sets according to the sidecar.
pub fn read(csv_path: &Path) -> Result<(SyntheticSpec, Dataset, Dataset)> {
    let spec: SyntheticSpec = serde_json::from_str(&fs::read_to_string(csv_path.with_extension("json"))?)?;
    let mut all = Dataset::read_csv(csv_path)?;
    all.n_classes = 2;
    if all.len() != spec.n_train + spec.n_test || all.dim() != spec.d {
        return Err(Error::Format {
            context: csv_path.display().to_string(),
            detail: format!(
                "{} rows × {} features, sidecar says {} × {}",
                all.len(),
                all.dim(),
                spec.n_train + spec.n_test,
                spec.d
            ),
        });
    }
    let train: Vec<usize> = (0..spec.n_train).collect();
    let test: Vec<usize> = (spec.n_train..all.len()).collect();
    Ok((spec.clone(), all.subset(&train), all.subset(&test)))
}
