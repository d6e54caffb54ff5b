//! IDX files as distributed with MNIST: a big-endian header followed by
//! unsigned bytes.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::dataset::Dataset;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn bad(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format {
        context: path.display().to_string(),
        detail: detail.into(),
    }
}

fn read_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| bad(path, "truncated header"))
}

/// Header dimensions and payload of an IDX byte buffer.
fn parse<'b>(bytes: &'b [u8], magic: u32, path: &Path) -> Result<(Vec<usize>, &'b [u8])> {
    let found = read_u32(bytes, 0, path)?;
    if found != magic {
        return Err(bad(path, format!("magic {found:#010x}, expected {magic:#010x}")));
    }
    let ndim = (magic & 0xff) as usize;
    let dims = (0..ndim)
        .map(|i| read_u32(bytes, 4 + 4 * i, path).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let start = 4 + 4 * ndim;
    let len: usize = dims.iter().product();
    let payload = bytes
        .get(start..start + len)
        .ok_or_else(|| bad(path, format!("expected {len} data bytes, found {}", bytes.len() - start)))?;
    Ok((dims, payload))
}

/// Images as rows of pixel values scaled to `[0, 1]`.
pub fn parse_images(bytes: &[u8], path: &Path) -> Result<Array2<f64>> {
    let (dims, data) = parse(bytes, IMAGES_MAGIC, path)?;
    let n = dims[0];
    let width = dims[1] * dims[2];
    Ok(Array2::from_shape_vec((n, width), data.iter().map(|&b| f64::from(b) / 255.0).collect())
        .expect("length checked"))
}

pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    let (_, data) = parse(bytes, LABELS_MAGIC, path)?;
    Ok(data.iter().map(|&b| usize::from(b)).collect())
}

/// Reads an image file and its label file into a dataset with 10 classes.
pub fn read_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let x = parse_images(&fs::read(images)?, images)?;
    let y = parse_labels(&fs::read(labels)?, labels)?;
    if x.nrows() != y.len() {
        return Err(bad(labels, format!("{} labels for {} images", y.len(), x.nrows())));
    }
    let n_classes = y.iter().max().map_or(0, |m| m + 1).max(10);
    Dataset::new(x, y, n_classes, None)
}

/// Encodes images (values in `[0, 1]`, rounded to bytes) as an IDX buffer.
pub fn encode_images(x: &Array2<f64>, rows: usize, cols: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + x.len());
    for v in [IMAGES_MAGIC, x.nrows() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(x.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

pub fn encode_labels(y: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + y.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(y.len() as u32).to_be_bytes());
    out.extend(y.iter().map(|&c| c as u8));
    out
}
