use std::path::Path;

use copsel::idx::{encode_images, encode_labels, parse_images, parse_labels, read_idx, IMAGES_MAGIC};
use ndarray::Array2;

fn header(words: &[u32]) -> Vec<u8> {
    words.iter().flat_map(|w| w.to_be_bytes()).collect()
}

#[test]
fn parses_hand_built_images() {
    let mut bytes = header(&[0x0803, 2, 2, 3]);
    bytes.extend([0u8, 255, 51, 1, 2, 3, 10, 20, 30, 40, 50, 60]);
    let x = parse_images(&bytes, Path::new("img")).unwrap();
    assert_eq!(x.dim(), (2, 6));
    assert_eq!(x[[0, 1]], 1.0);
    assert_eq!(x[[0, 2]], 0.2);
    assert_eq!(x[[1, 5]], 60.0 / 255.0);
}

#[test]
fn parses_hand_built_labels() {
    let mut bytes = header(&[0x0801, 3]);
    bytes.extend([7u8, 0, 9]);
    assert_eq!(parse_labels(&bytes, Path::new("lbl")).unwrap(), vec![7, 0, 9]);
}

#[test]
fn rejects_wrong_magic() {
    let mut images = header(&[0x0803, 1, 1, 1]);
    images.push(0);
    let err = parse_labels(&images, Path::new("lbl")).unwrap_err().to_string();
    assert!(err.contains("magic"), "{err}");
    assert!(parse_images(&header(&[0x0801, 1]), Path::new("img")).is_err());
}

#[test]
fn rejects_truncation() {
    let mut bytes = header(&[0x0803, 2, 2, 2]);
    bytes.extend([1u8; 7]);
    assert!(parse_images(&bytes, Path::new("img")).is_err());
    assert!(parse_images(&header(&[0x0803, 2]), Path::new("img")).is_err());
    assert!(parse_labels(&[0, 0], Path::new("lbl")).is_err());
}

#[test]
fn round_trips_through_files_and_checks_counts() {
    let x = Array2::from_shape_fn((5, 784), |(i, j)| ((i * 31 + j) % 256) as f64 / 255.0);
    let y = vec![1, 2, 3, 4, 5];
    let dir = tempfile::tempdir().unwrap();
    let (img, lbl) = (dir.path().join("img.idx"), dir.path().join("lbl.idx"));
    std::fs::write(&img, encode_images(&x, 28, 28)).unwrap();
    std::fs::write(&lbl, encode_labels(&y)).unwrap();
    let data = read_idx(&img, &lbl).unwrap();
    assert_eq!(data.dim(), 784);
    assert_eq!(data.n_classes, 10);
    assert_eq!(data.y, y);
    for (a, b) in data.x.iter().zip(x.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
    std::fs::write(&lbl, encode_labels(&y[..4])).unwrap();
    assert!(read_idx(&img, &lbl).is_err());
    assert_eq!(&encode_images(&x, 28, 28)[..4], &IMAGES_MAGIC.to_be_bytes());
}
