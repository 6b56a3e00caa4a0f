//! IDX image/label files (the MNIST container), binarized by digit parity.

use std::path::Path;

use rand::seq::index::sample as sample_indices;

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::rng_from_seed;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Idx("truncated header".into()))
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = read_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Idx(format!("bad image magic {magic:#010x}")));
    }
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let need = count * rows * cols;
    let payload = &bytes[16..];
    if payload.len() < need {
        return Err(Error::Idx(format!(
            "truncated image payload: {} of {need} bytes",
            payload.len()
        )));
    }
    Ok(IdxImages { count, rows, cols, pixels: payload[..need].to_vec() })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Idx(format!("bad label magic {magic:#010x}")));
    }
    let count = read_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(Error::Idx(format!(
            "truncated label payload: {} of {count} bytes",
            payload.len()
        )));
    }
    Ok(payload[..count].to_vec())
}

/// +1 for even digits, −1 for odd.
pub fn parity_label(digit: u8) -> f64 {
    if digit % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Builds a parity dataset from parsed IDX contents, drawing `subset_size`
/// rows without replacement. Pixels are scaled globally to [0, 1].
pub fn idx_to_dataset(
    images: &IdxImages,
    digits: &[u8],
    subset_size: usize,
    seed: u64,
) -> Result<Dataset> {
    if images.count != digits.len() {
        return Err(Error::Idx(format!(
            "count mismatch: {} images vs {} labels",
            images.count,
            digits.len()
        )));
    }
    if subset_size == 0 || subset_size > images.count {
        return Err(invalid(format!(
            "subset size {subset_size} out of range 1..={}",
            images.count
        )));
    }
    let dim = images.rows * images.cols;
    let mut rng = rng_from_seed(seed);
    let chosen = sample_indices(&mut rng, images.count, subset_size);
    let mut points = Vec::with_capacity(subset_size * dim);
    let mut labels = Vec::with_capacity(subset_size);
    for i in chosen.iter() {
        points.extend(images.pixels[i * dim..(i + 1) * dim].iter().map(|&b| b as f64 / 255.0));
        labels.push(parity_label(digits[i]));
    }
    Dataset::new(points, labels, dim, None)
}

pub fn load_idx_dataset(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    subset_size: usize,
    seed: u64,
) -> Result<Dataset> {
    let images = parse_images(&std::fs::read(images_path)?)?;
    let digits = parse_labels(&std::fs::read(labels_path)?)?;
    idx_to_dataset(&images, &digits, subset_size, seed)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn encode_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        for v in [IMAGES_MAGIC, count, rows, cols] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(pixels);
        out
    }

    pub(crate) fn encode_labels(labels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        out.extend_from_slice(labels);
        out
    }

    #[test]
    fn parity_rule() {
        assert_eq!(parity_label(4), 1.0);
        assert_eq!(parity_label(7), -1.0);
        assert_eq!(parity_label(0), 1.0);
    }

    #[test]
    fn parses_and_scales() {
        let pixels: Vec<u8> = (0..12).map(|i| (i * 20) as u8).collect();
        let imgs = parse_images(&encode_images(3, 2, 2, &pixels)).unwrap();
        let digits = parse_labels(&encode_labels(&[4, 7, 2])).unwrap();
        let ds = idx_to_dataset(&imgs, &digits, 3, 0).unwrap();
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.len(), 3);
        assert!(ds.true_normal().is_none());
        assert!(ds.points().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let mut labels = ds.labels().to_vec();
        labels.sort_by(f64::total_cmp);
        assert_eq!(labels, vec![-1.0, 1.0, 1.0]);
    }

    #[test]
    fn rejects_malformed_input() {
        let pixels = vec![0u8; 8];
        let mut bad = encode_images(2, 2, 2, &pixels);
        bad[3] = 0x02;
        assert!(matches!(parse_images(&bad), Err(Error::Idx(_))));
        let truncated = encode_images(3, 2, 2, &pixels);
        assert!(matches!(parse_images(&truncated), Err(Error::Idx(_))));
        assert!(parse_labels(&encode_images(1, 1, 1, &[0])).is_err());
        let short = &encode_labels(&[1, 2, 3])[..9];
        assert!(parse_labels(short).is_err());
        assert!(parse_images(&[0, 0, 8]).is_err());
    }

    #[test]
    fn count_mismatch_and_oversized_subset() {
        let imgs = parse_images(&encode_images(2, 1, 2, &[0, 1, 2, 3])).unwrap();
        assert!(idx_to_dataset(&imgs, &[1, 2, 3], 2, 0).is_err());
        assert!(idx_to_dataset(&imgs, &[1, 2], 3, 0).is_err());
    }
}
