//! IDX image/label ingestion (the MNIST container format).
//!
//! Layout is big-endian: a 4-byte magic (`0x00000803` for 3-D u8 image
//! files, `0x00000801` for 1-D u8 label files), one u32 per dimension, then
//! the raw u8 payload. Pixels are scaled to `[0, 1]` by dividing by 255.

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::path::Path;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], off: usize, what: &str) -> Result<u32> {
    let end = off + 4;
    if end > bytes.len() {
        return Err(Error::format(format!("{what}: file truncated at byte {off}")));
    }
    Ok(u32::from_be_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]]))
}

fn parse_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = read_u32_be(bytes, 0, "image file")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::format(format!(
            "image file magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"
        )));
    }
    let count = read_u32_be(bytes, 4, "image file")? as usize;
    let h = read_u32_be(bytes, 8, "image file")? as usize;
    let w = read_u32_be(bytes, 12, "image file")? as usize;
    let payload = &bytes[16..];
    let expected = count * h * w;
    if payload.len() != expected {
        return Err(Error::format(format!(
            "image payload holds {} bytes, header promises {expected}",
            payload.len()
        )));
    }
    Ok((count, h, w, payload))
}

fn parse_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = read_u32_be(bytes, 0, "label file")?;
    if magic != LABEL_MAGIC {
        return Err(Error::format(format!(
            "label file magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"
        )));
    }
    let count = read_u32_be(bytes, 4, "label file")? as usize;
    let payload = &bytes[8..];
    if payload.len() != count {
        return Err(Error::format(format!(
            "label payload holds {} bytes, header promises {count}",
            payload.len()
        )));
    }
    Ok(payload)
}

/// Load an image/label IDX pair into a dataset of shape `[N, 1, H, W]`
/// with pixel values in `[0, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    for p in [images_path, labels_path] {
        if !p.exists() {
            return Err(Error::MissingFile(p.display().to_string()));
        }
    }
    let image_bytes = std::fs::read(images_path)?;
    let label_bytes = std::fs::read(labels_path)?;
    let (count, h, w, pixels) = parse_images(&image_bytes)?;
    let labels = parse_labels(&label_bytes)?;
    if labels.len() != count {
        return Err(Error::format(format!(
            "{count} images but {} labels",
            labels.len()
        )));
    }
    let data: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let x = Tensor::from_vec(&[count, 1, h, w], data)?;
    Ok(Dataset {
        x,
        labels: Some(labels.to_vec()),
        z_true: None,
        sample_ids: (0..count as u64).collect(),
        unit_range: true,
    })
}

/// Write `[N, 1, H, W]` unit-range images as an IDX u8 file.
pub fn write_idx_images(path: &Path, x: &Tensor) -> Result<()> {
    let (count, h, w) = match x.shape() {
        [n, 1, h, w] => (*n, *h, *w),
        other => {
            return Err(Error::shape(format!(
                "idx image export expects [N, 1, H, W], got {other:?}"
            )))
        }
    };
    let mut bytes = Vec::with_capacity(16 + count * h * w);
    bytes.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(count as u32).to_be_bytes());
    bytes.extend_from_slice(&(h as u32).to_be_bytes());
    bytes.extend_from_slice(&(w as u32).to_be_bytes());
    for &v in x.data() {
        bytes.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    std::fs::write(path, bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn crafted_pair(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
        // One 2x2 image with pixels 0, 255, 128, 64 and label 7.
        let mut img = Vec::new();
        img.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        img.extend_from_slice(&1u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&[0, 255, 128, 64]);
        let mut lbl = Vec::new();
        lbl.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        lbl.extend_from_slice(&1u32.to_be_bytes());
        lbl.push(7);
        let ip = dir.join("img.idx");
        let lp = dir.join("lbl.idx");
        std::fs::write(&ip, img).unwrap();
        std::fs::write(&lp, lbl).unwrap();
        (ip, lp)
    }

    #[test]
    fn crafted_fixture_parses_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = crafted_pair(dir.path());
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.x.shape(), &[1, 1, 2, 2]);
        assert_eq!(ds.x.data(), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
        assert_eq!(ds.labels.as_deref(), Some(&[7u8][..]));
        assert!(ds.unit_range);
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = crafted_pair(dir.path());
        let mut bytes = std::fs::read(&ip).unwrap();
        bytes[3] = 0x00;
        std::fs::write(&ip, bytes).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Format(_))));
    }

    #[test]
    fn empty_image_set_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Vec::new();
        img.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        img.extend_from_slice(&0u32.to_be_bytes());
        img.extend_from_slice(&28u32.to_be_bytes());
        img.extend_from_slice(&28u32.to_be_bytes());
        let mut lbl = Vec::new();
        lbl.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        lbl.extend_from_slice(&0u32.to_be_bytes());
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lbl.idx");
        std::fs::write(&ip, img).unwrap();
        std::fs::write(&lp, lbl).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn truncated_payload_is_a_length_error() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = crafted_pair(dir.path());
        let mut bytes = std::fs::read(&ip).unwrap();
        bytes.pop();
        std::fs::write(&ip, bytes).unwrap();
        let err = load_idx(&ip, &lp).unwrap_err();
        assert!(err.to_string().contains("payload"), "{err}");
    }

    #[test]
    fn count_mismatch_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = crafted_pair(dir.path());
        let mut bytes = std::fs::read(&lp).unwrap();
        bytes.extend_from_slice(&[3, 4]); // extra labels
        bytes[4..8].copy_from_slice(&3u32.to_be_bytes());
        std::fs::write(&lp, bytes).unwrap();
        let err = load_idx(&ip, &lp).unwrap_err();
        assert!(err.to_string().contains("labels"), "{err}");
    }

    #[test]
    fn image_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let x = Tensor::from_vec(&[2, 1, 2, 2], vec![0.0, 1.0, 0.5, 0.25, 1.0, 0.0, 0.75, 0.1])
            .unwrap();
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lbl.idx");
        write_idx_images(&ip, &x).unwrap();
        write_idx_labels(&lp, &[1, 2]).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.x.shape(), &[2, 1, 2, 2]);
        // Quantized to u8 and back.
        for (orig, loaded) in x.data().iter().zip(ds.x.data()) {
            assert!((orig - loaded).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}
