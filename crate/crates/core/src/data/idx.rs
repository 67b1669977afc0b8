use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX3_MAGIC: u32 = 0x0000_0803;

/// Decodes an IDX3 byte buffer into `[n, rows, cols]` with values in [0, 1].
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor> {
    let word = |at: usize| -> Result<u32> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| Error::Format {
                offset: at,
                msg: "truncated IDX header".into(),
            })
    };
    let magic = word(0)?;
    if magic != IDX3_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("bad magic 0x{magic:08x}, expected 0x{IDX3_MAGIC:08x}"),
        });
    }
    let n = word(4)? as usize;
    let rows = word(8)? as usize;
    let cols = word(12)? as usize;
    let need = n * rows * cols;
    let payload = &bytes[16..];
    if payload.len() < need {
        return Err(Error::Format {
            offset: 16 + payload.len(),
            msg: format!("truncated payload: {need} pixel bytes expected, {} present", payload.len()),
        });
    }
    let data = payload[..need].iter().map(|&b| b as f64 / 255.0).collect();
    Ok(Tensor::from_vec(&[n, rows, cols], data))
}

pub fn load_idx_images(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx_images(&bytes)
}

/// Encodes `[n, rows, cols]` values in [0, 1] as IDX3, rounding to 8 bits.
pub fn encode_idx_images(images: &Tensor) -> Result<Vec<u8>> {
    if images.ndim() != 3 {
        return Err(Error::contract(format!(
            "IDX3 needs [n, rows, cols], got {:?}",
            images.shape()
        )));
    }
    let mut out = Vec::with_capacity(16 + images.len());
    out.extend_from_slice(&IDX3_MAGIC.to_be_bytes());
    for &d in images.shape() {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend(images.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn save_idx_images(path: &Path, images: &Tensor) -> Result<()> {
    std::fs::write(path, encode_idx_images(images)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(n: u32, r: u32, c: u32, px: &[u8]) -> Vec<u8> {
        let mut b = IDX3_MAGIC.to_be_bytes().to_vec();
        for d in [n, r, c] {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b.extend_from_slice(px);
        b
    }

    #[test]
    fn crafted_two_by_two() {
        let t = parse_idx_images(&fixture(1, 2, 2, &[0, 255, 128, 64])).unwrap();
        assert_eq!(t.shape(), &[1, 2, 2]);
        let want = [0.0, 1.0, 0.50196, 0.25098];
        for (a, b) in t.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn empty_payload() {
        let t = parse_idx_images(&fixture(0, 28, 28, &[])).unwrap();
        assert_eq!(t.len(), 0);
    }

    #[test]
    fn wrong_magic_names_expected() {
        let mut b = fixture(1, 1, 1, &[0]);
        b[3] = 0x01;
        let e = parse_idx_images(&b).unwrap_err().to_string();
        assert!(e.contains("0x00000803"), "{e}");
    }

    #[test]
    fn truncated_reports_offset() {
        let e = parse_idx_images(&fixture(2, 2, 2, &[1, 2, 3])).unwrap_err();
        assert!(matches!(e, Error::Format { offset: 19, .. }), "{e}");
    }
}
