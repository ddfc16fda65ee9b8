//! `MQAF` feature files: a 16-byte header (`"MQAF"`, version, `c`, `l`, all
//! little-endian `u32`) followed by `c·l` little-endian `f32` values in
//! row-major order.

use std::fs;
use std::path::Path;

use crate::diffcore::Matrix;
use crate::error::{Error, FormatError, Result};

pub const FEATURE_MAGIC: [u8; 4] = *b"MQAF";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

pub fn encode_feature(features: &Matrix) -> Result<Vec<u8>> {
    let (c, l) = features.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * c * l);
    out.extend_from_slice(&FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(c as u32).to_le_bytes());
    out.extend_from_slice(&(l as u32).to_le_bytes());
    for (i, &v) in features.as_slice().iter().enumerate() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::Numeric(format!(
                "feature value {v} at index {i} is not representable as a finite f32"
            )));
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(out)
}

fn u32_at(bytes: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes"))
}

/// Decodes a feature file image; `path` is only used in error messages.
pub fn decode_feature(bytes: &[u8], path: &Path) -> Result<Matrix> {
    if bytes.len() < 4 {
        return Err(FormatError::Truncated {
            path: path.into(),
            expected: HEADER_LEN,
            found: bytes.len(),
        }
        .into());
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if magic != FEATURE_MAGIC {
        return Err(FormatError::BadMagic {
            path: path.into(),
            expected: FEATURE_MAGIC,
            found: magic,
        }
        .into());
    }
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Truncated {
            path: path.into(),
            expected: HEADER_LEN,
            found: bytes.len(),
        }
        .into());
    }
    let version = u32_at(bytes, 4);
    if version != FEATURE_VERSION {
        return Err(FormatError::BadVersion {
            path: path.into(),
            expected: FEATURE_VERSION,
            found: version,
        }
        .into());
    }
    let c = u32_at(bytes, 8) as usize;
    let l = u32_at(bytes, 12) as usize;
    let expected = c
        .checked_mul(l)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| FormatError::Header {
            path: path.into(),
            message: format!("dimensions {c}×{l} overflow"),
        })?;
    if bytes.len() < expected {
        return Err(FormatError::Truncated {
            path: path.into(),
            expected,
            found: bytes.len(),
        }
        .into());
    }
    if bytes.len() > expected {
        return Err(FormatError::Header {
            path: path.into(),
            message: format!(
                "{} trailing bytes after a {c}×{l} payload",
                bytes.len() - expected
            ),
        }
        .into());
    }
    if c == 0 || l == 0 {
        return Err(FormatError::Header {
            path: path.into(),
            message: format!("empty feature map {c}×{l}"),
        }
        .into());
    }
    let mut data = Vec::with_capacity(c * l);
    for (index, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(FormatError::NonFinite {
                path: path.into(),
                index,
            }
            .into());
        }
        data.push(f64::from(v));
    }
    Matrix::from_vec(c, l, data)
}

pub fn read_feature_file(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature(&bytes, path)
}

pub fn write_feature_file(path: &Path, features: &Matrix) -> Result<()> {
    let bytes = encode_feature(features)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Matrix {
        Matrix::from_vec(3, 5, (0..15).map(|i| (i as f64 - 7.0) * 0.37).collect()).unwrap()
    }

    #[test]
    fn round_trip_at_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.mqaf");
        let m = sample();
        write_feature_file(&path, &m).unwrap();
        let back = read_feature_file(&path).unwrap();
        assert_eq!(back.shape(), (3, 5));
        for (a, b) in m.as_slice().iter().zip(back.as_slice()) {
            assert_eq!(*a as f32, *b as f32);
        }
    }

    #[test]
    fn header_layout_is_bit_exact() {
        let bytes = encode_feature(&Matrix::from_rows(&[[1.0, -2.0]])).unwrap();
        assert_eq!(&bytes[..4], b"MQAF");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &[2, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[20..24], &(-2.0f32).to_le_bytes());
        assert_eq!(bytes.len(), 24);
    }

    #[test]
    fn distinct_errors() {
        let p = Path::new("f.mqaf");
        let good = encode_feature(&sample()).unwrap();

        let mut bad = good.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            decode_feature(&bad, p),
            Err(Error::Format(FormatError::BadMagic { .. }))
        ));

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(
            decode_feature(&bad, p),
            Err(Error::Format(FormatError::BadVersion { found: 2, .. }))
        ));

        let short = &good[..good.len() - 1];
        assert!(matches!(
            decode_feature(short, p),
            Err(Error::Format(FormatError::Truncated { .. }))
        ));

        let mut bad = good.clone();
        bad[16..20].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(
            decode_feature(&bad, p),
            Err(Error::Format(FormatError::NonFinite { index: 0, .. }))
        ));

        let mut long = good.clone();
        long.push(0);
        assert!(matches!(
            decode_feature(&long, p),
            Err(Error::Format(FormatError::Header { .. }))
        ));
    }

    #[test]
    fn unrepresentable_values_rejected_on_write() {
        let m = Matrix::from_rows(&[[1e300]]);
        assert!(matches!(encode_feature(&m), Err(Error::Numeric(_))));
    }
}
