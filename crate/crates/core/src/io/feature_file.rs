//! Per-video feature files.
//!
//! Layout, all integers little-endian:
//!
//! | field        | type                 |
//! |--------------|----------------------|
//! | magic        | `b"GCNF"`            |
//! | version      | `u32` (= 1)          |
//! | id length    | `u32`                |
//! | id           | UTF-8 bytes          |
//! | label `Y`    | `u8` (0 or 1)        |
//! | `N`          | `u32` snippets       |
//! | `d`          | `u32` feature width  |
//! | payload      | `N * d` `f32`, row-major |
//!
//! An optional ground-truth block follows: the marker byte `0x01` and then
//! `N` bytes, each 0 or 1. A file that ends after the payload has no
//! ground truth.

use std::path::Path;

use ndarray::Array2;

use super::Cursor;
use crate::error::{Error, Result};
use crate::graphs::FeatureMatrix;
use crate::synthdata::VideoBag;

pub const MAGIC: &[u8; 4] = b"GCNF";
pub const VERSION: u32 = 1;
pub const GROUND_TRUTH_MARKER: u8 = 0x01;

pub fn encode(bag: &VideoBag) -> Vec<u8> {
    let x = bag.features.as_array();
    let (n, d) = x.dim();
    let mut out = Vec::with_capacity(32 + bag.id.len() + n * d * 4 + n + 1);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    super::put_string(&mut out, &bag.id);
    out.push(bag.label);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for &v in x.iter() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    if let Some(gt) = &bag.ground_truth {
        out.push(GROUND_TRUTH_MARKER);
        out.extend_from_slice(gt);
    }
    out
}

pub fn decode(buf: &[u8]) -> Result<VideoBag> {
    let mut c = Cursor::new(buf);
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "bad magic: not a GCNF feature file".into(),
        });
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::Parse {
            offset: 4,
            message: format!("unsupported feature file version {version}"),
        });
    }
    let id = c.string("video id")?;
    let label_at = c.offset();
    let label = c.u8("label")?;
    if label > 1 {
        return Err(Error::Parse {
            offset: label_at,
            message: format!("label must be 0 or 1, got {label}"),
        });
    }
    let n = c.u32("snippet count")? as usize;
    let d = c.u32("feature width")? as usize;
    let payload_len = n
        .checked_mul(d)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| c.error("payload size overflows"))?;
    let payload = c.take(payload_len, "payload")?;
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
        .collect();
    let data = Array2::from_shape_vec((n, d), values).map_err(|e| c.error(e.to_string()))?;
    let features = FeatureMatrix::new(data).map_err(|e| c.error(e.to_string()))?;

    let ground_truth = if c.remaining() == 0 {
        None
    } else {
        let marker_at = c.offset();
        let marker = c.u8("ground-truth marker")?;
        if marker != GROUND_TRUTH_MARKER {
            return Err(Error::Parse {
                offset: marker_at,
                message: format!("unexpected byte {marker:#04x} after payload"),
            });
        }
        let gt_at = c.offset();
        let gt = c.take(n, "ground truth")?.to_vec();
        if let Some(i) = gt.iter().position(|&g| g > 1) {
            return Err(Error::Parse {
                offset: gt_at + i as u64,
                message: "ground truth must be 0 or 1".into(),
            });
        }
        if c.remaining() != 0 {
            return Err(c.error(format!("{} trailing bytes", c.remaining())));
        }
        Some(gt)
    };
    Ok(VideoBag {
        id,
        label,
        features,
        ground_truth,
    })
}

pub fn save_feature_file(path: impl AsRef<Path>, bag: &VideoBag) -> Result<()> {
    std::fs::write(path, encode(bag))?;
    Ok(())
}

pub fn load_feature_file(path: impl AsRef<Path>) -> Result<VideoBag> {
    decode(&std::fs::read(path)?)
}

/// Loads every `*.gcnf` file in `dir`, sorted by file name.
pub fn load_dir(dir: impl AsRef<Path>) -> Result<Vec<VideoBag>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "gcnf"));
    paths.sort();
    paths.iter().map(load_feature_file).collect()
}

/// Writes one `<id>.gcnf` file per bag. Ground truth is written only when
/// `with_ground_truth` is set.
pub fn save_dir(dir: impl AsRef<Path>, bags: &[VideoBag], with_ground_truth: bool) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for bag in bags {
        let stored;
        let bag = if with_ground_truth || bag.ground_truth.is_none() {
            bag
        } else {
            stored = VideoBag {
                ground_truth: None,
                ..bag.clone()
            };
            &stored
        };
        save_feature_file(dir.join(format!("{}.gcnf", bag.id)), bag)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bag(gt: bool) -> VideoBag {
        VideoBag {
            id: "clip-7".into(),
            label: 1,
            features: FeatureMatrix::from_rows(&[vec![0.5, -1.25], vec![3.0, 0.0], vec![1e-3, 2.5]]).unwrap(),
            ground_truth: gt.then(|| vec![0, 1, 1]),
        }
    }

    #[test]
    fn roundtrip_with_and_without_ground_truth() {
        for gt in [true, false] {
            let b = bag(gt);
            let back = decode(&encode(&b)).unwrap();
            assert_eq!(back.id, b.id);
            assert_eq!(back.label, b.label);
            assert_eq!(back.ground_truth, b.ground_truth);
            for (x, y) in back.features.as_array().iter().zip(b.features.as_array()) {
                assert_eq!((*x as f32).to_bits(), (*y as f32).to_bits());
            }
        }
    }

    #[test]
    fn truncated_payload_names_lengths() {
        let bytes = encode(&bag(false));
        let err = decode(&bytes[..bytes.len() - 5]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected 24 bytes, found 19"), "{msg}");
        assert!(matches!(err, Error::Parse { offset: 27, .. }), "{err:?}");
    }

    #[test]
    fn wrong_magic_is_rejected_first() {
        let mut bytes = encode(&bag(true));
        bytes[0] = b'X';
        bytes.truncate(6);
        let err = decode(&bytes).unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 0, .. }));
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn bad_version_and_trailing_garbage() {
        let mut bytes = encode(&bag(false));
        bytes[4] = 9;
        assert!(decode(&bytes).unwrap_err().to_string().contains("version"));

        let mut bytes = encode(&bag(false));
        bytes.push(0x07);
        assert!(decode(&bytes).unwrap_err().to_string().contains("unexpected byte"));

        let mut bytes = encode(&bag(true));
        bytes.push(0);
        assert!(decode(&bytes).unwrap_err().to_string().contains("trailing"));
    }
}
