//! Binary checkpoints: `GTHEFT01`, then per tensor
//! `name_len u32 | name | rows u32 | cols u32 | rows*cols f64`, all little
//! endian, then a `u32` zero as terminator and a JSON trailer to end of file.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::numcore::{ParamSet, Tensor2};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GTHEFT01";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointTrailer {
    pub method: String,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor2)>,
    pub trailer: CheckpointTrailer,
}

impl Checkpoint {
    /// Snapshot of `params` in insertion order.
    pub fn from_params<'a>(sets: impl IntoIterator<Item = &'a ParamSet>, trailer: CheckpointTrailer) -> Self {
        let tensors = sets
            .into_iter()
            .flat_map(|p| p.iter().map(|(name, t)| (name.to_string(), t.clone())))
            .collect();
        Self { tensors, trailer }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor2> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Tensors whose names start with `prefix`, in order.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a Tensor2)> + 'a {
        self.tensors
            .iter()
            .filter(move |(n, _)| n.starts_with(prefix))
            .map(|(n, t)| (n.as_str(), t))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = CHECKPOINT_MAGIC.to_vec();
        for (name, t) in &self.tensors {
            assert!(!name.is_empty(), "tensor names must be non-empty");
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
            for v in t.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&0u32.to_le_bytes());
        out.extend_from_slice(serde_json::to_string(&self.trailer).expect("trailer serializes").as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HarnessError> {
        let bad = |m: &str| HarnessError::Checkpoint(m.to_string());
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |r: &mut &[u8]| -> Result<u32, HarnessError> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| bad("truncated record"))?;
            Ok(u32::from_le_bytes(b))
        };
        let mut tensors = Vec::new();
        loop {
            let len = u32_at(&mut r)? as usize;
            if len == 0 {
                break;
            }
            if r.len() < len {
                return Err(bad("truncated name"));
            }
            let name = std::str::from_utf8(&r[..len]).map_err(|_| bad("name is not UTF-8"))?.to_string();
            r = &r[len..];
            let rows = u32_at(&mut r)? as usize;
            let cols = u32_at(&mut r)? as usize;
            let count = rows.checked_mul(cols).ok_or_else(|| bad("shape overflow"))?;
            if r.len() / 8 < count {
                return Err(bad("truncated tensor data"));
            }
            let data = r[..8 * count]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            r = &r[8 * count..];
            tensors.push((name, Tensor2::from_vec(rows, cols, data)?));
        }
        let trailer = serde_json::from_slice(r).map_err(|e| HarnessError::Checkpoint(format!("trailer: {e}")))?;
        Ok(Self { tensors, trailer })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), HarnessError> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
        }
        let mut f = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| HarnessError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            tensors: vec![
                ("enc.l0.w_self".into(), Tensor2::from_vec(2, 3, vec![1.0, -2.5, 0.0, 1e-300, f64::MAX, -0.0]).unwrap()),
                ("gpf.p".into(), Tensor2::row_vector(&[0.25, 0.5])),
            ],
            trailer: CheckpointTrailer {
                method: "graphcl+gpf".into(),
                config_hash: "ab".repeat(32),
            },
        }
    }

    #[test]
    fn layout_matches_format() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..8], b"GTHEFT01");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 13);
        assert_eq!(&bytes[12..25], b"enc.l0.w_self");
        assert_eq!(u32::from_le_bytes(bytes[25..29].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[29..33].try_into().unwrap()), 3);
        assert_eq!(f64::from_le_bytes(bytes[33..41].try_into().unwrap()), 1.0);
        let trailer_start = bytes.len() - serde_json::to_vec(&sample().trailer).unwrap().len();
        assert_eq!(&bytes[trailer_start - 4..trailer_start], &[0, 0, 0, 0]);
        assert_eq!(bytes[trailer_start], b'{');
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.trailer, ck.trailer);
        for ((n1, t1), (n2, t2)) in ck.tensors.iter().zip(&back.tensors) {
            assert_eq!(n1, n2);
            let bits = |t: &Tensor2| t.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(t1), bits(t2));
        }
        assert_eq!(back.to_bytes(), ck.to_bytes());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        sample().save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), sample());
    }

    #[test]
    fn corrupt_input_rejected() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(b"GTHEFT02").is_err());
        assert!(Checkpoint::from_bytes(&bytes[..40]).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_tensors_round_trip(
            shapes in prop::collection::vec((1usize..4, 1usize..4), 0..4),
            fill in -1e6f64..1e6,
        ) {
            let tensors: Vec<_> = shapes
                .iter()
                .enumerate()
                .map(|(i, &(r, c))| (format!("t{i}"), Tensor2::filled(r, c, fill + i as f64)))
                .collect();
            let ck = Checkpoint {
                tensors,
                trailer: CheckpointTrailer { method: "m".into(), config_hash: "h".into() },
            };
            prop_assert_eq!(Checkpoint::from_bytes(&ck.to_bytes()).unwrap(), ck);
        }
    }
}
