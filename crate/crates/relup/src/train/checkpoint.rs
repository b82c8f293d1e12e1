//! Flat binary checkpoint of named parameter tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes   "RUPC"
//! version u32       currently 1
//! count   u32       number of entries
//! entry := name_len u32, name bytes (utf-8),
//!          ndim u32, dims u64 * ndim,
//!          data f64 * product(dims)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::tensor::Tensor;

use super::TrainError;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"RUPC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Plain-data copy of a parameter set; safe to move across threads and the
/// unit of both early-stopping snapshots and on-disk checkpoints.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSnapshot {
    pub entries: Vec<SnapshotEntry>,
}

impl ParamSnapshot {
    pub fn from_named(named: &[(String, Tensor)]) -> Self {
        ParamSnapshot {
            entries: named
                .iter()
                .map(|(name, t)| SnapshotEntry {
                    name: name.clone(),
                    shape: t.shape(),
                    data: t.data_vec(),
                })
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&SnapshotEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Scalar convenience accessor for metadata entries.
    pub fn get_scalar(&self, name: &str) -> Option<f64> {
        self.get(name).and_then(|e| e.data.first().copied())
    }

    pub fn push_scalar(&mut self, name: &str, value: f64) {
        self.entries.push(SnapshotEntry {
            name: name.to_string(),
            shape: vec![1],
            data: vec![value],
        });
    }

    /// Writes the stored values back into matching named tensors.
    pub fn restore(&self, named: &[(String, Tensor)]) -> Result<(), TrainError> {
        for (name, t) in named {
            let entry = self
                .get(name)
                .ok_or_else(|| TrainError::Checkpoint(format!("missing parameter {name:?}")))?;
            if entry.data.len() != t.numel() {
                return Err(TrainError::Checkpoint(format!(
                    "parameter {name:?} holds {} values, tensor expects {}",
                    entry.data.len(),
                    t.numel()
                )));
            }
            t.set_data(&entry.data);
        }
        Ok(())
    }

    /// Order-insensitive content checksum, used to assert which parameter
    /// set produced a reported metric.
    pub fn checksum(&self) -> u64 {
        let mut acc = 0u64;
        for e in &self.entries {
            let mut h = 1469598103934665603u64; // FNV offset basis
            for b in e.name.as_bytes() {
                h = (h ^ *b as u64).wrapping_mul(1099511628211);
            }
            for v in &e.data {
                h = (h ^ v.to_bits()).wrapping_mul(1099511628211);
            }
            acc = acc.wrapping_add(h);
        }
        acc
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for e in &self.entries {
            w.write_all(&(e.name.len() as u32).to_le_bytes())?;
            w.write_all(e.name.as_bytes())?;
            w.write_all(&(e.shape.len() as u32).to_le_bytes())?;
            for &d in &e.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in &e.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(TrainError::Checkpoint(format!(
                "{}: bad magic {:?}",
                path.display(),
                magic
            )));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(TrainError::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let count = read_u32(&mut r)? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| TrainError::Checkpoint("non-utf8 parameter name".into()))?;
            let ndim = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut buf = [0u8; 8];
                r.read_exact(&mut buf)?;
                shape.push(u64::from_le_bytes(buf) as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                let mut buf = [0u8; 8];
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            entries.push(SnapshotEntry { name, shape, data });
        }
        Ok(ParamSnapshot { entries })
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32, TrainError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_roundtrip_is_bit_exact() {
        let snap = ParamSnapshot {
            entries: vec![
                SnapshotEntry {
                    name: "layer.weight".into(),
                    shape: vec![2, 3],
                    data: vec![0.1, -0.2, 0.3, f64::MIN_POSITIVE, 1e300, -0.0],
                },
                SnapshotEntry {
                    name: "layer.bias".into(),
                    shape: vec![3],
                    data: vec![1.0, 2.0, 3.0],
                },
            ],
        };
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("ckpt.bin");
        snap.save(&path).unwrap();
        let loaded = ParamSnapshot::load(&path).unwrap();
        assert_eq!(loaded.entries.len(), 2);
        for (a, b) in snap.entries.iter().zip(&loaded.entries) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            let ab: Vec<u64> = a.data.iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("junk.bin");
        std::fs::write(&path, b"NOPE----").unwrap();
        assert!(matches!(ParamSnapshot::load(&path), Err(TrainError::Checkpoint(_))));
    }

    #[test]
    fn restore_writes_values_back() {
        let t = Tensor::zeros(vec![2]).requires_grad(true);
        let named = vec![("p".to_string(), t.clone())];
        let mut snap = ParamSnapshot::from_named(&named);
        snap.entries[0].data = vec![4.0, 5.0];
        snap.restore(&named).unwrap();
        assert_eq!(t.data_vec(), vec![4.0, 5.0]);
    }

    #[test]
    fn checksum_tracks_content() {
        let t = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let named = vec![("p".to_string(), t.clone())];
        let a = ParamSnapshot::from_named(&named).checksum();
        t.set_data(&[1.0, 2.5]);
        let b = ParamSnapshot::from_named(&named).checksum();
        assert_ne!(a, b);
    }
}
