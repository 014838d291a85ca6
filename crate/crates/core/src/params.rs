//! Flat parameter vectors and their on-disk layout.
//!
//! A [`ParameterVector`] is the unit exchanged between clients and the
//! server: aggregation, encryption and fusion all operate on it. The
//! [`Manifest`] records which named tensor occupies which span.
//!
//! Serialized layout (all integers little-endian):
//!
//! ```text
//! magic   "EPFLPV1"                      7 bytes
//! entries u32
//!   name_len u16, name utf-8, ndim u32, dims u64 * ndim    (per entry)
//! count   u64                            total scalar count
//! values  f64 * count
//! ```

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PARAMS_MAGIC: &[u8; 7] = b"EPFLPV1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered list of the tensors packed into a parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<TensorEntry>,
}

impl Manifest {
    pub fn new(entries: Vec<TensorEntry>) -> Self {
        Self { entries }
    }

    /// A single anonymous tensor of length `d`.
    pub fn flat(d: usize) -> Self {
        Self::new(vec![TensorEntry {
            name: "flat".into(),
            shape: vec![d],
        }])
    }

    pub fn total_len(&self) -> usize {
        self.entries.iter().map(TensorEntry::len).sum()
    }

    /// Start offset and length of the named tensor.
    pub fn span(&self, name: &str) -> Option<(usize, usize)> {
        let mut offset = 0;
        for e in &self.entries {
            if e.name == name {
                return Some((offset, e.len()));
            }
            offset += e.len();
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParameterVector {
    pub values: Vec<f64>,
}

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(d: usize) -> Self {
        Self::new(vec![0.0; d])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn linf_distance(&self, other: &ParameterVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sub(&self, other: &ParameterVector) -> Result<ParameterVector> {
        ensure_same_len("ParameterVector::sub", self, other)?;
        Ok(ParameterVector::new(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        ))
    }

    pub fn scaled(&self, factor: f64) -> ParameterVector {
        ParameterVector::new(self.values.iter().map(|v| v * factor).collect())
    }
}

impl From<Vec<f64>> for ParameterVector {
    fn from(values: Vec<f64>) -> Self {
        Self::new(values)
    }
}

pub(crate) fn ensure_same_len(
    context: &'static str,
    a: &ParameterVector,
    b: &ParameterVector,
) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            context,
            expected: a.len().to_string(),
            actual: b.len().to_string(),
        });
    }
    Ok(())
}

/// A parameter vector together with the manifest that describes it.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterFile {
    pub manifest: Arc<Manifest>,
    pub vector: ParameterVector,
}

impl ParameterFile {
    pub fn new(manifest: Arc<Manifest>, vector: ParameterVector) -> Result<Self> {
        if manifest.total_len() != vector.len() {
            return Err(Error::ShapeMismatch {
                context: "ParameterFile",
                expected: manifest.total_len().to_string(),
                actual: vector.len().to_string(),
            });
        }
        Ok(Self { manifest, vector })
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(PARAMS_MAGIC)?;
        w.write_all(&(self.manifest.entries.len() as u32).to_le_bytes())?;
        for e in &self.manifest.entries {
            let name = e.name.as_bytes();
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(e.shape.len() as u32).to_le_bytes())?;
            for d in &e.shape {
                w.write_all(&(*d as u64).to_le_bytes())?;
            }
        }
        w.write_all(&(self.vector.len() as u64).to_le_bytes())?;
        for v in &self.vector.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.vector.len() * 8);
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let fmt = |e: std::io::Error| Error::format("parameter file", e.to_string());
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic).map_err(fmt)?;
        if &magic != PARAMS_MAGIC {
            return Err(Error::format("parameter file", "bad magic"));
        }
        let n_entries = read_u32(r).map_err(fmt)? as usize;
        let mut entries = Vec::with_capacity(n_entries.min(1024));
        for _ in 0..n_entries {
            let mut len = [0u8; 2];
            r.read_exact(&mut len).map_err(fmt)?;
            let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
            r.read_exact(&mut name).map_err(fmt)?;
            let name = String::from_utf8(name)
                .map_err(|e| Error::format("parameter file", e.to_string()))?;
            let ndim = read_u32(r).map_err(fmt)? as usize;
            let mut shape = Vec::with_capacity(ndim.min(8));
            for _ in 0..ndim {
                shape.push(read_u64(r).map_err(fmt)? as usize);
            }
            entries.push(TensorEntry { name, shape });
        }
        let count = read_u64(r).map_err(fmt)? as usize;
        let manifest = Manifest::new(entries);
        if manifest.total_len() != count {
            return Err(Error::format(
                "parameter file",
                format!("manifest covers {} values, file holds {count}", manifest.total_len()),
            ));
        }
        let mut values = Vec::with_capacity(count);
        let mut buf = [0u8; 8];
        for _ in 0..count {
            r.read_exact(&mut buf).map_err(fmt)?;
            values.push(f64::from_le_bytes(buf));
        }
        Ok(Self {
            manifest: Arc::new(manifest),
            vector: ParameterVector::new(values),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut bytes.as_slice())
    }
}

pub(crate) fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn span_lookup() {
        let m = Manifest::new(vec![
            TensorEntry { name: "a".into(), shape: vec![2, 3] },
            TensorEntry { name: "b".into(), shape: vec![4] },
        ]);
        assert_eq!(m.total_len(), 10);
        assert_eq!(m.span("b"), Some((6, 4)));
        assert_eq!(m.span("c"), None);
    }

    #[test]
    fn rejects_truncated_and_bad_magic() {
        let f = ParameterFile::new(Arc::new(Manifest::flat(3)), vec![1.0, 2.0, 3.0].into()).unwrap();
        let bytes = f.to_bytes();
        assert!(ParameterFile::read_from(&mut &bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ParameterFile::read_from(&mut bad.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn serialization_round_trips(values in prop::collection::vec(-1e6f64..1e6, 0..64)) {
            let d = values.len();
            let f = ParameterFile::new(Arc::new(Manifest::flat(d)), values.into()).unwrap();
            let back = ParameterFile::read_from(&mut f.to_bytes().as_slice()).unwrap();
            prop_assert_eq!(back, f);
        }
    }
}
