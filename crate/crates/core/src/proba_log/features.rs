use std::path::Path;

use super::{ByteReader, FormatError};
use crate::fsutil;

const MAGIC: &[u8; 4] = b"CFT1";
const VERSION: u32 = 1;

/// Row-major feature matrix stored in the same little-endian f32 convention
/// as CPL logs: magic `CFT1`, version, sample count, feature count, a
/// length-prefixed name, then the values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub name: String,
    pub n_samples: usize,
    pub n_features: usize,
    pub values: Vec<f32>,
}

impl FeatureTensor {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let name = self.name.as_bytes();
        let mut out = Vec::with_capacity(18 + name.len() + 4 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n_samples as u32).to_le_bytes());
        out.extend_from_slice(&(self.n_features as u32).to_le_bytes());
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = ByteReader::new(bytes);
        if r.take(4).map_err(|_| FormatError::BadMagic { expected: "CFT1" })? != MAGIC {
            return Err(FormatError::BadMagic { expected: "CFT1" });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let n_samples = r.u32()? as usize;
        let n_features = r.u32()? as usize;
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| FormatError::BadModelId)?
            .to_owned();
        if n_samples == 0 {
            return Err(FormatError::DimensionZero("n_samples"));
        }
        if n_features == 0 {
            return Err(FormatError::DimensionZero("n_features"));
        }
        let count = n_samples
            .checked_mul(n_features)
            .ok_or(FormatError::DimensionOverflow("n_samples * n_features"))?;
        let values = r.f32_vec(count)?;
        if r.remaining() > 0 {
            return Err(FormatError::TrailingBytes(r.remaining()));
        }
        if let Some((i, _)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(FormatError::NonFinite {
                epoch: 0,
                sample: i / n_features,
            });
        }
        Ok(Self {
            name,
            n_samples,
            n_features,
            values,
        })
    }
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureTensor, FormatError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| FormatError::io(path, e))?;
    FeatureTensor::from_bytes(&bytes)
}

pub fn write_features(t: &FeatureTensor, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let path = path.as_ref();
    fsutil::write_bytes_atomic(path, &t.to_bytes()).map_err(|e| FormatError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let t = FeatureTensor {
            name: "id".into(),
            n_samples: 2,
            n_features: 3,
            values: vec![1.0, -2.5, 0.0, 3.25, 1e-7, -0.0],
        };
        let back = FeatureTensor::from_bytes(&t.to_bytes()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.row(1), &[3.25, 1e-7, -0.0]);
    }

    #[test]
    fn rejects_cpl_magic() {
        let mut bytes = b"CPL1".to_vec();
        bytes.extend_from_slice(&[0; 20]);
        assert!(matches!(
            FeatureTensor::from_bytes(&bytes),
            Err(FormatError::BadMagic { expected: "CFT1" })
        ));
    }
}
