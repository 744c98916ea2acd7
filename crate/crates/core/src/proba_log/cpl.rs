use std::path::Path;

use super::{ByteReader, FormatError};
use crate::fsutil;

const MAGIC: &[u8; 4] = b"CPL1";
const VERSION: u32 = 1;

/// Maximum |row sum - 1| accepted at load time (closed interval).
pub const ROW_SUM_TOLERANCE: f64 = 1e-3;

/// Rows deviating from 1 by more than this are rescaled at load time.
const RENORM_THRESHOLD: f64 = 1e-6;

/// One model run's class probabilities for one dataset, stored
/// epoch-major, then sample, with classes fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbLog {
    model_id: String,
    n_epochs: usize,
    n_samples: usize,
    n_classes: usize,
    probs: Vec<f32>,
}

impl ProbLog {
    /// Validates every row and rescales rows whose sum is within tolerance
    /// but not within 1e-6 of one.
    pub fn new(
        model_id: impl Into<String>,
        n_epochs: usize,
        n_samples: usize,
        n_classes: usize,
        mut probs: Vec<f32>,
    ) -> Result<Self, FormatError> {
        if n_epochs == 0 {
            return Err(FormatError::DimensionZero("n_epochs"));
        }
        if n_samples == 0 {
            return Err(FormatError::DimensionZero("n_samples"));
        }
        if n_classes == 0 {
            return Err(FormatError::DimensionZero("n_classes"));
        }
        if n_classes < 2 {
            return Err(FormatError::TooFewClasses(n_classes));
        }
        let expected = n_epochs
            .checked_mul(n_samples)
            .and_then(|v| v.checked_mul(n_classes))
            .ok_or(FormatError::DimensionOverflow("n_epochs * n_samples * n_classes"))?;
        if probs.len() != expected {
            return Err(FormatError::ShapeMismatch {
                expected,
                have: probs.len(),
            });
        }
        for (r, row) in probs.chunks_exact_mut(n_classes).enumerate() {
            let (epoch, sample) = (r / n_samples + 1, r % n_samples);
            normalize_row(row, epoch, sample)?;
        }
        Ok(Self {
            model_id: model_id.into(),
            n_epochs,
            n_samples,
            n_classes,
            probs,
        })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn with_model_id(mut self, model_id: impl Into<String>) -> Self {
        self.model_id = model_id.into();
        self
    }

    pub fn n_epochs(&self) -> usize {
        self.n_epochs
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn values(&self) -> &[f32] {
        &self.probs
    }

    /// Row for 1-based `epoch` and 0-based `sample`.
    pub fn row(&self, epoch: usize, sample: usize) -> &[f32] {
        assert!(
            (1..=self.n_epochs).contains(&epoch) && sample < self.n_samples,
            "row({epoch}, {sample}) out of range"
        );
        let start = ((epoch - 1) * self.n_samples + sample) * self.n_classes;
        &self.probs[start..start + self.n_classes]
    }

    /// Argmax of one row; ties resolve to the lowest class index.
    pub fn argmax(&self, epoch: usize, sample: usize) -> usize {
        argmax_f32(self.row(epoch, sample))
    }

    /// New log restricted to `indices` (in that order, repeats allowed).
    pub fn select_samples(&self, indices: &[usize]) -> Result<Self, FormatError> {
        if indices.is_empty() {
            return Err(FormatError::DimensionZero("n_samples"));
        }
        let mut probs = Vec::with_capacity(self.n_epochs * indices.len() * self.n_classes);
        for epoch in 1..=self.n_epochs {
            for &i in indices {
                probs.extend_from_slice(self.row(epoch, i));
            }
        }
        Ok(Self {
            model_id: self.model_id.clone(),
            n_epochs: self.n_epochs,
            n_samples: indices.len(),
            n_classes: self.n_classes,
            probs,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let id = self.model_id.as_bytes();
        let mut out = Vec::with_capacity(22 + id.len() + 4 * self.probs.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n_epochs as u32).to_le_bytes());
        out.extend_from_slice(&(self.n_samples as u32).to_le_bytes());
        out.extend_from_slice(&(self.n_classes as u32).to_le_bytes());
        out.extend_from_slice(&(id.len() as u16).to_le_bytes());
        out.extend_from_slice(id);
        for v in &self.probs {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = ByteReader::new(bytes);
        if r.take(4).map_err(|_| FormatError::BadMagic { expected: "CPL1" })? != MAGIC {
            return Err(FormatError::BadMagic { expected: "CPL1" });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let n_epochs = r.u32()? as usize;
        let n_samples = r.u32()? as usize;
        let n_classes = r.u32()? as usize;
        let id_len = r.u16()? as usize;
        let model_id = std::str::from_utf8(r.take(id_len)?)
            .map_err(|_| FormatError::BadModelId)?
            .to_owned();
        if n_epochs == 0 {
            return Err(FormatError::DimensionZero("n_epochs"));
        }
        if n_samples == 0 {
            return Err(FormatError::DimensionZero("n_samples"));
        }
        if n_classes == 0 {
            return Err(FormatError::DimensionZero("n_classes"));
        }
        let count = n_epochs
            .checked_mul(n_samples)
            .and_then(|v| v.checked_mul(n_classes))
            .ok_or(FormatError::DimensionOverflow("n_epochs * n_samples * n_classes"))?;
        let probs = r.f32_vec(count)?;
        if r.remaining() > 0 {
            return Err(FormatError::TrailingBytes(r.remaining()));
        }
        Self::new(model_id, n_epochs, n_samples, n_classes, probs)
    }
}

pub(crate) fn argmax_f32(row: &[f32]) -> usize {
    let mut best = 0;
    for (j, &p) in row.iter().enumerate().skip(1) {
        if p > row[best] {
            best = j;
        }
    }
    best
}

fn normalize_row(row: &mut [f32], epoch: usize, sample: usize) -> Result<(), FormatError> {
    let mut sum = 0.0f64;
    for (class, &p) in row.iter().enumerate() {
        if !p.is_finite() {
            return Err(FormatError::NonFinite { epoch, sample });
        }
        if p < 0.0 {
            return Err(FormatError::NegativeProbability {
                epoch,
                sample,
                class,
                value: p,
            });
        }
        sum += f64::from(p);
    }
    let deviation = (sum - 1.0).abs();
    if !within_row_tolerance(deviation) {
        return Err(FormatError::RowSumOutOfTolerance { epoch, sample, sum });
    }
    if deviation > RENORM_THRESHOLD {
        for p in row.iter_mut() {
            *p = (f64::from(*p) / sum) as f32;
        }
    }
    Ok(())
}

fn within_row_tolerance(deviation: f64) -> bool {
    deviation <= ROW_SUM_TOLERANCE
}

pub fn read_cpl(path: impl AsRef<Path>) -> Result<ProbLog, FormatError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| FormatError::io(path, e))?;
    ProbLog::from_bytes(&bytes)
}

pub fn write_cpl(log: &ProbLog, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let path = path.as_ref();
    fsutil::write_bytes_atomic(path, &log.to_bytes()).map_err(|e| FormatError::io(path, e))
}
