//! On-disk formats: class-probability logs (CPL), feature tensors (CFT),
//! label and tag CSVs, per-epoch metrics, and the experiment manifest.

mod cpl;
mod features;
mod labels;
mod manifest;
mod metrics;

use std::path::PathBuf;

pub use cpl::{read_cpl, write_cpl, ProbLog, ROW_SUM_TOLERANCE};
pub use features::{read_features, write_features, FeatureTensor};
pub use labels::{read_labels, read_tags, write_labels, write_tags, LabelVec, TagTable};
pub use manifest::{
    read_manifest, DatasetEntry, DatasetRole, Manifest, ManifestFile, RunEntry,
};
pub use metrics::{read_metrics, write_metrics, MetricsRow, MetricsSeries};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic bytes (expected {expected:?})")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("file truncated: need {needed} bytes, have {have}")]
    TruncatedFile { needed: usize, have: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("dimension {0} is zero")]
    DimensionZero(&'static str),
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("dimensions {0} overflow")]
    DimensionOverflow(&'static str),
    #[error("model id is not valid UTF-8")]
    BadModelId,
    #[error("payload has {have} values, expected {expected}")]
    ShapeMismatch { expected: usize, have: usize },
    #[error("negative probability {value} at epoch {epoch}, sample {sample}, class {class}")]
    NegativeProbability {
        epoch: usize,
        sample: usize,
        class: usize,
        value: f32,
    },
    #[error("non-finite probability at epoch {epoch}, sample {sample}")]
    NonFinite { epoch: usize, sample: usize },
    #[error("row sum {sum} out of tolerance at epoch {epoch}, sample {sample}")]
    RowSumOutOfTolerance { epoch: usize, sample: usize, sum: f64 },
    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("expected {expected} rows, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("label {label} out of range for {n_classes} classes (line {line})")]
    ClassOutOfRange {
        label: usize,
        n_classes: usize,
        line: usize,
    },
    #[error("metrics: {0}")]
    BadMetrics(String),
    #[error("manifest schema: {0}")]
    SchemaError(String),
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("inconsistent class count: {first} vs {other} ({path})")]
    InconsistentClassCount {
        first: usize,
        other: usize,
        path: PathBuf,
    },
    #[error("id dataset {0:?} has no labels")]
    MissingIdLabels(String),
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl FormatError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FormatError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Little-endian cursor shared by the binary readers.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).ok_or(FormatError::TruncatedFile {
            needed: usize::MAX,
            have: self.bytes.len(),
        })?;
        if end > self.bytes.len() {
            return Err(FormatError::TruncatedFile {
                needed: end,
                have: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f32_vec(&mut self, count: usize) -> Result<Vec<f32>, FormatError> {
        let nbytes = count
            .checked_mul(4)
            .ok_or(FormatError::DimensionOverflow("payload"))?;
        let raw = self.take(nbytes)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}
