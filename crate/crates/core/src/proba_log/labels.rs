use std::ops::Deref;
use std::path::Path;

use super::FormatError;
use crate::fsutil;

/// Class index per sample, in log sample order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVec(Vec<usize>);

impl LabelVec {
    pub fn new(labels: Vec<usize>, n_classes: usize) -> Result<Self, FormatError> {
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= n_classes) {
            return Err(FormatError::ClassOutOfRange {
                label: l,
                n_classes,
                line: i + 1,
            });
        }
        Ok(Self(labels))
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }
}

impl Deref for LabelVec {
    type Target = [usize];
    fn deref(&self) -> &[usize] {
        &self.0
    }
}

/// Reads a headerless label CSV: one integer per line. Blank lines and `#`
/// comment lines are skipped.
pub fn read_labels(
    path: impl AsRef<Path>,
    expected_n: usize,
    n_classes: usize,
) -> Result<LabelVec, FormatError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    let mut labels = Vec::with_capacity(expected_n);
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let label: usize = line.parse().map_err(|_| FormatError::Parse {
            path: path.to_owned(),
            line: idx + 1,
            msg: format!("not a class index: {line:?}"),
        })?;
        if label >= n_classes {
            return Err(FormatError::ClassOutOfRange {
                label,
                n_classes,
                line: idx + 1,
            });
        }
        labels.push(label);
    }
    if labels.len() != expected_n {
        return Err(FormatError::LengthMismatch {
            expected: expected_n,
            found: labels.len(),
        });
    }
    Ok(LabelVec(labels))
}

pub fn write_labels(labels: &[usize], path: impl AsRef<Path>) -> Result<(), FormatError> {
    let path = path.as_ref();
    fsutil::write_atomic(path, |w| {
        for l in labels {
            writeln!(w, "{l}")?;
        }
        Ok(())
    })
    .map_err(|e| FormatError::io(path, e))
}

/// Ground-truth tags per sample, as written by the synthetic generator
/// (`sample_index,tags` with tags separated by `;`).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TagTable(pub Vec<Vec<String>>);

impl TagTable {
    pub fn has(&self, sample: usize, prefix: &str) -> bool {
        self.0[sample].iter().any(|t| t.starts_with(prefix))
    }

    pub fn joined(&self, sample: usize) -> String {
        self.0[sample].join(";")
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn read_tags(path: impl AsRef<Path>, expected_n: usize) -> Result<TagTable, FormatError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    let mut rows: Vec<Option<Vec<String>>> = vec![None; expected_n];
    let mut seen = 0;
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("sample_index") {
            continue;
        }
        let bad = |msg: String| FormatError::Parse {
            path: path.to_owned(),
            line: idx + 1,
            msg,
        };
        let (i, tags) = line
            .split_once(',')
            .ok_or_else(|| bad("expected `sample_index,tags`".into()))?;
        let i: usize = i.trim().parse().map_err(|_| bad(format!("bad index {i:?}")))?;
        if i >= expected_n {
            return Err(bad(format!("sample index {i} out of range")));
        }
        if rows[i].is_some() {
            return Err(bad(format!("duplicate sample index {i}")));
        }
        rows[i] = Some(
            tags.split(';')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(str::to_owned)
                .collect(),
        );
        seen += 1;
    }
    if seen != expected_n {
        return Err(FormatError::LengthMismatch {
            expected: expected_n,
            found: seen,
        });
    }
    Ok(TagTable(rows.into_iter().map(Option::unwrap).collect()))
}

pub fn write_tags(tags: &TagTable, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let path = path.as_ref();
    fsutil::write_atomic(path, |w| {
        writeln!(w, "sample_index,tags")?;
        for (i, t) in tags.0.iter().enumerate() {
            writeln!(w, "{i},{}", t.join(";"))?;
        }
        Ok(())
    })
    .map_err(|e| FormatError::io(path, e))
}
