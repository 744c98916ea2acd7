use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::FormatError;
use crate::fsutil;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub dataset: String,
    pub loss: f64,
    pub accuracy: f64,
}

/// Per-epoch loss and accuracy of one run on every evaluated dataset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsSeries {
    rows: Vec<MetricsRow>,
}

impl MetricsSeries {
    pub fn new(rows: Vec<MetricsRow>) -> Result<Self, FormatError> {
        let mut last: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &rows {
            if !(0.0..=1.0).contains(&r.accuracy) {
                return Err(FormatError::BadMetrics(format!(
                    "accuracy {} out of [0,1] at epoch {} ({})",
                    r.accuracy, r.epoch, r.dataset
                )));
            }
            if !(r.loss >= 0.0) || !r.loss.is_finite() {
                return Err(FormatError::BadMetrics(format!(
                    "loss {} invalid at epoch {} ({})",
                    r.loss, r.epoch, r.dataset
                )));
            }
            if let Some(&prev) = last.get(r.dataset.as_str()) {
                if r.epoch <= prev {
                    return Err(FormatError::BadMetrics(format!(
                        "epochs not strictly increasing for {}: {} after {}",
                        r.dataset, r.epoch, prev
                    )));
                }
            }
            last.insert(&r.dataset, r.epoch);
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    pub fn datasets(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self.rows.iter().map(|r| r.dataset.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        names
    }

    /// `(epoch, loss, accuracy)` rows for one dataset, in epoch order.
    pub fn series(&self, dataset: &str) -> Vec<(usize, f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.dataset == dataset)
            .map(|r| (r.epoch, r.loss, r.accuracy))
            .collect()
    }

    /// Average several runs' series row by row. Rows present in every run
    /// (same epoch and dataset) are kept; others are dropped.
    pub fn mean_over_runs(runs: &[&MetricsSeries]) -> MetricsSeries {
        let mut acc: BTreeMap<(String, usize), (f64, f64, usize)> = BTreeMap::new();
        for run in runs {
            for r in &run.rows {
                let e = acc.entry((r.dataset.clone(), r.epoch)).or_insert((0.0, 0.0, 0));
                e.0 += r.loss;
                e.1 += r.accuracy;
                e.2 += 1;
            }
        }
        let rows = acc
            .into_iter()
            .filter(|(_, (_, _, n))| *n == runs.len())
            .map(|((dataset, epoch), (l, a, n))| MetricsRow {
                epoch,
                dataset,
                loss: l / n as f64,
                accuracy: (a / n as f64).clamp(0.0, 1.0),
            })
            .collect();
        MetricsSeries { rows }
    }
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<MetricsSeries, FormatError> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|source| FormatError::Csv {
            path: path.to_owned(),
            source,
        })?;
    let headers = rdr.headers().map_err(|source| FormatError::Csv {
        path: path.to_owned(),
        source,
    })?;
    if headers != vec!["epoch", "dataset", "loss", "accuracy"] {
        return Err(FormatError::BadMetrics(format!(
            "{}: header must be `epoch,dataset,loss,accuracy`",
            path.display()
        )));
    }
    let rows = rdr
        .deserialize()
        .collect::<Result<Vec<MetricsRow>, _>>()
        .map_err(|source| FormatError::Csv {
            path: path.to_owned(),
            source,
        })?;
    MetricsSeries::new(rows)
}

pub fn write_metrics(series: &MetricsSeries, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let path = path.as_ref();
    fsutil::write_atomic(path, |w| {
        writeln!(w, "epoch,dataset,loss,accuracy")?;
        for r in &series.rows {
            writeln!(w, "{},{},{},{}", r.epoch, r.dataset, r.loss, r.accuracy)?;
        }
        Ok(())
    })
    .map_err(|e| FormatError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(epoch: usize, dataset: &str, loss: f64, accuracy: f64) -> MetricsRow {
        MetricsRow {
            epoch,
            dataset: dataset.into(),
            loss,
            accuracy,
        }
    }

    #[test]
    fn roundtrip_and_series() {
        let s = MetricsSeries::new(vec![
            row(1, "train", 2.0, 0.2),
            row(1, "id", 2.1, 0.19),
            row(2, "train", 1.5, 0.4),
            row(2, "id", 1.7, 0.35),
        ])
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics(&s, &p).unwrap();
        let back = read_metrics(&p).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.series("id"), vec![(1, 2.1, 0.19), (2, 1.7, 0.35)]);
        assert_eq!(back.datasets(), vec!["id", "train"]);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(MetricsSeries::new(vec![row(1, "a", 1.0, 1.5)]).is_err());
        assert!(MetricsSeries::new(vec![row(1, "a", -1.0, 0.5)]).is_err());
        assert!(MetricsSeries::new(vec![row(2, "a", 1.0, 0.5), row(2, "a", 1.0, 0.5)]).is_err());
    }

    #[test]
    fn mean_over_runs_averages_matching_rows() {
        let a = MetricsSeries::new(vec![row(1, "id", 1.0, 0.2), row(2, "id", 0.5, 0.6)]).unwrap();
        let b = MetricsSeries::new(vec![row(1, "id", 3.0, 0.4)]).unwrap();
        let m = MetricsSeries::mean_over_runs(&[&a, &b]);
        assert_eq!(m.series("id"), vec![(1, 2.0, 0.30000000000000004)]);
    }
}
