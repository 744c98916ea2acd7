//! Training-phase boundaries from loss/accuracy curves.
//!
//! `t1` closes the fast early-learning phase: the last epoch before the
//! smoothed mean test loss turns upward while the smoothed train loss still
//! falls. `t2` closes the slow early-learning phase: the first epoch after
//! which neither train nor ID test accuracy improves by `delta` or more.

use std::io::{self, Write};

use crate::proba_log::MetricsSeries;
use crate::scoring::Ensemble;

pub const DEFAULT_SMOOTHING: usize = 3;
pub const DEFAULT_DELTA: f64 = 0.005;
const MIN_EPOCHS: usize = 5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PhaseError {
    #[error("need at least {MIN_EPOCHS} epochs shared by all datasets, have {0}")]
    TooFewEpochs(usize),
    #[error("metrics have no rows for dataset {0:?}")]
    MissingDataset(String),
    #[error("metrics contain no test dataset")]
    NoTestDataset,
    #[error("smoothing window must be at least 1")]
    BadSmoothing,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseParams {
    pub smoothing: usize,
    pub delta: f64,
}

impl Default for PhaseParams {
    fn default() -> Self {
        Self {
            smoothing: DEFAULT_SMOOTHING,
            delta: DEFAULT_DELTA,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseReport {
    /// Last epoch of the fast early-learning phase, if detected.
    pub t1: Option<usize>,
    /// Last epoch of the slow early-learning phase, if detected.
    pub t2: Option<usize>,
    pub params: PhaseParams,
    pub epochs: Vec<usize>,
    pub train_loss: Vec<f64>,
    pub test_loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    pub id_accuracy: Vec<f64>,
}

impl PhaseReport {
    /// Smoothed evidence curves as CSV.
    pub fn write_evidence_csv(&self, w: &mut dyn Write) -> io::Result<()> {
        writeln!(w, "epoch,train_loss,test_loss,train_accuracy,id_accuracy")?;
        for k in 0..self.epochs.len() {
            writeln!(
                w,
                "{},{},{},{},{}",
                self.epochs[k], self.train_loss[k], self.test_loss[k], self.train_accuracy[k], self.id_accuracy[k]
            )?;
        }
        Ok(())
    }
}

/// Mean entropy score over samples, per epoch.
pub fn mean_entropy_trajectory(ensemble: &Ensemble) -> Vec<f64> {
    (1..=ensemble.n_epochs())
        .map(|t| {
            let s = ensemble.entropy_scores_at(t).expect("epoch in range");
            s.iter().sum::<f64>() / s.len() as f64
        })
        .collect()
}

/// Centered moving average, truncated at the edges. `w = 1` is the identity.
pub fn smooth(series: &[f64], w: usize) -> Vec<f64> {
    let left = (w - 1) / 2;
    let right = w / 2;
    (0..series.len())
        .map(|k| {
            let lo = k.saturating_sub(right);
            let hi = (k + left).min(series.len() - 1);
            let win = &series[lo..=hi];
            win.iter().sum::<f64>() / win.len() as f64
        })
        .collect()
}

pub fn detect_phases(
    metrics: &MetricsSeries,
    train: &str,
    id: &str,
    params: PhaseParams,
) -> Result<PhaseReport, PhaseError> {
    if params.smoothing == 0 {
        return Err(PhaseError::BadSmoothing);
    }
    let get = |name: &str| {
        let s = metrics.series(name);
        if s.is_empty() {
            Err(PhaseError::MissingDataset(name.to_owned()))
        } else {
            Ok(s)
        }
    };
    let train_rows = get(train)?;
    let id_rows = get(id)?;
    let tests: Vec<Vec<(usize, f64, f64)>> = metrics
        .datasets()
        .into_iter()
        .filter(|d| *d != train)
        .map(|d| metrics.series(d))
        .collect();
    if tests.is_empty() {
        return Err(PhaseError::NoTestDataset);
    }
    let epochs: Vec<usize> = train_rows
        .iter()
        .map(|r| r.0)
        .filter(|e| tests.iter().all(|t| t.iter().any(|r| r.0 == *e)))
        .collect();
    if epochs.len() < MIN_EPOCHS {
        return Err(PhaseError::TooFewEpochs(epochs.len()));
    }
    let at = |rows: &[(usize, f64, f64)], e: usize| *rows.iter().find(|r| r.0 == e).unwrap();
    let train_loss: Vec<f64> = epochs.iter().map(|&e| at(&train_rows, e).1).collect();
    let train_acc: Vec<f64> = epochs.iter().map(|&e| at(&train_rows, e).2).collect();
    let id_acc: Vec<f64> = epochs.iter().map(|&e| at(&id_rows, e).2).collect();
    let test_loss: Vec<f64> = epochs
        .iter()
        .map(|&e| tests.iter().map(|t| at(t, e).1).sum::<f64>() / tests.len() as f64)
        .collect();

    let w = params.smoothing;
    let (train_loss, test_loss) = (smooth(&train_loss, w), smooth(&test_loss, w));
    let (train_acc, id_acc) = (smooth(&train_acc, w), smooth(&id_acc, w));

    let t1 = (1..epochs.len())
        .find(|&k| test_loss[k] > test_loss[k - 1] && train_loss[k] < train_loss[k - 1])
        .map(|k| epochs[k - 1]);
    let saturated = |acc: &[f64], k: usize| {
        let best_later = acc[k + 1..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        best_later - acc[k] < params.delta
    };
    // Phase II cannot end before Phase I does; on noisy real curves accuracy can
    // plateau briefly before test loss turns, so t2 is searched after t1.
    let start = t1.map_or(0, |t| epochs.iter().position(|&e| e == t).unwrap() + 1);
    let t2 = (start..epochs.len() - 1)
        .find(|&k| saturated(&train_acc, k) && saturated(&id_acc, k))
        .map(|k| epochs[k]);

    Ok(PhaseReport {
        t1,
        t2,
        params,
        epochs,
        train_loss,
        test_loss,
        train_accuracy: train_acc,
        id_accuracy: id_acc,
    })
}
