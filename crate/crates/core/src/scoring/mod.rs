//! Ensemble-averaged distributions, per-epoch entropy scores, confusion
//! scores and their fluctuation over the tail of training.

mod exact_sum;
mod table;

use std::sync::Arc;

use rayon::prelude::*;

use crate::proba_log::ProbLog;
use exact_sum::ExactSum;

pub use table::ScoreTable;

/// Probabilities at or below this contribute nothing to the entropy
/// (the 0·ln 0 = 0 limit).
pub const ZERO_CUTOFF: f64 = 1e-12;

/// Default first epoch of the fluctuation tail.
pub const DEFAULT_TAIL_START: usize = 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoringError {
    #[error("not a probability distribution (sum {sum}, min {min})")]
    NotADistribution { sum: f64, min: f64 },
    #[error("ensemble has no runs")]
    EmptyEnsemble,
    #[error("run {model_id:?} has shape (N={n_samples}, C={n_classes}), expected (N={expected_samples}, C={expected_classes})")]
    ShapeMismatch {
        model_id: String,
        n_samples: usize,
        n_classes: usize,
        expected_samples: usize,
        expected_classes: usize,
    },
    #[error("epoch {epoch} outside 1..={n_epochs}")]
    EpochOutOfRange { epoch: usize, n_epochs: usize },
    #[error("window {start}:{end} outside 1..={n_epochs}")]
    WindowOutOfRange {
        start: usize,
        end: usize,
        n_epochs: usize,
    },
    #[error("tail from epoch {tail_start} of {n_epochs} has fewer than 2 epochs")]
    TailTooShort { tail_start: usize, n_epochs: usize },
}

/// Shannon entropy in nats of a probability vector.
pub fn entropy(p: &[f64]) -> Result<f64, ScoringError> {
    let sum: f64 = p.iter().sum();
    let min = p.iter().copied().fold(f64::INFINITY, f64::min);
    if p.is_empty() || !(min >= 0.0) || !((sum - 1.0).abs() <= 1e-6) {
        return Err(ScoringError::NotADistribution { sum, min });
    }
    Ok(entropy_unchecked(p))
}

/// Entropy without validation, clamped to `[0, ln C]`.
pub(crate) fn entropy_unchecked(p: &[f64]) -> f64 {
    let mut h = 0.0;
    for &q in p {
        if q > ZERO_CUTOFF {
            h -= q * q.ln();
        }
    }
    h.clamp(0.0, (p.len() as f64).ln())
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (j, &q) in p.iter().enumerate().skip(1) {
        if q > p[best] {
            best = j;
        }
    }
    best
}

/// A bag of runs evaluated on the same dataset.
///
/// Runs are kept sorted by model id. Means are accumulated exactly and
/// rounded once, so outputs do not depend on the order runs were supplied
/// in, on how many times each run is repeated, or on the worker count.
#[derive(Debug, Clone)]
pub struct Ensemble {
    logs: Vec<Arc<ProbLog>>,
    n_samples: usize,
    n_classes: usize,
    n_epochs: usize,
}

impl Ensemble {
    pub fn new(logs: impl IntoIterator<Item = Arc<ProbLog>>) -> Result<Self, ScoringError> {
        let mut logs: Vec<Arc<ProbLog>> = logs.into_iter().collect();
        let first = logs.first().ok_or(ScoringError::EmptyEnsemble)?;
        let (n_samples, n_classes) = (first.n_samples(), first.n_classes());
        for log in &logs {
            if log.n_samples() != n_samples || log.n_classes() != n_classes {
                return Err(ScoringError::ShapeMismatch {
                    model_id: log.model_id().to_owned(),
                    n_samples: log.n_samples(),
                    n_classes: log.n_classes(),
                    expected_samples: n_samples,
                    expected_classes: n_classes,
                });
            }
        }
        logs.sort_by(|a, b| a.model_id().cmp(b.model_id()));
        let n_epochs = logs.iter().map(|l| l.n_epochs()).min().unwrap();
        Ok(Self {
            logs,
            n_samples,
            n_classes,
            n_epochs,
        })
    }

    pub fn len(&self) -> usize {
        self.logs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logs.is_empty()
    }

    pub fn logs(&self) -> &[Arc<ProbLog>] {
        &self.logs
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Epochs available in every run.
    pub fn n_epochs(&self) -> usize {
        self.n_epochs
    }

    pub fn check_epoch(&self, epoch: usize) -> Result<(), ScoringError> {
        if (1..=self.n_epochs).contains(&epoch) {
            Ok(())
        } else {
            Err(ScoringError::EpochOutOfRange {
                epoch,
                n_epochs: self.n_epochs,
            })
        }
    }

    pub fn check_window(&self, start: usize, end: usize) -> Result<(), ScoringError> {
        if start >= 1 && start <= end && end <= self.n_epochs {
            Ok(())
        } else {
            Err(ScoringError::WindowOutOfRange {
                start,
                end,
                n_epochs: self.n_epochs,
            })
        }
    }

    /// Mean class distribution of the ensemble for one sample at one epoch.
    pub fn mean(&self, epoch: usize, sample: usize) -> Result<Vec<f64>, ScoringError> {
        self.check_epoch(epoch)?;
        assert!(sample < self.n_samples, "sample {sample} out of range");
        let mut out = vec![0.0; self.n_classes];
        self.mean_into(|_| epoch, sample, &mut out);
        Ok(out)
    }

    fn mean_into(&self, epoch_of: impl Fn(&ProbLog) -> usize, sample: usize, out: &mut [f64]) {
        let mut sums = vec![ExactSum::default(); self.n_classes];
        for log in &self.logs {
            for (s, &p) in sums.iter_mut().zip(log.row(epoch_of(log), sample)) {
                s.add(p);
            }
        }
        let m = self.logs.len() as f64;
        for (o, s) in out.iter_mut().zip(&sums) {
            *o = s.to_f64() / m;
        }
    }

    fn sample_entropy(&self, epoch: usize, sample: usize, buf: &mut [f64]) -> f64 {
        self.mean_into(|_| epoch, sample, buf);
        entropy_unchecked(buf)
    }

    /// Entropy score of every sample at one epoch.
    pub fn entropy_scores_at(&self, epoch: usize) -> Result<Vec<f64>, ScoringError> {
        self.check_epoch(epoch)?;
        Ok((0..self.n_samples)
            .into_par_iter()
            .map_init(
                || vec![0.0; self.n_classes],
                |buf, i| self.sample_entropy(epoch, i, buf),
            )
            .collect())
    }

    /// Per-sample entropy series over `start..=end`, as `[epoch][sample]`.
    pub fn entropy_matrix(&self, start: usize, end: usize) -> Result<Vec<Vec<f64>>, ScoringError> {
        self.check_window(start, end)?;
        (start..=end).map(|t| self.entropy_scores_at(t)).collect()
    }

    /// Mean entropy score over the epochs `start..=end`.
    pub fn confusion_scores(&self, start: usize, end: usize) -> Result<Vec<f64>, ScoringError> {
        let rows = self.entropy_matrix(start, end)?;
        Ok(confusion_from_rows(&rows))
    }

    /// Population standard deviation of the entropy score over epochs
    /// `tail_start..=n_epochs`.
    pub fn entropy_std(&self, tail_start: usize) -> Result<Vec<f64>, ScoringError> {
        if tail_start == 0 || tail_start + 1 > self.n_epochs {
            return Err(ScoringError::TailTooShort {
                tail_start,
                n_epochs: self.n_epochs,
            });
        }
        let rows = self.entropy_matrix(tail_start, self.n_epochs)?;
        Ok(std_from_rows(&rows))
    }

    /// Consensus prediction: argmax of the mean distribution.
    pub fn predict(&self, epoch: usize) -> Result<Vec<usize>, ScoringError> {
        self.check_epoch(epoch)?;
        Ok(self.predict_with(|_| epoch))
    }

    /// Consensus prediction using each run's own last epoch.
    pub fn predict_final(&self) -> Vec<usize> {
        self.predict_with(ProbLog::n_epochs)
    }

    fn predict_with(&self, epoch_of: impl Fn(&ProbLog) -> usize + Sync) -> Vec<usize> {
        (0..self.n_samples)
            .into_par_iter()
            .map_init(
                || vec![0.0; self.n_classes],
                |buf, i| {
                    self.mean_into(&epoch_of, i, buf);
                    argmax(buf)
                },
            )
            .collect()
    }
}

pub(crate) fn confusion_from_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows[0].len();
    let count = rows.len() as f64;
    (0..n)
        .map(|i| rows.iter().map(|r| r[i]).sum::<f64>() / count)
        .collect()
}

pub(crate) fn std_from_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows[0].len();
    let count = rows.len() as f64;
    (0..n)
        .map(|i| {
            let mean = rows.iter().map(|r| r[i]).sum::<f64>() / count;
            let var = rows.iter().map(|r| (r[i] - mean).powi(2)).sum::<f64>() / count;
            var.sqrt()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn log(id: &str, t: usize, n: usize, c: usize, probs: Vec<f32>) -> Arc<ProbLog> {
        Arc::new(ProbLog::new(id, t, n, c, probs).unwrap())
    }

    #[test]
    fn entropy_closed_forms() {
        assert!((entropy(&[0.1; 10]).unwrap() - 10f64.ln()).abs() < 1e-12);
        assert_eq!(entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert!((entropy(&[0.5, 0.25, 0.25]).unwrap() - 1.039720771).abs() < 1e-9);
        assert!((entropy(&[0.5, 0.25, 0.25]).unwrap() - 1.5 * LN_2).abs() < 1e-12);
    }

    #[test]
    fn entropy_rejects_non_distributions() {
        assert!(entropy(&[0.5, 0.4]).is_err());
        assert!(entropy(&[1.5, -0.5]).is_err());
        assert!(entropy(&[]).is_err());
        assert!(entropy(&[f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn entropy_ignores_tiny_entries() {
        // only the (1 - 1e-13) ln(1 - 1e-13) ~ 1e-13 term survives
        let h = entropy(&[1.0 - 1e-13, 1e-13]).unwrap();
        assert!(h < 2e-13, "{h}");
    }

    #[test]
    fn mean_of_two_one_hots() {
        let e = Ensemble::new([
            log("a", 1, 1, 2, vec![1.0, 0.0]),
            log("b", 1, 1, 2, vec![0.0, 1.0]),
        ])
        .unwrap();
        assert_eq!(e.mean(1, 0).unwrap(), vec![0.5, 0.5]);
        let s = e.entropy_scores_at(1).unwrap();
        assert!((s[0] - LN_2).abs() < 1e-12);
    }

    #[test]
    fn single_run_mean_is_identity() {
        let row = [0.125f32, 0.5, 0.375];
        let e = Ensemble::new([log("a", 1, 1, 3, row.to_vec())]).unwrap();
        let m = e.mean(1, 0).unwrap();
        assert_eq!(m, row.iter().map(|&p| f64::from(p)).collect::<Vec<_>>());
    }

    #[test]
    fn mean_of_three_runs() {
        let e = Ensemble::new([
            log("a", 1, 1, 2, vec![1.0, 0.0]),
            log("b", 1, 1, 2, vec![1.0, 0.0]),
            log("c", 1, 1, 2, vec![0.0, 1.0]),
        ])
        .unwrap();
        assert_eq!(e.mean(1, 0).unwrap(), vec![2.0 / 3.0, 1.0 / 3.0]);
    }

    #[test]
    fn unanimous_one_hot_gives_zero_scores() {
        let probs: Vec<f32> = (0..6).flat_map(|i| if i % 2 == 0 { [1.0, 0.0] } else { [0.0, 1.0] }).collect();
        let e = Ensemble::new([log("a", 2, 3, 2, probs.clone()), log("b", 2, 3, 2, probs)]).unwrap();
        assert_eq!(e.entropy_scores_at(2).unwrap(), vec![0.0; 3]);
        assert_eq!(e.confusion_scores(1, 2).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn confusion_is_window_mean() {
        assert_eq!(confusion_from_rows(&[vec![0.1], vec![0.2], vec![0.3]]), vec![
            (0.1 + 0.2 + 0.3) / 3.0
        ]);
        assert!((confusion_from_rows(&[vec![0.1], vec![0.2], vec![0.3]])[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn std_closed_forms() {
        assert!(std_from_rows(&[vec![0.7], vec![0.7], vec![0.7]])[0] < 1e-15);
        assert_eq!(std_from_rows(&[vec![0.0], vec![2.0 * 0.3]]), vec![0.3]);
    }

    #[test]
    fn errors() {
        let e = Ensemble::new([log("a", 3, 1, 2, vec![0.5; 6])]).unwrap();
        assert!(matches!(e.mean(4, 0), Err(ScoringError::EpochOutOfRange { .. })));
        assert!(matches!(e.mean(0, 0), Err(ScoringError::EpochOutOfRange { .. })));
        assert!(matches!(
            e.confusion_scores(2, 1),
            Err(ScoringError::WindowOutOfRange { .. })
        ));
        assert!(matches!(e.entropy_std(3), Err(ScoringError::TailTooShort { .. })));
        assert!(e.entropy_std(2).is_ok());
        assert!(matches!(
            Ensemble::new([log("a", 1, 1, 2, vec![0.5; 2]), log("b", 1, 2, 2, vec![0.5; 4])]),
            Err(ScoringError::ShapeMismatch { .. })
        ));
        assert!(matches!(Ensemble::new([]), Err(ScoringError::EmptyEnsemble)));
    }

    #[test]
    fn predict_ties_to_lowest() {
        let e = Ensemble::new([
            log("a", 1, 2, 3, vec![0.2, 0.5, 0.3, 0.5, 0.5, 0.0]),
        ])
        .unwrap();
        assert_eq!(e.predict(1).unwrap(), vec![1, 0]);
    }
}
