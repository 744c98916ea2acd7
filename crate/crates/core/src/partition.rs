//! Confusion groups: uniform bins over `[0, ln C]`, participation ratios,
//! per-bin accuracy profiles, and the label-dependent easy/medium/hard split
//! by how many runs classify a sample correctly.

use std::fmt;
use std::io::{self, Write};

use rayon::prelude::*;

use crate::proba_log::LabelVec;
use crate::scoring::{Ensemble, ScoringError};

pub const DEFAULT_BINS: usize = 40;

/// Scores may exceed `ln C` by this much from rounding and still bin.
const RANGE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PartitionError {
    #[error("number of bins must be at least 1")]
    ZeroBins,
    #[error("score {score} of sample {index} outside [0, {max}]")]
    ScoreOutOfRange { index: usize, score: f64, max: f64 },
    #[error("length mismatch: {what} has {found}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("thresholds lo={lo} hi={hi} invalid for {n_runs} runs (need 0 <= lo < hi <= runs)")]
    BadThresholds { lo: f64, hi: f64, n_runs: usize },
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

/// Assignment of samples to equal-width confusion bins.
#[derive(Debug, Clone, PartialEq)]
pub struct BinPartition {
    n_classes: usize,
    edges: Vec<f64>,
    assignment: Vec<usize>,
    counts: Vec<usize>,
}

impl BinPartition {
    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// `n_bins + 1` edges, `edge_k = k ln(C) / n_bins`.
    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn n_samples(&self) -> usize {
        self.assignment.len()
    }

    pub fn ratios(&self) -> Vec<f64> {
        participation_ratios(self)
    }

    pub fn write_csv(&self, w: &mut dyn Write) -> io::Result<()> {
        writeln!(w, "sample_index,bin")?;
        for (i, b) in self.assignment.iter().enumerate() {
            writeln!(w, "{i},{b}")?;
        }
        Ok(())
    }
}

fn edge(k: usize, n_bins: usize, ln_c: f64) -> f64 {
    k as f64 * ln_c / n_bins as f64
}

/// Bin `[lo, hi)` holding `score`; the last bin is closed.
fn bin_of(score: f64, n_bins: usize, ln_c: f64) -> usize {
    let guess = ((score * n_bins as f64 / ln_c).floor().max(0.0) as usize).min(n_bins - 1);
    let mut k = guess;
    // correct the float guess against the exact edge values
    while k > 0 && score < edge(k, n_bins, ln_c) {
        k -= 1;
    }
    while k + 1 < n_bins && score >= edge(k + 1, n_bins, ln_c) {
        k += 1;
    }
    k
}

pub fn bin_scores(
    scores: &[f64],
    n_bins: usize,
    n_classes: usize,
) -> Result<BinPartition, PartitionError> {
    if n_bins == 0 {
        return Err(PartitionError::ZeroBins);
    }
    let ln_c = (n_classes as f64).ln();
    let mut counts = vec![0; n_bins];
    let mut assignment = Vec::with_capacity(scores.len());
    for (index, &score) in scores.iter().enumerate() {
        if !(score >= 0.0 && score <= ln_c + RANGE_SLACK) {
            return Err(PartitionError::ScoreOutOfRange {
                index,
                score,
                max: ln_c,
            });
        }
        let k = bin_of(score, n_bins, ln_c);
        counts[k] += 1;
        assignment.push(k);
    }
    Ok(BinPartition {
        n_classes,
        edges: (0..=n_bins).map(|k| edge(k, n_bins, ln_c)).collect(),
        assignment,
        counts,
    })
}

/// Fraction of samples in each bin.
pub fn participation_ratios(partition: &BinPartition) -> Vec<f64> {
    let n = partition.n_samples() as f64;
    partition.counts.iter().map(|&c| c as f64 / n).collect()
}

/// Which snapshot(s) accuracy is measured at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochSel {
    At(usize),
    /// Correctness averaged over the epochs of an inclusive window.
    Window(usize, usize),
    /// Each run's own last epoch.
    Final,
}

/// Per-sample correctness (fraction of the selected epochs at which the
/// prediction equals the label), per run and for the ensemble consensus.
#[derive(Debug, Clone, PartialEq)]
pub struct Correctness {
    pub model_ids: Vec<String>,
    pub per_run: Vec<Vec<f64>>,
    pub ensemble: Vec<f64>,
}

impl Correctness {
    pub fn compute(
        ensemble: &Ensemble,
        labels: &LabelVec,
        sel: EpochSel,
    ) -> Result<Self, PartitionError> {
        check_len("labels", ensemble.n_samples(), labels.len())?;
        match sel {
            EpochSel::At(t) => ensemble.check_epoch(t)?,
            EpochSel::Window(a, b) => ensemble.check_window(a, b)?,
            EpochSel::Final => {}
        }
        let per_run = ensemble
            .logs()
            .par_iter()
            .map(|log| {
                let epochs = epochs_for(sel, log.n_epochs());
                let w = epochs.clone().count() as f64;
                (0..log.n_samples())
                    .map(|i| {
                        let hits = epochs
                            .clone()
                            .filter(|&t| log.argmax(t, i) == labels[i])
                            .count();
                        hits as f64 / w
                    })
                    .collect()
            })
            .collect();
        let ens = match sel {
            EpochSel::Final => hits(&ensemble.predict_final(), labels),
            EpochSel::At(t) => hits(&ensemble.predict(t)?, labels),
            EpochSel::Window(a, b) => {
                let mut acc = vec![0.0; labels.len()];
                for t in a..=b {
                    for (a, h) in acc.iter_mut().zip(hits(&ensemble.predict(t)?, labels)) {
                        *a += h;
                    }
                }
                let w = (b - a + 1) as f64;
                acc.into_iter().map(|v| v / w).collect()
            }
        };
        Ok(Self {
            model_ids: ensemble.logs().iter().map(|l| l.model_id().to_owned()).collect(),
            per_run,
            ensemble: ens,
        })
    }

    /// Mean over runs of each run's overall accuracy.
    pub fn mean_accuracy(&self) -> f64 {
        let n = self.ensemble.len() as f64;
        self.per_run.iter().map(|r| r.iter().sum::<f64>() / n).sum::<f64>() / self.per_run.len() as f64
    }
}

fn epochs_for(sel: EpochSel, n_epochs: usize) -> std::ops::RangeInclusive<usize> {
    match sel {
        EpochSel::At(t) => t..=t,
        EpochSel::Window(a, b) => a..=b,
        EpochSel::Final => n_epochs..=n_epochs,
    }
}

fn hits(pred: &[usize], labels: &[usize]) -> Vec<f64> {
    pred.iter()
        .zip(labels)
        .map(|(p, l)| if p == l { 1.0 } else { 0.0 })
        .collect()
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<(), PartitionError> {
    if expected == found {
        Ok(())
    } else {
        Err(PartitionError::LengthMismatch {
            what,
            expected,
            found,
        })
    }
}

/// Accuracy of one per-sample correctness vector inside each bin; `None`
/// for empty bins.
pub fn per_bin_mean(
    partition: &BinPartition,
    correct: &[f64],
) -> Result<Vec<Option<f64>>, PartitionError> {
    check_len("correctness", partition.n_samples(), correct.len())?;
    let mut sums = vec![0.0; partition.n_bins()];
    for (&b, &c) in partition.assignment.iter().zip(correct) {
        sums[b] += c;
    }
    Ok(sums
        .into_iter()
        .zip(&partition.counts)
        .map(|(s, &n)| (n > 0).then(|| s / n as f64))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinStats {
    pub bin: usize,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub ratio: f64,
    /// `None` when the bin is empty.
    pub mean_accuracy: Option<f64>,
    pub ensemble_accuracy: Option<f64>,
}

impl BinStats {
    pub fn mean_error_rate(&self) -> Option<f64> {
        self.mean_accuracy.map(|a| 1.0 - a)
    }

    pub fn ensembling_gain(&self) -> Option<f64> {
        Some(self.ensemble_accuracy? - self.mean_accuracy?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinProfile {
    pub bins: Vec<BinStats>,
}

impl BinProfile {
    /// CSV `bin,lo,hi,count,ratio,mean_acc,ens_acc,gain`; empty bins leave
    /// the accuracy columns blank.
    pub fn write_csv(&self, w: &mut dyn Write) -> io::Result<()> {
        writeln!(w, "bin,lo,hi,count,ratio,mean_acc,ens_acc,gain")?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for b in &self.bins {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                b.bin,
                b.lo,
                b.hi,
                b.count,
                b.ratio,
                opt(b.mean_accuracy),
                opt(b.ensemble_accuracy),
                opt(b.ensembling_gain())
            )?;
        }
        Ok(())
    }
}

/// Per-bin mean single-run accuracy, ensemble accuracy and ensembling gain.
pub fn per_bin_accuracy(
    partition: &BinPartition,
    ensemble: &Ensemble,
    labels: &LabelVec,
    sel: EpochSel,
) -> Result<BinProfile, PartitionError> {
    check_len("partition", ensemble.n_samples(), partition.n_samples())?;
    let correct = Correctness::compute(ensemble, labels, sel)?;
    Ok(profile_from(partition, &correct))
}

pub fn profile_from(partition: &BinPartition, correct: &Correctness) -> BinProfile {
    let m = correct.per_run.len() as f64;
    let mut run_means = vec![0.0; partition.n_bins()];
    for run in &correct.per_run {
        for (acc, v) in run_means.iter_mut().zip(per_bin_mean(partition, run).unwrap()) {
            *acc += v.unwrap_or(0.0);
        }
    }
    let ens = per_bin_mean(partition, &correct.ensemble).unwrap();
    let ratios = partition.ratios();
    let bins = (0..partition.n_bins())
        .map(|k| {
            let count = partition.counts[k];
            BinStats {
                bin: k,
                lo: partition.edges[k],
                hi: partition.edges[k + 1],
                count,
                ratio: ratios[k],
                mean_accuracy: (count > 0).then(|| run_means[k] / m),
                ensemble_accuracy: ens[k],
            }
        })
        .collect();
    BinProfile { bins }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Subpop {
    Easy,
    Medium,
    Hard,
}

impl Subpop {
    pub const ALL: [Subpop; 3] = [Subpop::Easy, Subpop::Medium, Subpop::Hard];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Subpop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subpop::Easy => "easy",
            Subpop::Medium => "medium",
            Subpop::Hard => "hard",
        })
    }
}

/// Easy/medium/hard tags from the number of runs that classify each sample
/// correctly: easy iff count > hi, hard iff count < lo.
#[derive(Debug, Clone, PartialEq)]
pub struct SubpopSplit {
    pub lo: f64,
    pub hi: f64,
    pub n_runs: usize,
    pub correct_counts: Vec<usize>,
    pub groups: Vec<Subpop>,
    /// Indexed by [`Subpop::index`].
    pub ratios: [f64; 3],
}

impl SubpopSplit {
    /// Tag a vector of correct counts.
    pub fn from_counts(
        correct_counts: Vec<usize>,
        n_runs: usize,
        lo: f64,
        hi: f64,
    ) -> Result<Self, PartitionError> {
        if !(0.0 <= lo && lo < hi && hi <= n_runs as f64) {
            return Err(PartitionError::BadThresholds { lo, hi, n_runs });
        }
        let groups: Vec<Subpop> = correct_counts
            .iter()
            .map(|&c| {
                let c = c as f64;
                if c > hi {
                    Subpop::Easy
                } else if c < lo {
                    Subpop::Hard
                } else {
                    Subpop::Medium
                }
            })
            .collect();
        let mut counts = [0usize; 3];
        for g in &groups {
            counts[g.index()] += 1;
        }
        let n = groups.len().max(1) as f64;
        Ok(Self {
            lo,
            hi,
            n_runs,
            correct_counts,
            groups,
            ratios: counts.map(|c| c as f64 / n),
        })
    }

    pub fn members(&self, group: Subpop) -> impl Iterator<Item = usize> + '_ {
        self.groups
            .iter()
            .enumerate()
            .filter(move |(_, g)| **g == group)
            .map(|(i, _)| i)
    }
}

/// Default thresholds: one third and two thirds of the run count.
pub fn default_thresholds(n_runs: usize) -> (f64, f64) {
    (n_runs as f64 / 3.0, 2.0 * n_runs as f64 / 3.0)
}

/// Split by per-run argmax correctness at `epoch` (`None`: each run's last
/// epoch).
pub fn correct_count_split(
    ensemble: &Ensemble,
    labels: &LabelVec,
    epoch: Option<usize>,
    thresholds: Option<(f64, f64)>,
) -> Result<SubpopSplit, PartitionError> {
    let (lo, hi) = thresholds.unwrap_or_else(|| default_thresholds(ensemble.len()));
    let sel = match epoch {
        Some(t) => {
            ensemble.check_epoch(t)?;
            EpochSel::At(t)
        }
        None => EpochSel::Final,
    };
    let correct = Correctness::compute(ensemble, labels, sel)?;
    let counts = (0..labels.len())
        .map(|i| correct.per_run.iter().filter(|r| r[i] == 1.0).count())
        .collect();
    SubpopSplit::from_counts(counts, ensemble.len(), lo, hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupAccuracy {
    pub group: Subpop,
    pub count: usize,
    pub ratio: f64,
    /// `(model_id, accuracy)`; accuracy is `None` for an empty group.
    pub per_run: Vec<(String, Option<f64>)>,
    pub mean_accuracy: Option<f64>,
    pub ensemble_accuracy: Option<f64>,
}

/// Per-group accuracy of every run and of the ensemble consensus.
pub fn subpop_accuracy(
    split: &SubpopSplit,
    ensemble: &Ensemble,
    labels: &LabelVec,
    epoch: Option<usize>,
) -> Result<Vec<GroupAccuracy>, PartitionError> {
    check_len("split", ensemble.n_samples(), split.groups.len())?;
    let sel = epoch.map_or(EpochSel::Final, EpochSel::At);
    let correct = Correctness::compute(ensemble, labels, sel)?;
    let group_mean = |v: &[f64], g: Subpop| -> Option<f64> {
        let members: Vec<usize> = split.members(g).collect();
        (!members.is_empty())
            .then(|| members.iter().map(|&i| v[i]).sum::<f64>() / members.len() as f64)
    };
    Ok(Subpop::ALL
        .iter()
        .map(|&g| {
            let per_run: Vec<(String, Option<f64>)> = correct
                .model_ids
                .iter()
                .zip(&correct.per_run)
                .map(|(id, r)| (id.clone(), group_mean(r, g)))
                .collect();
            let count = split.members(g).count();
            let mean_accuracy = (count > 0).then(|| {
                per_run.iter().map(|(_, a)| a.unwrap()).sum::<f64>() / per_run.len() as f64
            });
            GroupAccuracy {
                group: g,
                count,
                ratio: split.ratios[g.index()],
                per_run,
                mean_accuracy,
                ensemble_accuracy: group_mean(&correct.ensemble, g),
            }
        })
        .collect())
}
