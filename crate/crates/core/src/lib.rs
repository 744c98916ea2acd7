//! Ensemble confusion scores and out-of-distribution accuracy prediction.
//!
//! The crate ingests per-epoch class-probability logs (one CPL file per model
//! run and dataset), averages them over an ensemble, and turns the entropy of
//! the averaged distribution into a label-free difficulty score per sample.
//! Those scores partition a dataset into confusion groups; per-group accuracy
//! on a labelled in-distribution set, re-weighted by the group ratios of a
//! shifted set, predicts accuracy on that set.
//!
//! Epochs are 1-based everywhere in the public API: epoch `t` is the `t`-th
//! snapshot stored in a log.
//!
//! The [`synth`] and [`trainer`] modules close the loop: they generate data
//! with known subpopulation structure and train small ensembles on it, so the
//! whole pipeline can be checked against ground truth.

pub mod fsutil;
pub mod models;
pub mod partition;
pub mod phases;
pub mod predictor;
pub mod proba_log;
pub mod rng;
pub mod scoring;
pub mod synth;
pub mod trainer;

pub use partition::{BinPartition, BinProfile, Subpop, SubpopSplit};
pub use predictor::{Analysis, OodPrediction};
pub use proba_log::{LabelVec, Manifest, MetricsSeries, ProbLog};
pub use scoring::{Ensemble, ScoreTable};

/// Tool name and version, embedded in every artifact header.
pub const TOOL_VERSION: &str = concat!("clens ", env!("CARGO_PKG_VERSION"));
