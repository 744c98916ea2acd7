//! OOD accuracy prediction: per-bin accuracy on the labelled ID set,
//! re-weighted by the bin ratios of an unlabelled shifted set.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};

use serde::Serialize;

use crate::partition::{self, bin_scores, BinPartition, Correctness, EpochSel, PartitionError};
use crate::proba_log::{DatasetRole, Manifest};
use crate::scoring::{Ensemble, ScoringError};

/// Model id under which the scoring ensemble's consensus is reported.
pub const ENSEMBLE_ID: &str = "ensemble";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PredictError {
    #[error("every ID bin is empty")]
    AllIdBinsEmpty,
    #[error("length mismatch: {accs} accuracies, {counts} counts, {ratios} ratios")]
    LengthMismatch {
        accs: usize,
        counts: usize,
        ratios: usize,
    },
    #[error("OOD ratios sum to {0}, expected 1")]
    RatiosNotNormalized(f64),
    #[error("unknown model {0:?}")]
    UnknownModel(String),
    #[error("unknown dataset {0:?}")]
    UnknownDataset(String),
    #[error("dataset {0:?} is a training set; predictions target id/ood sets")]
    NotATestSet(String),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixturePrediction {
    pub accuracy: f64,
    /// Empty ID bins with positive OOD mass that borrowed a neighbour's accuracy.
    pub fallback_bins_used: usize,
}

/// `Σ_k ood_ratio_k · acc_k`. An empty ID bin (count 0) takes the accuracy
/// of the nearest non-empty bin by center distance, lower index on ties.
pub fn predict_ood_accuracy(
    id_bin_accs: &[f64],
    id_bin_counts: &[usize],
    ood_ratios: &[f64],
) -> Result<MixturePrediction, PredictError> {
    let n = id_bin_accs.len();
    if id_bin_counts.len() != n || ood_ratios.len() != n {
        return Err(PredictError::LengthMismatch {
            accs: n,
            counts: id_bin_counts.len(),
            ratios: ood_ratios.len(),
        });
    }
    let total: f64 = ood_ratios.iter().sum();
    if !((total - 1.0).abs() <= 1e-9) {
        return Err(PredictError::RatiosNotNormalized(total));
    }
    if id_bin_counts.iter().all(|&c| c == 0) {
        return Err(PredictError::AllIdBinsEmpty);
    }
    let mut accuracy = 0.0;
    let mut fallback_bins_used = 0;
    for k in 0..n {
        if ood_ratios[k] == 0.0 {
            continue;
        }
        let source = if id_bin_counts[k] > 0 {
            k
        } else {
            fallback_bins_used += 1;
            nearest_nonempty(id_bin_counts, k)
        };
        accuracy += ood_ratios[k] * id_bin_accs[source];
    }
    Ok(MixturePrediction {
        accuracy: accuracy.clamp(0.0, 1.0),
        fallback_bins_used,
    })
}

fn nearest_nonempty(counts: &[usize], k: usize) -> usize {
    for d in 1..counts.len() {
        if k >= d && counts[k - d] > 0 {
            return k - d;
        }
        if k + d < counts.len() && counts[k + d] > 0 {
            return k + d;
        }
    }
    unreachable!("at least one bin is non-empty")
}

/// Which scores partition the samples: the confusion score over an epoch
/// window, or the single-epoch entropy score `e_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreBasis {
    Window(usize, usize),
    Epoch(usize),
}

impl fmt::Display for ScoreBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoreBasis::Window(a, b) => write!(f, "window {a}:{b}"),
            ScoreBasis::Epoch(t) => write!(f, "epoch {t}"),
        }
    }
}

impl Serialize for ScoreBasis {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OodPrediction {
    pub ood_dataset: String,
    pub model_id: String,
    pub predicted: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub actual: Option<f64>,
    /// `predicted - actual`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
    pub n_bins: usize,
    pub basis: ScoreBasis,
    pub fallback_bins_used: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictConfig {
    pub n_bins: usize,
    /// `None`: confusion over every epoch the scoring runs share.
    pub basis: Option<ScoreBasis>,
    /// Snapshot whose accuracy is being predicted.
    pub eval: EpochSel,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            n_bins: partition::DEFAULT_BINS,
            basis: None,
            eval: EpochSel::Final,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub name: String,
    pub n_samples: usize,
    pub mean_confusion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionReport {
    pub n_bins: usize,
    pub basis: ScoreBasis,
    pub datasets: Vec<DatasetSummary>,
    pub predictions: Vec<OodPrediction>,
}

impl PredictionReport {
    /// CSV `model_id,ood,predicted,actual,residual,fallback_bins`.
    pub fn write_csv(&self, w: &mut dyn Write) -> io::Result<()> {
        writeln!(w, "model_id,ood,predicted,actual,residual,fallback_bins")?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for p in &self.predictions {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                p.model_id,
                p.ood_dataset,
                p.predicted,
                opt(p.actual),
                opt(p.residual),
                p.fallback_bins_used
            )?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }
}

/// Scoring ensembles for every test dataset of a manifest.
pub struct Analysis<'a> {
    manifest: &'a Manifest,
    scorers: BTreeMap<String, Ensemble>,
}

impl<'a> Analysis<'a> {
    pub fn new(manifest: &'a Manifest) -> Result<Self, PredictError> {
        let mut scorers = BTreeMap::new();
        for d in manifest.datasets() {
            let logs: Vec<_> = manifest
                .scoring_runs()
                .iter()
                .filter_map(|id| manifest.log(id, &d.name).cloned())
                .collect();
            if logs.len() == manifest.scoring_runs().len() {
                scorers.insert(d.name.clone(), Ensemble::new(logs)?);
            }
        }
        Ok(Self { manifest, scorers })
    }

    pub fn manifest(&self) -> &Manifest {
        self.manifest
    }

    pub fn scorer(&self, dataset: &str) -> Result<&Ensemble, PredictError> {
        self.scorers
            .get(dataset)
            .ok_or_else(|| PredictError::UnknownDataset(dataset.to_owned()))
    }

    /// Full window shared by the scoring runs on every test dataset.
    pub fn full_window(&self) -> ScoreBasis {
        let end = self
            .manifest
            .datasets()
            .iter()
            .filter(|d| d.role != DatasetRole::Train)
            .filter_map(|d| self.scorers.get(&d.name))
            .map(Ensemble::n_epochs)
            .min()
            .unwrap_or(1);
        ScoreBasis::Window(1, end)
    }

    pub fn scores(&self, dataset: &str, basis: ScoreBasis) -> Result<Vec<f64>, PredictError> {
        let ens = self.scorer(dataset)?;
        Ok(match basis {
            ScoreBasis::Window(a, b) => ens.confusion_scores(a, b)?,
            ScoreBasis::Epoch(t) => ens.entropy_scores_at(t)?,
        })
    }

    pub fn partition(
        &self,
        dataset: &str,
        basis: ScoreBasis,
        n_bins: usize,
    ) -> Result<BinPartition, PredictError> {
        let scores = self.scores(dataset, basis)?;
        Ok(bin_scores(&scores, n_bins, self.manifest.n_classes())?)
    }

    /// Per-sample correctness of `model_id` (or [`ENSEMBLE_ID`]) on a
    /// labelled dataset; `None` when the dataset has no labels.
    pub fn correctness(
        &self,
        model_id: &str,
        dataset: &str,
        eval: EpochSel,
    ) -> Result<Option<Vec<f64>>, PredictError> {
        let Some(labels) = self.manifest.labels(dataset) else {
            return Ok(None);
        };
        let ens = if model_id == ENSEMBLE_ID {
            self.scorer(dataset)?.clone()
        } else {
            self.manifest
                .run(model_id)
                .ok_or_else(|| PredictError::UnknownModel(model_id.to_owned()))?;
            let log = self
                .manifest
                .log(model_id, dataset)
                .ok_or_else(|| PredictError::UnknownDataset(dataset.to_owned()))?;
            Ensemble::new([log.clone()])?
        };
        let c = Correctness::compute(&ens, labels, eval)?;
        Ok(Some(if model_id == ENSEMBLE_ID {
            c.ensemble
        } else {
            c.per_run.into_iter().next().unwrap()
        }))
    }

    fn check_target(&self, ood: &str) -> Result<(), PredictError> {
        match self.manifest.dataset(ood) {
            None => Err(PredictError::UnknownDataset(ood.to_owned())),
            Some(d) if d.role == DatasetRole::Train => Err(PredictError::NotATestSet(ood.to_owned())),
            Some(_) => Ok(()),
        }
    }

    fn predict_binned(
        &self,
        model_id: &str,
        id_part: &BinPartition,
        ood_part: &BinPartition,
        ood: &str,
        basis: ScoreBasis,
        eval: EpochSel,
    ) -> Result<OodPrediction, PredictError> {
        let id_name = &self.manifest.id_dataset().name;
        let id_correct = self
            .correctness(model_id, id_name, eval)?
            .expect("id labels are validated at load time");
        let accs: Vec<f64> = partition::per_bin_mean(id_part, &id_correct)?
            .into_iter()
            .map(|a| a.unwrap_or(0.0))
            .collect();
        let mix = predict_ood_accuracy(&accs, id_part.counts(), &ood_part.ratios())?;
        let actual = self
            .correctness(model_id, ood, eval)?
            .map(|c| c.iter().sum::<f64>() / c.len() as f64);
        Ok(OodPrediction {
            ood_dataset: ood.to_owned(),
            model_id: model_id.to_owned(),
            predicted: mix.accuracy,
            actual,
            residual: actual.map(|a| mix.accuracy - a),
            n_bins: id_part.n_bins(),
            basis,
            fallback_bins_used: mix.fallback_bins_used,
        })
    }

    pub fn predict(
        &self,
        model_id: &str,
        basis: ScoreBasis,
        n_bins: usize,
        ood: &str,
        eval: EpochSel,
    ) -> Result<OodPrediction, PredictError> {
        self.check_target(ood)?;
        if model_id != ENSEMBLE_ID && self.manifest.run(model_id).is_none() {
            return Err(PredictError::UnknownModel(model_id.to_owned()));
        }
        let id_name = &self.manifest.id_dataset().name;
        let id_part = self.partition(id_name, basis, n_bins)?;
        let ood_part = self.partition(ood, basis, n_bins)?;
        self.predict_binned(model_id, &id_part, &ood_part, ood, basis, eval)
    }

    /// Prediction partitioned by the confusion score over `window`.
    pub fn predict_for_model(
        &self,
        model_id: &str,
        window: (usize, usize),
        n_bins: usize,
        ood: &str,
    ) -> Result<OodPrediction, PredictError> {
        let basis = ScoreBasis::Window(window.0, window.1);
        self.predict(model_id, basis, n_bins, ood, EpochSel::Final)
    }

    /// Prediction partitioned by the entropy score at a single epoch.
    pub fn predict_epoch_variant(
        &self,
        model_id: &str,
        epoch: usize,
        n_bins: usize,
        ood: &str,
    ) -> Result<OodPrediction, PredictError> {
        self.predict(model_id, ScoreBasis::Epoch(epoch), n_bins, ood, EpochSel::Final)
    }

    /// Predictions for every run plus the ensemble on the ID set (self-row)
    /// and every OOD set, ordered by model id then dataset name.
    pub fn prediction_report(&self, config: &PredictConfig) -> Result<PredictionReport, PredictError> {
        let basis = config.basis.unwrap_or_else(|| self.full_window());
        let id_name = self.manifest.id_dataset().name.clone();
        let mut targets: Vec<String> = std::iter::once(id_name.clone())
            .chain(self.manifest.ood_datasets().iter().map(|d| d.name.clone()))
            .collect();
        targets.sort();

        let mut parts = BTreeMap::new();
        let mut datasets = Vec::new();
        for name in &targets {
            let scores = self.scores(name, basis)?;
            datasets.push(DatasetSummary {
                name: name.clone(),
                n_samples: scores.len(),
                mean_confusion: scores.iter().sum::<f64>() / scores.len() as f64,
            });
            parts.insert(name.clone(), bin_scores(&scores, config.n_bins, self.manifest.n_classes())?);
        }

        let mut models: Vec<String> = self.manifest.runs().iter().map(|r| r.model_id.clone()).collect();
        models.push(ENSEMBLE_ID.to_owned());
        models.sort();
        let mut predictions = Vec::new();
        for model in &models {
            for target in &targets {
                predictions.push(self.predict_binned(
                    model,
                    &parts[&id_name],
                    &parts[target],
                    target,
                    basis,
                    config.eval,
                )?);
            }
        }
        Ok(PredictionReport {
            n_bins: config.n_bins,
            basis,
            datasets,
            predictions,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_average() {
        let p = predict_ood_accuracy(&[0.9, 0.5, 0.1], &[5, 5, 5], &[0.2, 0.3, 0.5]).unwrap();
        assert!((p.accuracy - 0.38).abs() < 1e-12);
        assert_eq!(p.fallback_bins_used, 0);
    }

    #[test]
    fn self_consistency() {
        let counts = [3usize, 5, 2];
        let correct = [3.0, 2.0, 0.0];
        let accs: Vec<f64> = correct.iter().zip(&counts).map(|(c, &n)| c / n as f64).collect();
        let ratios: Vec<f64> = counts.iter().map(|&c| c as f64 / 10.0).collect();
        let p = predict_ood_accuracy(&accs, &counts, &ratios).unwrap();
        assert!((p.accuracy - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_bin_borrows_lower_neighbour_on_tie() {
        let p = predict_ood_accuracy(&[0.9, 0.0, 0.1], &[4, 0, 4], &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(p.accuracy, 0.9);
        assert_eq!(p.fallback_bins_used, 1);
        let q = predict_ood_accuracy(&[0.0, 0.0, 0.1, 0.7], &[0, 0, 4, 4], &[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(q.accuracy, 0.1);
    }

    #[test]
    fn errors() {
        assert_eq!(
            predict_ood_accuracy(&[0.5], &[0], &[1.0]),
            Err(PredictError::AllIdBinsEmpty)
        );
        assert!(matches!(
            predict_ood_accuracy(&[0.5, 0.5], &[1], &[1.0]),
            Err(PredictError::LengthMismatch { .. })
        ));
        assert!(matches!(
            predict_ood_accuracy(&[0.5, 0.5], &[1, 1], &[0.5, 0.4]),
            Err(PredictError::RatiosNotNormalized(_))
        ));
    }

    #[test]
    fn constant_accuracy_gives_constant_prediction() {
        let p = predict_ood_accuracy(&[0.7; 4], &[1, 2, 3, 4], &[0.1, 0.6, 0.0, 0.3]).unwrap();
        assert!((p.accuracy - 0.7).abs() < 1e-12);
    }
}
