use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{read_cpl, read_labels, read_metrics, read_tags, FormatError};
use super::{LabelVec, MetricsSeries, ProbLog, TagTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetRole {
    Train,
    Id,
    Ood,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub name: String,
    pub role: DatasetRole,
    pub n_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunEntry {
    pub model_id: String,
    pub family: String,
    pub seed: u64,
    pub param_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<PathBuf>,
    /// CPL path per dataset name.
    pub logs: BTreeMap<String, PathBuf>,
}

/// The manifest as written on disk (TOML). Paths are relative to the
/// manifest's directory unless absolute.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    /// Runs whose averaged probabilities define confusion scores. Empty
    /// means every run.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scoring_runs: Vec<String>,
    #[serde(default)]
    pub datasets: Vec<DatasetEntry>,
    #[serde(default)]
    pub runs: Vec<RunEntry>,
}

impl ManifestFile {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}

/// A manifest with every referenced file loaded and cross-checked.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub file: ManifestFile,
    pub base_dir: PathBuf,
    n_classes: usize,
    scoring_runs: Vec<String>,
    logs: BTreeMap<(String, String), Arc<ProbLog>>,
    labels: BTreeMap<String, LabelVec>,
    tags: BTreeMap<String, TagTable>,
    metrics: BTreeMap<String, MetricsSeries>,
}

impl Manifest {
    /// Resolve and load everything `file` references, relative to `base_dir`.
    pub fn load(file: ManifestFile, base_dir: impl Into<PathBuf>) -> Result<Self, FormatError> {
        let base_dir = base_dir.into();
        validate_schema(&file)?;
        let resolve = |p: &Path| -> Result<PathBuf, FormatError> {
            let full = if p.is_absolute() { p.to_owned() } else { base_dir.join(p) };
            if full.exists() {
                Ok(full)
            } else {
                Err(FormatError::MissingFile(full))
            }
        };

        let mut n_classes: Option<(usize, PathBuf)> = None;
        let mut logs = BTreeMap::new();
        for run in &file.runs {
            for (dataset, path) in &run.logs {
                let full = resolve(path)?;
                let log = read_cpl(&full)?.with_model_id(run.model_id.clone());
                match &n_classes {
                    None => n_classes = Some((log.n_classes(), full.clone())),
                    Some((c, _)) if *c != log.n_classes() => {
                        return Err(FormatError::InconsistentClassCount {
                            first: *c,
                            other: log.n_classes(),
                            path: full,
                        })
                    }
                    Some(_) => {}
                }
                let entry = file.datasets.iter().find(|d| &d.name == dataset).unwrap();
                if log.n_samples() != entry.n_samples {
                    return Err(FormatError::SchemaError(format!(
                        "{}: {} samples, dataset {:?} declares {}",
                        full.display(),
                        log.n_samples(),
                        dataset,
                        entry.n_samples
                    )));
                }
                logs.insert((run.model_id.clone(), dataset.clone()), Arc::new(log));
            }
        }
        let n_classes = n_classes
            .map(|(c, _)| c)
            .ok_or_else(|| FormatError::SchemaError("manifest lists no runs".into()))?;

        let mut labels = BTreeMap::new();
        let mut tags = BTreeMap::new();
        for d in &file.datasets {
            if let Some(p) = &d.labels {
                labels.insert(d.name.clone(), read_labels(resolve(p)?, d.n_samples, n_classes)?);
            }
            if let Some(p) = &d.tags {
                tags.insert(d.name.clone(), read_tags(resolve(p)?, d.n_samples)?);
            }
        }
        let mut metrics = BTreeMap::new();
        for run in &file.runs {
            if let Some(p) = &run.metrics {
                metrics.insert(run.model_id.clone(), read_metrics(resolve(p)?)?);
            }
        }
        let scoring_runs = if file.scoring_runs.is_empty() {
            file.runs.iter().map(|r| r.model_id.clone()).collect()
        } else {
            file.scoring_runs.clone()
        };
        Ok(Self {
            file,
            base_dir,
            n_classes,
            scoring_runs,
            logs,
            labels,
            tags,
            metrics,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn datasets(&self) -> &[DatasetEntry] {
        &self.file.datasets
    }

    pub fn runs(&self) -> &[RunEntry] {
        &self.file.runs
    }

    pub fn dataset(&self, name: &str) -> Option<&DatasetEntry> {
        self.file.datasets.iter().find(|d| d.name == name)
    }

    pub fn run(&self, model_id: &str) -> Option<&RunEntry> {
        self.file.runs.iter().find(|r| r.model_id == model_id)
    }

    pub fn id_dataset(&self) -> &DatasetEntry {
        self.file
            .datasets
            .iter()
            .find(|d| d.role == DatasetRole::Id)
            .expect("validated: exactly one id dataset")
    }

    pub fn train_dataset(&self) -> Option<&DatasetEntry> {
        self.file.datasets.iter().find(|d| d.role == DatasetRole::Train)
    }

    /// OOD datasets in lexicographic name order.
    pub fn ood_datasets(&self) -> Vec<&DatasetEntry> {
        let mut v: Vec<_> = self
            .file
            .datasets
            .iter()
            .filter(|d| d.role == DatasetRole::Ood)
            .collect();
        v.sort_by(|a, b| a.name.cmp(&b.name));
        v
    }

    pub fn scoring_runs(&self) -> &[String] {
        &self.scoring_runs
    }

    pub fn log(&self, model_id: &str, dataset: &str) -> Option<&Arc<ProbLog>> {
        self.logs.get(&(model_id.to_owned(), dataset.to_owned()))
    }

    pub fn labels(&self, dataset: &str) -> Option<&LabelVec> {
        self.labels.get(dataset)
    }

    pub fn tags(&self, dataset: &str) -> Option<&TagTable> {
        self.tags.get(dataset)
    }

    pub fn metrics(&self, model_id: &str) -> Option<&MetricsSeries> {
        self.metrics.get(model_id)
    }
}

fn validate_schema(file: &ManifestFile) -> Result<(), FormatError> {
    let mut names = BTreeSet::new();
    for d in &file.datasets {
        if !names.insert(d.name.as_str()) {
            return Err(FormatError::SchemaError(format!(
                "duplicate dataset name {:?}",
                d.name
            )));
        }
        if d.n_samples == 0 {
            return Err(FormatError::SchemaError(format!("dataset {:?} is empty", d.name)));
        }
        if d.labels.is_none() && d.role != DatasetRole::Ood {
            if d.role == DatasetRole::Id {
                return Err(FormatError::MissingIdLabels(d.name.clone()));
            }
            return Err(FormatError::SchemaError(format!(
                "train dataset {:?} has no labels",
                d.name
            )));
        }
    }
    let n_id = file.datasets.iter().filter(|d| d.role == DatasetRole::Id).count();
    if n_id != 1 {
        return Err(FormatError::SchemaError(format!(
            "expected exactly one id dataset, found {n_id}"
        )));
    }
    let mut ids = BTreeSet::new();
    for r in &file.runs {
        if !ids.insert(r.model_id.as_str()) {
            return Err(FormatError::SchemaError(format!(
                "duplicate model id {:?}",
                r.model_id
            )));
        }
        for d in file.datasets.iter().filter(|d| d.role != DatasetRole::Train) {
            if !r.logs.contains_key(&d.name) {
                return Err(FormatError::SchemaError(format!(
                    "run {:?} has no log for dataset {:?}",
                    r.model_id, d.name
                )));
            }
        }
        if let Some(unknown) = r.logs.keys().find(|k| !names.contains(k.as_str())) {
            return Err(FormatError::SchemaError(format!(
                "run {:?} logs unknown dataset {unknown:?}",
                r.model_id
            )));
        }
    }
    if let Some(bad) = file.scoring_runs.iter().find(|s| !ids.contains(s.as_str())) {
        return Err(FormatError::SchemaError(format!(
            "scoring run {bad:?} is not a listed run"
        )));
    }
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest, FormatError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    let file: ManifestFile =
        toml::from_str(&text).map_err(|e| FormatError::SchemaError(e.to_string()))?;
    let base = path.parent().map(Path::to_owned).unwrap_or_default();
    Manifest::load(file, base)
}
