//! Small feedforward ensembles trained with mini-batch SGD + momentum.
//!
//! After every epoch each run forwards all evaluation sets and records the
//! softmax rows, producing one probability log per (run, dataset) plus a
//! metrics series. Runs train in parallel; each run is sequential and fully
//! determined by its architecture, seed and the config.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::proba_log::{
    write_cpl, write_labels, write_metrics, write_tags, DatasetEntry, DatasetRole, FormatError, ManifestFile,
    MetricsRow, MetricsSeries, ProbLog, RunEntry,
};
use crate::rng::Stream;
use crate::synth::SynthDataset;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid architecture: {0}")]
    BadArch(String),
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("input has {found} features, model expects {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("non-finite loss in run {run} at epoch {epoch}")]
    NonFiniteLoss { run: String, epoch: usize },
    #[error("dataset {0:?} is empty")]
    EmptyData(String),
    #[error("label {label} out of range for {n_classes} classes")]
    BadLabel { label: usize, n_classes: usize },
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyArch {
    /// Hidden layer widths; empty means multinomial logistic regression.
    pub hidden: Vec<usize>,
    pub input_dim: usize,
    pub n_classes: usize,
}

impl ToyArch {
    pub fn new(hidden: Vec<usize>, input_dim: usize, n_classes: usize) -> Result<Self, TrainError> {
        let arch = Self { hidden, input_dim, n_classes };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.input_dim == 0 || self.n_classes < 2 || self.hidden.contains(&0) {
            return Err(TrainError::BadArch(format!("{self:?}")));
        }
        Ok(())
    }

    /// Layer sizes from input to output.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim];
        s.extend(&self.hidden);
        s.push(self.n_classes);
        s
    }

    pub fn param_count(&self) -> usize {
        self.sizes().windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    /// Short family name, e.g. `linear` or `mlp-64x32`.
    pub fn family(&self) -> String {
        if self.hidden.is_empty() {
            "linear".into()
        } else {
            let ws: Vec<String> = self.hidden.iter().map(usize::to_string).collect();
            format!("mlp-{}", ws.join("x"))
        }
    }
}

/// Parameters stored flat: per layer, the `in × out` weight matrix
/// (row-major by input unit) followed by the `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub arch: ToyArch,
    pub params: Vec<f64>,
}

impl ToyModel {
    pub fn zeros(arch: ToyArch) -> Self {
        let n = arch.param_count();
        Self { arch, params: vec![0.0; n] }
    }

    fn offsets(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        let mut off = 0;
        for w in self.arch.sizes().windows(2) {
            out.push((off, w[0], w[1]));
            off += (w[0] + 1) * w[1];
        }
        out
    }

    /// `(weights, biases)` of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (off, i, o) = self.offsets()[l];
        (&self.params[off..off + i * o], &self.params[off + i * o..off + (i + 1) * o])
    }
}

pub fn init_model(arch: &ToyArch, seed: u64) -> ToyModel {
    let mut model = ToyModel::zeros(arch.clone());
    let mut s = Stream::substream(seed, "init");
    for (off, fan_in, fan_out) in model.offsets() {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for w in &mut model.params[off..off + fan_in * fan_out] {
            *w = s.uniform_range(-bound, bound);
        }
    }
    model
}

fn affine(params: &[f64], off: usize, n_in: usize, n_out: usize, x: &[f64], z: &mut Vec<f64>) {
    z.clear();
    z.extend_from_slice(&params[off + n_in * n_out..off + (n_in + 1) * n_out]);
    for (i, &xi) in x.iter().enumerate() {
        if xi != 0.0 {
            let row = &params[off + i * n_out..off + (i + 1) * n_out];
            for (zo, &w) in z.iter_mut().zip(row) {
                *zo += xi * w;
            }
        }
    }
}

/// In-place softmax with max subtraction; returns log-sum-exp of the input.
pub fn softmax_in_place(z: &mut [f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        total += *v;
    }
    for v in z.iter_mut() {
        *v /= total;
    }
    m + total.ln()
}

/// Activations of one forward pass, kept for backprop.
struct Trace {
    /// Inputs to each layer (`acts[0]` is x); post-ReLU for hidden layers.
    acts: Vec<Vec<f64>>,
    logits: Vec<f64>,
    probs: Vec<f64>,
    lse: f64,
}

fn forward_trace(model: &ToyModel, x: &[f64]) -> Trace {
    let offsets = model.offsets();
    let mut acts = vec![x.to_vec()];
    let mut z = Vec::new();
    for (l, &(off, n_in, n_out)) in offsets.iter().enumerate() {
        affine(&model.params, off, n_in, n_out, acts.last().unwrap(), &mut z);
        if l + 1 < offsets.len() {
            acts.push(z.iter().map(|v| v.max(0.0)).collect());
        }
    }
    let logits = z.clone();
    let lse = softmax_in_place(&mut z);
    Trace { acts, logits, probs: z, lse }
}

pub fn forward(model: &ToyModel, x: &[f64]) -> Result<Vec<f64>, TrainError> {
    if x.len() != model.arch.input_dim {
        return Err(TrainError::ShapeMismatch {
            expected: model.arch.input_dim,
            found: x.len(),
        });
    }
    Ok(forward_trace(model, x).probs)
}

/// Cross-entropy of one sample; adds its gradient, scaled by `scale`, into `grad`.
fn backprop(model: &ToyModel, x: &[f64], y: usize, scale: f64, grad: &mut [f64]) -> f64 {
    let tr = forward_trace(model, x);
    let loss = tr.lse - tr.logits[y];
    let offsets = model.offsets();
    let mut delta: Vec<f64> = tr.probs.clone();
    delta[y] -= 1.0;
    for l in (0..offsets.len()).rev() {
        let (off, n_in, n_out) = offsets[l];
        let a = &tr.acts[l];
        for (i, &ai) in a.iter().enumerate() {
            if ai != 0.0 {
                let g = &mut grad[off + i * n_out..off + (i + 1) * n_out];
                for (gw, &d) in g.iter_mut().zip(&delta) {
                    *gw += scale * ai * d;
                }
            }
        }
        for (gb, &d) in grad[off + n_in * n_out..off + (n_in + 1) * n_out].iter_mut().zip(&delta) {
            *gb += scale * d;
        }
        if l > 0 {
            let prev: Vec<f64> = (0..n_in)
                .map(|i| {
                    if a[i] > 0.0 {
                        let row = &model.params[off + i * n_out..off + (i + 1) * n_out];
                        row.iter().zip(&delta).map(|(w, d)| w * d).sum()
                    } else {
                        0.0
                    }
                })
                .collect();
            delta = prev;
        }
    }
    loss
}

/// Feature rows and labels of one dataset.
#[derive(Debug, Clone, Copy)]
pub struct DataView<'a> {
    pub name: &'a str,
    pub n_features: usize,
    pub features: &'a [f32],
    pub labels: &'a [usize],
}

impl<'a> DataView<'a> {
    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.features[i * self.n_features..(i + 1) * self.n_features]
            .iter()
            .map(|&v| v as f64)
            .collect()
    }

    fn check(&self, arch: &ToyArch) -> Result<(), TrainError> {
        if self.n_samples() == 0 {
            return Err(TrainError::EmptyData(self.name.into()));
        }
        if self.n_features != arch.input_dim || self.features.len() != self.n_samples() * self.n_features {
            return Err(TrainError::ShapeMismatch {
                expected: arch.input_dim,
                found: self.n_features,
            });
        }
        if let Some(&label) = self.labels.iter().find(|&&l| l >= arch.n_classes) {
            return Err(TrainError::BadLabel {
                label,
                n_classes: arch.n_classes,
            });
        }
        Ok(())
    }
}

impl<'a> From<&'a SynthDataset> for DataView<'a> {
    fn from(d: &'a SynthDataset) -> Self {
        Self {
            name: &d.name,
            n_features: d.n_features,
            features: &d.features,
            labels: &d.labels,
        }
    }
}

/// Mean cross-entropy and gradient over `indices`.
pub fn loss_and_grad(model: &ToyModel, data: &DataView, indices: &[usize]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; model.params.len()];
    let scale = 1.0 / indices.len() as f64;
    let mut loss = 0.0;
    for &i in indices {
        loss += backprop(model, &data.row(i), data.labels[i], scale, &mut grad);
    }
    (loss * scale, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Also record probabilities of the untrained model.
    #[serde(default)]
    pub log_init: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 128,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 0,
            log_init: false,
        }
    }
}

impl TrainConfig {
    /// Slow schedule used with the three-phase synthetic preset.
    pub fn three_phase(seed: u64) -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            learning_rate: 0.01,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.learning_rate >= 0.0) {
            return Err(TrainError::BadConfig(format!(
                "epochs and batch_size must be >= 1 and learning_rate >= 0 (got {}, {}, {})",
                self.epochs, self.batch_size, self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::BadConfig("momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Model plus optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: ToyModel,
    pub velocity: Vec<f64>,
}

impl TrainState {
    pub fn new(model: ToyModel) -> Self {
        let n = model.params.len();
        Self { model, velocity: vec![0.0; n] }
    }
}

/// One pass over a shuffle seeded by `(seed, epoch)`. Returns the mean
/// mini-batch loss and the accuracy of pre-update predictions.
pub fn train_epoch(
    state: &mut TrainState,
    data: &DataView,
    cfg: &TrainConfig,
    seed: u64,
    epoch: usize,
) -> Result<(f64, f64), TrainError> {
    data.check(&state.model.arch)?;
    let mut order: Vec<usize> = (0..data.n_samples()).collect();
    Stream::substream(seed, &format!("shuffle/{epoch}")).shuffle(&mut order);
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    for batch in order.chunks(cfg.batch_size) {
        let mut grad = vec![0.0; state.model.params.len()];
        let scale = 1.0 / batch.len() as f64;
        for &i in batch {
            let x = data.row(i);
            let y = data.labels[i];
            let loss = backprop(&state.model, &x, y, scale, &mut grad);
            total_loss += loss;
            // loss <= ln 2 means p_y >= 1/2, i.e. the argmax is y
            if loss < std::f64::consts::LN_2 {
                correct += 1;
            }
        }
        if !total_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFiniteLoss {
                run: state.model.arch.family(),
                epoch,
            });
        }
        for ((w, v), g) in state.model.params.iter_mut().zip(&mut state.velocity).zip(&grad) {
            *v = cfg.momentum * *v + g;
            *w -= cfg.learning_rate * *v;
        }
        // dead ReLUs hide NaN weights from the loss
        if state.model.params.iter().any(|w| !w.is_finite()) {
            return Err(TrainError::NonFiniteLoss {
                run: state.model.arch.family(),
                epoch,
            });
        }
    }
    let n = data.n_samples() as f64;
    Ok((total_loss / n, correct as f64 / n))
}

/// Softmax rows (f32, sample-major), mean cross-entropy and accuracy.
pub fn evaluate(model: &ToyModel, data: &DataView) -> (Vec<f32>, f64, f64) {
    let c = model.arch.n_classes;
    let mut rows = Vec::with_capacity(data.n_samples() * c);
    let mut loss = 0.0;
    let mut correct = 0usize;
    for i in 0..data.n_samples() {
        let tr = forward_trace(model, &data.row(i));
        let y = data.labels[i];
        loss += tr.lse - tr.logits[y];
        if crate::scoring::argmax(&tr.probs) == y {
            correct += 1;
        }
        rows.extend(tr.probs.iter().map(|&p| p as f32));
    }
    let n = data.n_samples() as f64;
    (rows, loss / n, correct as f64 / n)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSpec {
    pub arch: ToyArch,
    pub seed: u64,
}

impl RunSpec {
    pub fn model_id(&self) -> String {
        format!("{}-s{}", self.arch.family(), self.seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub spec: RunSpec,
    /// One log per evaluation set, in the order given.
    pub logs: Vec<ProbLog>,
    /// Epoch-0 snapshots, when requested.
    pub init_logs: Option<Vec<ProbLog>>,
    pub metrics: MetricsSeries,
}

impl RunOutput {
    pub fn model_id(&self) -> String {
        self.spec.model_id()
    }
}

/// Train one run on `train` and log every set in `eval` after each epoch.
pub fn train_run(spec: &RunSpec, train: &DataView, eval: &[DataView], cfg: &TrainConfig) -> Result<RunOutput, TrainError> {
    cfg.validate()?;
    spec.arch.validate()?;
    train.check(&spec.arch)?;
    for e in eval {
        e.check(&spec.arch)?;
    }
    let id = spec.model_id();
    let run_seed = crate::rng::derive_seed(cfg.seed, &id);
    let mut state = TrainState::new(init_model(&spec.arch, run_seed));
    let c = spec.arch.n_classes;
    let mut buffers: Vec<Vec<f32>> = eval.iter().map(|_| Vec::new()).collect();
    let mut rows = Vec::new();
    let init_logs = if cfg.log_init {
        let mut logs = Vec::new();
        for e in eval {
            let (p, _, _) = evaluate(&state.model, e);
            logs.push(ProbLog::new(id.clone(), 1, e.n_samples(), c, p)?);
        }
        Some(logs)
    } else {
        None
    };
    for epoch in 1..=cfg.epochs {
        train_epoch(&mut state, train, cfg, run_seed, epoch).map_err(|e| match e {
            TrainError::NonFiniteLoss { epoch, .. } => TrainError::NonFiniteLoss { run: id.clone(), epoch },
            other => other,
        })?;
        for (e, buf) in eval.iter().zip(&mut buffers) {
            let (p, loss, acc) = evaluate(&state.model, e);
            buf.extend(p);
            rows.push(MetricsRow {
                epoch,
                dataset: e.name.to_owned(),
                loss,
                accuracy: acc,
            });
        }
    }
    let logs = eval
        .iter()
        .zip(buffers)
        .map(|(e, buf)| ProbLog::new(id.clone(), cfg.epochs, e.n_samples(), c, buf))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RunOutput {
        spec: spec.clone(),
        logs,
        init_logs,
        metrics: MetricsSeries::new(rows)?,
    })
}

/// Train all runs in parallel; output order follows `specs`.
pub fn train_ensemble(
    specs: &[RunSpec],
    train: &DataView,
    eval: &[DataView],
    cfg: &TrainConfig,
) -> Result<Vec<RunOutput>, TrainError> {
    specs.par_iter().map(|s| train_run(s, train, eval, cfg)).collect()
}

/// Write `runs/<model_id>/<dataset>.cpl` and `metrics.csv` under `dir`;
/// returns manifest run entries with paths relative to `dir`.
pub fn write_runs(outputs: &[RunOutput], eval_names: &[&str], dir: &Path) -> Result<Vec<RunEntry>, FormatError> {
    outputs
        .par_iter()
        .map(|out| {
            let id = out.model_id();
            let rel = PathBuf::from("runs").join(&id);
            let run_dir = dir.join(&rel);
            std::fs::create_dir_all(&run_dir).map_err(|e| FormatError::io(&run_dir, e))?;
            let mut logs = BTreeMap::new();
            for (name, log) in eval_names.iter().zip(&out.logs) {
                let file = rel.join(format!("{name}.cpl"));
                write_cpl(log, dir.join(&file))?;
                logs.insert((*name).to_owned(), file);
            }
            if let Some(init) = &out.init_logs {
                for (name, log) in eval_names.iter().zip(init) {
                    write_cpl(log, run_dir.join(format!("{name}.init.cpl")))?;
                }
            }
            let metrics = rel.join("metrics.csv");
            write_metrics(&out.metrics, dir.join(&metrics))?;
            Ok(RunEntry {
                model_id: id,
                family: out.spec.arch.family(),
                seed: out.spec.seed,
                param_count: out.spec.arch.param_count() as u64,
                metrics: Some(metrics),
                logs,
            })
        })
        .collect()
}

/// Write labels and tags of `datasets` under `dir/data/` and the run logs
/// under `dir/runs/`; returns a manifest whose paths are relative to `dir`.
/// `outputs` must have been trained with `datasets` as evaluation sets, in
/// the same order.
pub fn write_experiment(
    datasets: &[&SynthDataset],
    outputs: &[RunOutput],
    dir: &Path,
) -> Result<ManifestFile, FormatError> {
    let data = PathBuf::from("data");
    std::fs::create_dir_all(dir.join(&data)).map_err(|e| FormatError::io(dir, e))?;
    let mut entries = Vec::new();
    for d in datasets {
        let labels = data.join(format!("{}.labels.csv", d.name));
        let tags = data.join(format!("{}.tags.csv", d.name));
        write_labels(&d.labels, dir.join(&labels))?;
        write_tags(&d.tag_table(), dir.join(&tags))?;
        entries.push(DatasetEntry {
            name: d.name.clone(),
            role: d.role,
            n_samples: d.n_samples(),
            labels: Some(labels),
            tags: Some(tags),
        });
    }
    let names: Vec<&str> = datasets.iter().map(|d| d.name.as_str()).collect();
    Ok(ManifestFile {
        scoring_runs: Vec::new(),
        datasets: entries,
        runs: write_runs(outputs, &names, dir)?,
    })
}

/// Evaluation sets of a bundle in manifest order: train, id, then ood.
pub fn eval_order(datasets: &[SynthDataset]) -> Vec<&SynthDataset> {
    let rank = |r: DatasetRole| match r {
        DatasetRole::Train => 0,
        DatasetRole::Id => 1,
        DatasetRole::Ood => 2,
    };
    let mut v: Vec<&SynthDataset> = datasets.iter().collect();
    v.sort_by_key(|d| rank(d.role));
    v
}
