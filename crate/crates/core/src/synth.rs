//! Synthetic classification data with known subpopulation structure.
//!
//! Each sample has a Gaussian core around its latent class mean plus a
//! nuisance block. Every class owns a fixed unit-norm nuisance signature
//! that its samples usually carry. A class-specific spurious correlation
//! makes some samples of a source class carry the signature of a target
//! class instead; a weak spurious correlation adds a shared offset on one
//! nuisance dimension to samples of several classes. Label corruption
//! replaces the label with a uniformly drawn other class. Every draw is
//! recorded as a tag, so downstream analyses can be checked against truth.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::partition::{bin_scores, PartitionError};
use crate::proba_log::{
    read_features, read_labels, read_tags, write_features, write_labels, write_tags, DatasetRole,
    FeatureTensor, FormatError, MetricsRow, MetricsSeries, TagTable,
};
use crate::rng::Stream;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("target bin {0} has positive ratio but no source samples")]
    EmptySourceBin(usize),
    #[error("target ratios sum to {0}, expected 1")]
    BadRatios(f64),
    #[error(transparent)]
    Partition(#[from] PartitionError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpecificSpurious {
    pub source: usize,
    pub target: usize,
    /// Probability that a source-class sample carries the target signature.
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakSpurious {
    /// Index into the nuisance block.
    pub dim: usize,
    pub classes: Vec<usize>,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodSpec {
    pub name: String,
    pub n_samples: usize,
    /// Multiplier on the core noise standard deviation.
    pub noise_scale: f64,
    /// Multiplier on class-specific spurious strengths (capped at 1).
    pub spurious_scale: f64,
    /// Multiplier applied to the whole feature vector after generation.
    #[serde(default = "one")]
    pub contrast: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub core_dims: usize,
    pub nuisance_dims: usize,
    /// Distance between class means, in units of the core noise std.
    pub separation: f64,
    /// Length of a nuisance signature offset.
    pub signature_scale: f64,
    /// Probability that a sample carries its own class signature.
    pub own_signature_rate: f64,
    /// Fraction of training labels replaced by another class.
    pub corruption_rate: f64,
    /// Same, for the id and ood test sets.
    #[serde(default)]
    pub test_corruption_rate: f64,
    #[serde(default)]
    pub class_specific: Vec<ClassSpecificSpurious>,
    #[serde(default)]
    pub weak: Vec<WeakSpurious>,
    pub n_train: usize,
    pub n_id: usize,
    #[serde(default)]
    pub ood: Vec<OodSpec>,
    pub seed: u64,
}

impl SynthConfig {
    /// Ten-class mixture with label noise, two class-specific and two weak
    /// spurious correlations, and two shifted test sets.
    pub fn mixture(seed: u64) -> Self {
        Self {
            n_classes: 10,
            core_dims: 16,
            nuisance_dims: 8,
            separation: 3.5,
            signature_scale: 3.0,
            own_signature_rate: 0.6,
            corruption_rate: 0.1,
            test_corruption_rate: 0.0,
            class_specific: vec![
                ClassSpecificSpurious { source: 3, target: 5, strength: 0.3 },
                ClassSpecificSpurious { source: 1, target: 9, strength: 0.3 },
            ],
            weak: vec![
                WeakSpurious { dim: 0, classes: vec![2, 4, 6], strength: 0.5 },
                WeakSpurious { dim: 1, classes: vec![0, 8], strength: 0.5 },
            ],
            n_train: 5000,
            n_id: 2000,
            ood: vec![
                OodSpec { name: "ood-noisy".into(), n_samples: 2000, noise_scale: 1.3, spurious_scale: 1.0, contrast: 1.0 },
                OodSpec { name: "ood-spurious".into(), n_samples: 2000, noise_scale: 1.0, spurious_scale: 2.0, contrast: 1.0 },
                OodSpec { name: "ood-clean".into(), n_samples: 2000, noise_scale: 0.7, spurious_scale: 1.0, contrast: 1.0 },
            ],
            seed,
        }
    }

    /// Mixture with a small, noisier training set so that a wide network
    /// goes through fast learning, slow learning and memorization within a
    /// few dozen epochs (see [`crate::trainer::TrainConfig::three_phase`]).
    pub fn three_phase(seed: u64) -> Self {
        let mut c = Self::mixture(seed);
        c.n_train = 1000;
        c.corruption_rate = 0.2;
        c
    }

    pub fn n_features(&self) -> usize {
        self.core_dims + self.nuisance_dims
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::ConfigInvalid(m));
        let rate = |r: f64| (0.0..1.0).contains(&r);
        let prob = |r: f64| (0.0..=1.0).contains(&r);
        if self.n_classes < 2 {
            return bad(format!("n_classes = {} < 2", self.n_classes));
        }
        if self.core_dims == 0 {
            return bad("core_dims must be >= 1".into());
        }
        if !rate(self.corruption_rate) || !rate(self.test_corruption_rate) {
            return bad("corruption rates must lie in [0, 1)".into());
        }
        if !prob(self.own_signature_rate) {
            return bad("own_signature_rate must lie in [0, 1]".into());
        }
        if !(self.separation >= 0.0) || !(self.signature_scale >= 0.0) {
            return bad("separation and signature_scale must be >= 0".into());
        }
        if self.n_train == 0 || self.n_id == 0 || self.ood.iter().any(|o| o.n_samples == 0) {
            return bad("dataset sizes must be >= 1".into());
        }
        for o in &self.ood {
            if !(o.noise_scale > 0.0) || !(o.spurious_scale >= 0.0) || !(o.contrast > 0.0) {
                return bad(format!("ood {:?}: scales must be positive", o.name));
            }
            if ["train", "id"].contains(&o.name.as_str()) {
                return bad(format!("ood name {:?} is reserved", o.name));
            }
        }
        for cs in &self.class_specific {
            if cs.source >= self.n_classes || cs.target >= self.n_classes || cs.source == cs.target {
                return bad(format!("class-specific pair {}->{} invalid", cs.source, cs.target));
            }
            if !prob(cs.strength) {
                return bad("class-specific strength must lie in [0, 1]".into());
            }
            if self.nuisance_dims == 0 {
                return bad("class-specific correlations need nuisance dims".into());
            }
        }
        for w in &self.weak {
            if w.dim >= self.nuisance_dims {
                return bad(format!("weak dim {} >= nuisance_dims", w.dim));
            }
            if w.classes.iter().any(|&c| c >= self.n_classes) || w.classes.is_empty() {
                return bad("weak class set invalid".into());
            }
            if !prob(w.strength) {
                return bad("weak strength must lie in [0, 1]".into());
            }
        }
        Ok(())
    }
}

/// Ground-truth annotation of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tag {
    Clean,
    Corrupted,
    ClassSpecific { source: usize, target: usize },
    Weak { dim: usize },
    /// Core features lie closer to another class mean.
    Ambiguous,
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Clean => f.write_str("clean"),
            Tag::Corrupted => f.write_str("corrupted"),
            Tag::ClassSpecific { source, target } => write!(f, "class_specific_sp({source}->{target})"),
            Tag::Weak { dim } => write!(f, "weak_sp({dim})"),
            Tag::Ambiguous => f.write_str("ambiguous"),
        }
    }
}

impl std::str::FromStr for Tag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let inner = |prefix: &str| s.strip_prefix(prefix).and_then(|r| r.strip_suffix(')'));
        let bad = || format!("unknown tag {s:?}");
        match s {
            "clean" => Ok(Tag::Clean),
            "corrupted" => Ok(Tag::Corrupted),
            "ambiguous" => Ok(Tag::Ambiguous),
            _ => {
                if let Some(pair) = inner("class_specific_sp(") {
                    let (a, b) = pair.split_once("->").ok_or_else(bad)?;
                    Ok(Tag::ClassSpecific {
                        source: a.parse().map_err(|_| bad())?,
                        target: b.parse().map_err(|_| bad())?,
                    })
                } else if let Some(d) = inner("weak_sp(") {
                    Ok(Tag::Weak { dim: d.parse().map_err(|_| bad())? })
                } else {
                    Err(bad())
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub name: String,
    pub role: DatasetRole,
    pub n_classes: usize,
    pub n_features: usize,
    /// Row-major, `n_samples × n_features`.
    pub features: Vec<f32>,
    pub labels: Vec<usize>,
    /// Class the sample was generated from.
    pub latent: Vec<usize>,
    pub tags: Vec<Vec<Tag>>,
}

impl SynthDataset {
    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn has_tag(&self, i: usize, pred: impl Fn(&Tag) -> bool) -> bool {
        self.tags[i].iter().any(pred)
    }

    pub fn tag_table(&self) -> TagTable {
        TagTable(
            self.tags
                .iter()
                .map(|ts| ts.iter().map(Tag::to_string).collect())
                .collect(),
        )
    }

    /// Subset (with repeats) in the order of `indices`.
    pub fn select(&self, name: impl Into<String>, role: DatasetRole, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Self {
            name: name.into(),
            role,
            n_classes: self.n_classes,
            n_features: self.n_features,
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            latent: indices.iter().map(|&i| self.latent[i]).collect(),
            tags: indices.iter().map(|&i| self.tags[i].clone()).collect(),
        }
    }
}

/// Datasets generated together, train first, then id, then ood sets.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthBundle {
    pub datasets: Vec<SynthDataset>,
}

impl SynthBundle {
    pub fn get(&self, name: &str) -> Option<&SynthDataset> {
        self.datasets.iter().find(|d| d.name == name)
    }

    pub fn train(&self) -> &SynthDataset {
        self.datasets
            .iter()
            .find(|d| d.role == DatasetRole::Train)
            .expect("bundle has a train set")
    }

    pub fn n_classes(&self) -> usize {
        self.datasets[0].n_classes
    }
}

struct Geometry {
    means: Vec<Vec<f64>>,
    signatures: Vec<Vec<f64>>,
}

fn unit_vector(s: &mut Stream, dims: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dims).map(|_| s.normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn geometry(cfg: &SynthConfig) -> Geometry {
    let mut s = Stream::substream(cfg.seed, "synth/geometry");
    let radius = cfg.separation / std::f64::consts::SQRT_2;
    let means = (0..cfg.n_classes)
        .map(|c| {
            if cfg.n_classes <= cfg.core_dims {
                (0..cfg.core_dims).map(|j| if j == c { radius } else { 0.0 }).collect()
            } else {
                unit_vector(&mut s, cfg.core_dims).into_iter().map(|x| x * radius).collect()
            }
        })
        .collect();
    let signatures = (0..cfg.n_classes)
        .map(|_| {
            if cfg.nuisance_dims == 0 {
                Vec::new()
            } else {
                unit_vector(&mut s, cfg.nuisance_dims)
            }
        })
        .collect();
    Geometry { means, signatures }
}

struct DrawParams<'a> {
    name: &'a str,
    role: DatasetRole,
    n: usize,
    noise_scale: f64,
    spurious_scale: f64,
    contrast: f64,
    corruption_rate: f64,
}

fn draw(cfg: &SynthConfig, geo: &Geometry, p: &DrawParams) -> SynthDataset {
    let mut s = Stream::substream(cfg.seed, &format!("synth/{}", p.name));
    let (c, d, k) = (cfg.n_classes, cfg.core_dims, cfg.nuisance_dims);
    let mut features = Vec::with_capacity(p.n * (d + k));
    let mut labels = Vec::with_capacity(p.n);
    let mut latent = Vec::with_capacity(p.n);
    let mut tags = Vec::with_capacity(p.n);
    let mut row = vec![0.0f64; d + k];
    for _ in 0..p.n {
        let y = s.below(c);
        let mut ts = Vec::new();
        for j in 0..d {
            row[j] = geo.means[y][j] + p.noise_scale * s.normal();
        }
        for j in 0..k {
            row[d + j] = s.normal();
        }
        let mut carried = None;
        for cs in cfg.class_specific.iter().filter(|cs| cs.source == y) {
            if s.bernoulli((cs.strength * p.spurious_scale).min(1.0)) && carried.is_none() {
                carried = Some(cs.target);
                ts.push(Tag::ClassSpecific { source: y, target: cs.target });
            }
        }
        if carried.is_none() && s.bernoulli(cfg.own_signature_rate) {
            carried = Some(y);
        }
        if let Some(owner) = carried {
            for j in 0..k {
                row[d + j] += cfg.signature_scale * geo.signatures[owner][j];
            }
        }
        for w in cfg.weak.iter().filter(|w| w.classes.contains(&y)) {
            if s.bernoulli(w.strength) {
                row[d + w.dim] += cfg.signature_scale;
                ts.push(Tag::Weak { dim: w.dim });
            }
        }
        let mut label = y;
        if s.bernoulli(p.corruption_rate) {
            let other = s.below(c - 1);
            label = if other >= y { other + 1 } else { other };
            ts.push(Tag::Corrupted);
        }
        if nearest_mean(&geo.means, &row[..d]) != y {
            ts.push(Tag::Ambiguous);
        }
        if ts.is_empty() {
            ts.push(Tag::Clean);
        }
        ts.sort();
        features.extend(row.iter().map(|&v| (p.contrast * v) as f32));
        labels.push(label);
        latent.push(y);
        tags.push(ts);
    }
    SynthDataset {
        name: p.name.to_owned(),
        role: p.role,
        n_classes: c,
        n_features: d + k,
        features,
        labels,
        latent,
        tags,
    }
}

fn nearest_mean(means: &[Vec<f64>], x: &[f64]) -> usize {
    let dist = |m: &Vec<f64>| m.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let mut best = 0;
    let mut best_d = dist(&means[0]);
    for (c, m) in means.iter().enumerate().skip(1) {
        let dc = dist(m);
        if dc < best_d {
            best = c;
            best_d = dc;
        }
    }
    best
}

/// Generate the train, id and ood sets of a mixture config.
pub fn gen_mixture(cfg: &SynthConfig) -> Result<SynthBundle, SynthError> {
    cfg.validate()?;
    let geo = geometry(cfg);
    let mut specs = vec![
        DrawParams {
            name: "train",
            role: DatasetRole::Train,
            n: cfg.n_train,
            noise_scale: 1.0,
            spurious_scale: 1.0,
            contrast: 1.0,
            corruption_rate: cfg.corruption_rate,
        },
        DrawParams {
            name: "id",
            role: DatasetRole::Id,
            n: cfg.n_id,
            noise_scale: 1.0,
            spurious_scale: 1.0,
            contrast: 1.0,
            corruption_rate: cfg.test_corruption_rate,
        },
    ];
    for o in &cfg.ood {
        specs.push(DrawParams {
            name: &o.name,
            role: DatasetRole::Ood,
            n: o.n_samples,
            noise_scale: o.noise_scale,
            spurious_scale: o.spurious_scale,
            contrast: o.contrast,
            corruption_rate: cfg.test_corruption_rate,
        });
    }
    Ok(SynthBundle {
        datasets: specs.iter().map(|p| draw(cfg, &geo, p)).collect(),
    })
}

/// Output of [`resample_by_bins`]: the new dataset and, per output sample,
/// the index of the source sample it copies.
#[derive(Debug, Clone, PartialEq)]
pub struct Resampled {
    pub dataset: SynthDataset,
    pub source_indices: Vec<usize>,
}

/// Split `n_out` into per-bin counts proportional to `ratios` with
/// largest-remainder rounding (ties to the lower bin).
pub fn largest_remainder(ratios: &[f64], n_out: usize) -> Vec<usize> {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n_out as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &k in order.iter().take(n_out.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

/// Build a shifted set whose confusion-bin ratios equal `target_ratios`
/// (up to rounding) by drawing ID samples with replacement within bins.
pub fn resample_by_bins(
    id: &SynthDataset,
    scores: &[f64],
    target_ratios: &[f64],
    n_out: usize,
    name: &str,
    seed: u64,
) -> Result<Resampled, SynthError> {
    let total: f64 = target_ratios.iter().sum();
    if !((total - 1.0).abs() <= 1e-9) || target_ratios.iter().any(|r| !(*r >= 0.0)) {
        return Err(SynthError::BadRatios(total));
    }
    let part = bin_scores(scores, target_ratios.len(), id.n_classes)?;
    if part.n_samples() != id.n_samples() {
        return Err(SynthError::ConfigInvalid(format!(
            "{} scores for {} samples",
            part.n_samples(),
            id.n_samples()
        )));
    }
    let mut members = vec![Vec::new(); target_ratios.len()];
    for (i, &b) in part.assignment().iter().enumerate() {
        members[b].push(i);
    }
    if let Some(k) = (0..target_ratios.len()).find(|&k| target_ratios[k] > 0.0 && members[k].is_empty()) {
        return Err(SynthError::EmptySourceBin(k));
    }
    let counts = largest_remainder(target_ratios, n_out);
    let mut s = Stream::substream(seed, &format!("resample/{name}"));
    let mut source_indices = Vec::with_capacity(n_out);
    for (k, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            source_indices.push(members[k][s.below(members[k].len())]);
        }
    }
    Ok(Resampled {
        dataset: id.select(name, DatasetRole::Ood, &source_indices),
        source_indices,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColoredConfig {
    /// Fraction of training labels flipped.
    pub corruption: f64,
    /// Probability that a training sample has its class's colour.
    pub color_corr: f64,
    pub separation: f64,
    pub color_scale: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl ColoredConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            corruption: 0.10,
            color_corr: 0.80,
            separation: 2.0,
            color_scale: 2.0,
            n_train: 2000,
            n_test: 1000,
            seed,
        }
    }
}

const RED: usize = 0;
const GREEN: usize = 1;

/// Two classes with a two-dimensional colour block: class 0 is red and
/// class 1 green with probability `color_corr` in training. Returns
/// `train`, a same-distribution `id` set with clean labels, and the
/// `ood_all_green` and `ood_all_red` sets where every sample has one colour.
pub fn gen_colored_two_class(cfg: &ColoredConfig) -> Result<SynthBundle, SynthError> {
    let prob = |v: f64| (0.0..=1.0).contains(&v);
    if !prob(cfg.corruption) || !prob(cfg.color_corr) || cfg.n_train == 0 || cfg.n_test == 0 {
        return Err(SynthError::ConfigInvalid("colored preset parameters".into()));
    }
    let radius = cfg.separation / std::f64::consts::SQRT_2;
    let draw = |name: &str, role: DatasetRole, n: usize, colour_of: &dyn Fn(&mut Stream, usize) -> usize, corruption: f64| {
        let mut s = Stream::substream(cfg.seed, &format!("colored/{name}"));
        let mut ds = SynthDataset {
            name: name.to_owned(),
            role,
            n_classes: 2,
            n_features: 4,
            features: Vec::with_capacity(4 * n),
            labels: Vec::with_capacity(n),
            latent: Vec::with_capacity(n),
            tags: Vec::with_capacity(n),
        };
        for _ in 0..n {
            let y = s.below(2);
            let core = [
                if y == 0 { radius } else { 0.0 } + s.normal(),
                if y == 1 { radius } else { 0.0 } + s.normal(),
            ];
            let colour = colour_of(&mut s, y);
            let block = [
                if colour == RED { cfg.color_scale } else { 0.0 } + 0.1 * s.normal(),
                if colour == GREEN { cfg.color_scale } else { 0.0 } + 0.1 * s.normal(),
            ];
            let mut ts = Vec::new();
            if colour != y {
                ts.push(Tag::ClassSpecific { source: y, target: colour });
            }
            let mut label = y;
            if s.bernoulli(corruption) {
                label = 1 - y;
                ts.push(Tag::Corrupted);
            }
            if (core[0] > core[1]) != (y == 0) {
                ts.push(Tag::Ambiguous);
            }
            if ts.is_empty() {
                ts.push(Tag::Clean);
            }
            ts.sort();
            ds.features.extend(core.iter().chain(&block).map(|&v| v as f32));
            ds.labels.push(label);
            ds.latent.push(y);
            ds.tags.push(ts);
        }
        ds
    };
    let correlated = |s: &mut Stream, y: usize| if s.bernoulli(cfg.color_corr) { y } else { 1 - y };
    Ok(SynthBundle {
        datasets: vec![
            draw("train", DatasetRole::Train, cfg.n_train, &correlated, cfg.corruption),
            draw("id", DatasetRole::Id, cfg.n_test, &correlated, 0.0),
            draw("ood_all_green", DatasetRole::Ood, cfg.n_test, &|_, _| GREEN, 0.0),
            draw("ood_all_red", DatasetRole::Ood, cfg.n_test, &|_, _| RED, 0.0),
        ],
    })
}

/// Loss/accuracy curves with known phase boundaries: train loss decays
/// monotonically, test loss is V-shaped with its minimum at `t1`, and
/// accuracies rise linearly until `t2` and stay flat afterwards. Gaussian
/// noise of std `noise` is added to losses and `noise / 10` to accuracies.
pub fn gen_phase_curves(t1: usize, t2: usize, n_epochs: usize, noise: f64, seed: u64) -> MetricsSeries {
    let mut s = Stream::substream(seed, "phase-curves");
    let mut rows = Vec::new();
    for t in 1..=n_epochs {
        let tf = t as f64;
        let train_loss = 2.0 * (-tf / 8.0).exp() + 0.05;
        let test_loss = 1.0 + 0.08 * (tf - t1 as f64).abs();
        let acc = 0.1 + 0.7 * (t.min(t2) as f64) / t2 as f64;
        for (name, loss, a) in [
            ("train", train_loss, (acc + 0.1).min(1.0)),
            ("id", test_loss, acc),
            ("ood", test_loss + 0.3, acc - 0.08),
        ] {
            rows.push(MetricsRow {
                epoch: t,
                dataset: name.into(),
                loss: (loss + noise * s.normal()).max(0.0),
                accuracy: (a + 0.1 * noise * s.normal()).clamp(0.0, 1.0),
            });
        }
    }
    MetricsSeries::new(rows).expect("generated curves are valid")
}

/// Dataset listing written next to generated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleIndex {
    pub n_classes: usize,
    pub datasets: Vec<BundleEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleEntry {
    pub name: String,
    pub role: DatasetRole,
    pub n_samples: usize,
    pub features: String,
    pub labels: String,
    pub latent: String,
    pub tags: String,
}

pub const BUNDLE_INDEX: &str = "bundle.toml";

/// Write features (CFT), labels CSV and tags CSV per dataset plus
/// `bundle.toml`. `header` lines are prepended to the index as comments.
pub fn write_bundle(bundle: &SynthBundle, dir: &Path, header: &[String]) -> Result<BundleIndex, FormatError> {
    std::fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    let mut entries = Vec::new();
    for d in &bundle.datasets {
        let entry = BundleEntry {
            name: d.name.clone(),
            role: d.role,
            n_samples: d.n_samples(),
            features: format!("{}.features.cft", d.name),
            labels: format!("{}.labels.csv", d.name),
            latent: format!("{}.latent.csv", d.name),
            tags: format!("{}.tags.csv", d.name),
        };
        write_features(
            &FeatureTensor {
                name: d.name.clone(),
                n_samples: d.n_samples(),
                n_features: d.n_features,
                values: d.features.clone(),
            },
            dir.join(&entry.features),
        )?;
        write_labels(&d.labels, dir.join(&entry.labels))?;
        write_labels(&d.latent, dir.join(&entry.latent))?;
        write_tags(&d.tag_table(), dir.join(&entry.tags))?;
        entries.push(entry);
    }
    let index = BundleIndex {
        n_classes: bundle.n_classes(),
        datasets: entries,
    };
    let mut text = String::new();
    for h in header {
        text.push_str(&format!("# {h}\n"));
    }
    text.push_str(&toml::to_string(&index).expect("index serializes"));
    let path = dir.join(BUNDLE_INDEX);
    crate::fsutil::write_bytes_atomic(&path, text.as_bytes()).map_err(|e| FormatError::io(&path, e))?;
    Ok(index)
}

/// Read a bundle written by [`write_bundle`].
pub fn read_bundle(dir: &Path) -> Result<(BundleIndex, SynthBundle), FormatError> {
    let path = dir.join(BUNDLE_INDEX);
    let text = std::fs::read_to_string(&path).map_err(|e| FormatError::io(&path, e))?;
    let index: BundleIndex = toml::from_str(&text).map_err(|e| FormatError::SchemaError(e.to_string()))?;
    let mut datasets = Vec::new();
    for e in &index.datasets {
        let features = read_features(dir.join(&e.features))?;
        if features.n_samples != e.n_samples {
            return Err(FormatError::LengthMismatch {
                expected: e.n_samples,
                found: features.n_samples,
            });
        }
        let labels = read_labels(dir.join(&e.labels), e.n_samples, index.n_classes)?;
        let latent = read_labels(dir.join(&e.latent), e.n_samples, index.n_classes)?;
        let tag_path = dir.join(&e.tags);
        let tags = read_tags(&tag_path, e.n_samples)?
            .0
            .into_iter()
            .map(|ts| {
                ts.iter()
                    .map(|t| t.parse::<Tag>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(FormatError::SchemaError)
            })
            .collect::<Result<Vec<_>, _>>()?;
        datasets.push(SynthDataset {
            name: e.name.clone(),
            role: e.role,
            n_classes: index.n_classes,
            n_features: features.n_features,
            features: features.values,
            labels: labels.into_inner(),
            latent: latent.into_inner(),
            tags,
        });
    }
    if datasets.iter().filter(|d| d.role == DatasetRole::Train).count() != 1 {
        return Err(FormatError::SchemaError("bundle needs exactly one train set".into()));
    }
    Ok((index, SynthBundle { datasets }))
}
