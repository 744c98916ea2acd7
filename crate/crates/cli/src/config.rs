//! Pipeline config file and flag value parsers.

use std::fmt;
use std::path::Path;

use anyhow::{Context as _, Result};
use clens::synth::{ColoredConfig, SynthConfig};
use clens::trainer::ToyArch;
use serde::{Deserialize, Serialize};

/// Invalid configuration (bad flag combination, unreadable config file,
/// invalid generator/trainer settings). Maps to exit code 4.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

/// Single config file shared by all subcommands; command-line flags take
/// precedence over it.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub preset: Option<String>,
    pub synth: Option<SynthConfig>,
    pub colored: Option<ColoredConfig>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub archs: Option<Vec<String>>,
    pub seeds: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub log_init: Option<bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    pub window: Option<[usize; 2]>,
    pub epoch: Option<usize>,
    pub bins: Option<usize>,
    pub thresholds: Option<[f64; 2]>,
    pub tail_start: Option<usize>,
    pub smoothing: Option<usize>,
    pub delta: Option<f64>,
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| config_err(format!("config {}: {e}", path.display())))
    }
}

pub fn parse_window(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or("expected a:b")?;
    let a: usize = a.trim().parse().map_err(|_| format!("bad epoch {a:?}"))?;
    let b: usize = b.trim().parse().map_err(|_| format!("bad epoch {b:?}"))?;
    if a == 0 || a > b {
        return Err(format!("window {a}:{b} must satisfy 1 <= a <= b"));
    }
    Ok((a, b))
}

pub fn parse_thresholds(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or("expected lo:hi")?;
    let lo: f64 = a
        .trim()
        .parse()
        .map_err(|_| format!("bad threshold {a:?}"))?;
    let hi: f64 = b
        .trim()
        .parse()
        .map_err(|_| format!("bad threshold {b:?}"))?;
    if !(lo <= hi) {
        return Err(format!("thresholds {lo}:{hi} must satisfy lo <= hi"));
    }
    Ok((lo, hi))
}

/// `linear` or hidden widths joined by `x`, e.g. `128x64`.
pub fn parse_arch(s: &str, input_dim: usize, n_classes: usize) -> Result<ToyArch> {
    let hidden = if s == "linear" {
        Vec::new()
    } else {
        s.split('x')
            .map(|w| {
                w.parse::<usize>()
                    .map_err(|_| config_err(format!("bad architecture {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?
    };
    ToyArch::new(hidden, input_dim, n_classes).map_err(|e| config_err(e.to_string()))
}

pub fn load_preset(name: &str, seed: u64) -> Result<Preset> {
    Ok(match name {
        "mixture" => Preset::Mixture(SynthConfig::mixture(seed)),
        "three-phase" => Preset::Mixture(SynthConfig::three_phase(seed)),
        "colored2" => Preset::Colored(ColoredConfig::new(seed)),
        _ => {
            return Err(config_err(format!(
                "unknown preset {name:?} (mixture, three-phase, colored2)"
            )))
        }
    })
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Mixture(SynthConfig),
    Colored(ColoredConfig),
}

pub fn read_input(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}
