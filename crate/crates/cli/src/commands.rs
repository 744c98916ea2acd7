use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, Result};
use serde::Serialize;

use clens::models::{complexity_index, fit_collinearity, fit_group_model, DatasetCurve};
use clens::partition::{
    correct_count_split, per_bin_accuracy, per_bin_mean, subpop_accuracy, EpochSel, DEFAULT_BINS,
};
use clens::phases::{
    detect_phases, mean_entropy_trajectory, PhaseParams, DEFAULT_DELTA, DEFAULT_SMOOTHING,
};
use clens::predictor::{Analysis, PredictConfig, ScoreBasis, ENSEMBLE_ID};
use clens::proba_log::{read_manifest, DatasetEntry, DatasetRole, Manifest, MetricsSeries};
use clens::scoring::{ScoreTable, DEFAULT_TAIL_START};
use clens::synth::{gen_colored_two_class, gen_mixture, read_bundle, write_bundle, BUNDLE_INDEX};
use clens::trainer::{
    eval_order, train_ensemble, write_experiment, DataView, RunSpec, TrainConfig,
};

use crate::artifacts::{file_sha256, Lock, Output, Provenance};
use crate::config::{config_err, load_preset, parse_arch, PipelineConfig, Preset};
use crate::extremes::{self, extremes_for};
use crate::{report, AnalysisArgs, Cli, Command, ExtremesArgs, Format, GenArgs, TrainArgs};

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Score(a) => score(a),
        Command::Partition(a) => partition(a),
        Command::Predict(a) => predict(a),
        Command::Phases(a) => phases(a),
        Command::Fit(a) => fit(a),
        Command::Extremes(a) => extremes(a),
        Command::Report(a) => report::run(a),
    }
}

fn rel(p: &Path) -> String {
    p.to_string_lossy().replace('\\', "/")
}

fn role_str(r: DatasetRole) -> &'static str {
    match r {
        DatasetRole::Train => "train",
        DatasetRole::Id => "id",
        DatasetRole::Ood => "ood",
    }
}

#[derive(Serialize)]
struct GenResolved {
    preset: String,
    generator: Preset,
}

fn gen(a: GenArgs) -> Result<()> {
    let cfg = PipelineConfig::load(a.config.as_deref())?;
    let top_seed = a.seed.or(cfg.seed);
    let name = a.preset.or(cfg.preset).unwrap_or_else(|| "mixture".into());
    let mut preset = load_preset(&name, top_seed.unwrap_or(0))?;
    match &mut preset {
        Preset::Mixture(s) => {
            if let Some(c) = cfg.synth {
                *s = c;
                s.seed = top_seed.unwrap_or(s.seed);
            }
        }
        Preset::Colored(s) => {
            if let Some(c) = cfg.colored {
                *s = c;
                s.seed = top_seed.unwrap_or(s.seed);
            }
        }
    }
    let bundle = match &preset {
        Preset::Mixture(s) => gen_mixture(s)?,
        Preset::Colored(s) => gen_colored_two_class(s)?,
    };
    let resolved = GenResolved {
        preset: name,
        generator: preset,
    };
    let prov = Provenance::new("gen", &resolved, BTreeMap::new());
    let _lock = Lock::acquire(&a.out)?;
    let index = write_bundle(&bundle, &a.out, &[prov.header()])?;
    let mut out = Output::new(&a.out, &prov, "provenance.gen.toml")?;
    out.register(BUNDLE_INDEX)?;
    for e in &index.datasets {
        for f in [&e.features, &e.labels, &e.latent, &e.tags] {
            out.adopt(f)?;
        }
    }
    out.text("gen_config.toml", |w| {
        w.write_all(
            toml::to_string(&resolved)
                .expect("config serializes")
                .as_bytes(),
        )
    })?;
    out.finish()?;
    for d in &bundle.datasets {
        eprintln!(
            "{}: {} samples ({})",
            d.name,
            d.n_samples(),
            role_str(d.role)
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainResolved {
    archs: Vec<String>,
    seeds: usize,
    train: TrainConfig,
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = PipelineConfig::load(a.config.as_deref())?;
    let t = &cfg.train;
    let d = TrainConfig::default();
    let tc = TrainConfig {
        epochs: a.epochs.or(t.epochs).unwrap_or(d.epochs),
        batch_size: a.batch_size.or(t.batch_size).unwrap_or(d.batch_size),
        learning_rate: a.lr.or(t.learning_rate).unwrap_or(d.learning_rate),
        momentum: a.momentum.or(t.momentum).unwrap_or(d.momentum),
        seed: a.seed.or(cfg.seed).unwrap_or(0),
        log_init: a.log_init || t.log_init.unwrap_or(false),
    };
    tc.validate().map_err(|e| config_err(e.to_string()))?;
    let archs = a
        .archs
        .or_else(|| t.archs.clone())
        .unwrap_or_else(|| vec!["64".into(), "128".into()]);
    let seeds = a.seeds.or(t.seeds).unwrap_or(4);
    if seeds == 0 || archs.is_empty() {
        return Err(config_err("need at least one architecture and one seed"));
    }

    let inputs = BTreeMap::from([(
        "bundle".to_owned(),
        file_sha256(&a.data.join(BUNDLE_INDEX))?,
    )]);
    let (_, bundle) = read_bundle(&a.data)?;
    let train_set = bundle.train();
    let (input_dim, n_classes) = (train_set.n_features, bundle.n_classes());
    let mut specs = Vec::new();
    for s in &archs {
        let arch = parse_arch(s, input_dim, n_classes)?;
        specs.extend((0..seeds as u64).map(|seed| RunSpec {
            arch: arch.clone(),
            seed,
        }));
    }
    let mut ids: Vec<String> = specs.iter().map(RunSpec::model_id).collect();
    ids.sort();
    ids.dedup();
    if ids.len() != specs.len() {
        return Err(config_err("duplicate architectures"));
    }

    let resolved = TrainResolved {
        archs,
        seeds,
        train: tc.clone(),
    };
    let prov = Provenance::new("train", &resolved, inputs);
    let _lock = Lock::acquire(&a.out)?;
    let eval = eval_order(&bundle.datasets);
    let views: Vec<DataView> = eval.iter().map(|d| DataView::from(*d)).collect();
    let outputs = train_ensemble(&specs, &DataView::from(train_set), &views, &tc)?;
    let manifest = write_experiment(&eval, &outputs, &a.out)?;

    let mut out = Output::new(&a.out, &prov, "provenance.train.toml")?;
    for d in &manifest.datasets {
        for p in [&d.labels, &d.tags].into_iter().flatten() {
            out.adopt(&rel(p))?;
        }
    }
    for r in &manifest.runs {
        for p in r.logs.values() {
            out.adopt(&rel(p))?;
        }
        if tc.log_init {
            for name in r.logs.keys() {
                out.adopt(&format!("runs/{}/{name}.init.cpl", r.model_id))?;
            }
        }
        if let Some(m) = &r.metrics {
            out.adopt(&rel(m))?;
        }
    }
    out.text("manifest.toml", |w| {
        w.write_all(manifest.to_toml().as_bytes())
    })?;
    out.finish()?;
    // the written manifest must load
    read_manifest(a.out.join("manifest.toml"))?;
    for o in &outputs {
        let last = |ds: &str| o.metrics.series(ds).last().map(|r| r.2).unwrap_or(f64::NAN);
        eprintln!(
            "{}: train acc {:.3}, id acc {:.3}",
            o.model_id(),
            last(&train_set.name),
            last(&eval[1].name)
        );
    }
    Ok(())
}

/// Analysis settings after applying config-file defaults.
#[derive(Debug, Clone, Serialize)]
struct Settings {
    window: Option<(usize, usize)>,
    epoch: Option<usize>,
    bins: usize,
    thresholds: Option<(f64, f64)>,
    tail_start: usize,
    smoothing: usize,
    delta: f64,
}

struct Session {
    manifest: Manifest,
    settings: Settings,
    inputs: BTreeMap<String, String>,
}

impl Session {
    fn open(a: &AnalysisArgs) -> Result<Self> {
        let cfg = PipelineConfig::load(a.config.as_deref())?.analysis;
        let window = a.window.or(cfg.window.map(|[x, y]| (x, y)));
        let epoch = a.epoch.or(cfg.epoch);
        if window.is_some() && epoch.is_some() {
            return Err(config_err("window and epoch are mutually exclusive"));
        }
        let settings = Settings {
            window,
            epoch,
            bins: a.bins.or(cfg.bins).unwrap_or(DEFAULT_BINS),
            thresholds: a.thresholds.or(cfg.thresholds.map(|[x, y]| (x, y))),
            tail_start: a
                .tail_start
                .or(cfg.tail_start)
                .unwrap_or(DEFAULT_TAIL_START),
            smoothing: cfg.smoothing.unwrap_or(DEFAULT_SMOOTHING),
            delta: cfg.delta.unwrap_or(DEFAULT_DELTA),
        };
        if settings.bins == 0 {
            return Err(config_err("--bins must be >= 1"));
        }
        let inputs = BTreeMap::from([("manifest".to_owned(), file_sha256(&a.manifest)?)]);
        Ok(Self {
            manifest: read_manifest(&a.manifest)?,
            settings,
            inputs,
        })
    }

    fn basis(&self, an: &Analysis) -> ScoreBasis {
        match (self.settings.epoch, self.settings.window) {
            (Some(t), _) => ScoreBasis::Epoch(t),
            (None, Some((x, y))) => ScoreBasis::Window(x, y),
            _ => an.full_window(),
        }
    }

    fn provenance(&self, command: &str, extra: &impl Serialize) -> Provenance {
        #[derive(Serialize)]
        struct Resolved<'a, E> {
            settings: &'a Settings,
            #[serde(flatten)]
            extra: &'a E,
        }
        Provenance::new(
            command,
            &Resolved {
                settings: &self.settings,
                extra,
            },
            self.inputs.clone(),
        )
    }

    /// Datasets sorted by name.
    fn datasets(&self) -> Vec<&DatasetEntry> {
        let mut v: Vec<&DatasetEntry> = self.manifest.datasets().iter().collect();
        v.sort_by(|x, y| x.name.cmp(&y.name));
        v
    }

    /// Labelled test datasets sorted by name.
    fn labelled_tests(&self) -> Vec<&DatasetEntry> {
        self.datasets()
            .into_iter()
            .filter(|d| d.role != DatasetRole::Train && self.manifest.labels(&d.name).is_some())
            .collect()
    }
}

#[derive(Serialize)]
struct NoExtra {}

fn score(a: AnalysisArgs) -> Result<()> {
    let s = Session::open(&a)?;
    let an = Analysis::new(&s.manifest)?;
    let window = match s.basis(&an) {
        ScoreBasis::Window(x, y) => (x, y),
        ScoreBasis::Epoch(t) => (t, t),
    };
    let prov = s.provenance("score", &NoExtra {});
    let _lock = Lock::acquire(&a.out)?;
    let mut out = Output::new(a.out.join("scores"), &prov, "provenance.toml")?;
    let mut summary = Vec::new();
    let mut trajectories = Vec::new();
    for d in s.datasets() {
        let ens = an.scorer(&d.name)?;
        let table = ScoreTable::compute(&d.name, ens, Some(window), s.settings.tail_start)?;
        let epochs: Vec<usize> = (1..=ens.n_epochs()).collect();
        out.text(&format!("{}.csv", d.name), |w| table.write_csv(w, &epochs))?;
        let std_mean = table
            .entropy_std
            .as_ref()
            .map(|v| (v.iter().sum::<f64>() / v.len() as f64).to_string())
            .unwrap_or_default();
        summary.push(format!(
            "{},{},{},{}:{},{},{}",
            d.name,
            role_str(d.role),
            table.n_samples(),
            window.0,
            window.1,
            table.mean_confusion(),
            std_mean
        ));
        trajectories.push((d.name.clone(), table.mean_entropy_trajectory()));
    }
    out.text("summary.csv", |w| {
        writeln!(
            w,
            "dataset,role,n_samples,window,mean_confusion,mean_entropy_std"
        )?;
        summary.iter().try_for_each(|l| writeln!(w, "{l}"))
    })?;
    out.text("entropy_trajectory.csv", |w| {
        write_trajectories(w, &trajectories)
    })?;
    out.finish()?;
    Ok(())
}

fn write_trajectories(w: &mut dyn Write, series: &[(String, Vec<f64>)]) -> std::io::Result<()> {
    write!(w, "epoch")?;
    for (name, _) in series {
        write!(w, ",{name}")?;
    }
    writeln!(w)?;
    let n = series.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
    for t in 0..n {
        write!(w, "{}", t + 1)?;
        for (_, v) in series {
            match v.get(t) {
                Some(x) => write!(w, ",{x}")?,
                None => write!(w, ",")?,
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

fn partition(a: AnalysisArgs) -> Result<()> {
    let s = Session::open(&a)?;
    let an = Analysis::new(&s.manifest)?;
    let basis = s.basis(&an);
    let prov = s.provenance("partition", &NoExtra {});
    let _lock = Lock::acquire(&a.out)?;
    let mut out = Output::new(a.out.join("partition"), &prov, "provenance.toml")?;
    for d in s.datasets() {
        let part = an.partition(&d.name, basis, s.settings.bins)?;
        out.text(&format!("{}.assign.csv", d.name), |w| part.write_csv(w))?;
        let ens = an.scorer(&d.name)?;
        match s.manifest.labels(&d.name) {
            Some(labels) => {
                let profile = per_bin_accuracy(&part, ens, labels, EpochSel::Final)?;
                out.text(&format!("{}.bins.csv", d.name), |w| profile.write_csv(w))?;
                let split = correct_count_split(ens, labels, None, s.settings.thresholds)?;
                let groups = subpop_accuracy(&split, ens, labels, None)?;
                out.text(&format!("{}.subpops.csv", d.name), |w| {
                    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                    writeln!(w, "group,lo,hi,count,ratio,mean_acc,ens_acc,gain")?;
                    for g in &groups {
                        let gain = g.ensemble_accuracy.zip(g.mean_accuracy).map(|(e, m)| e - m);
                        writeln!(
                            w,
                            "{},{},{},{},{},{},{},{}",
                            g.group,
                            split.lo,
                            split.hi,
                            g.count,
                            g.ratio,
                            opt(g.mean_accuracy),
                            opt(g.ensemble_accuracy),
                            opt(gain)
                        )?;
                    }
                    Ok(())
                })?;
            }
            None => {
                let ratios = part.ratios();
                out.text(&format!("{}.bins.csv", d.name), |w| {
                    writeln!(w, "bin,lo,hi,count,ratio")?;
                    for k in 0..part.n_bins() {
                        let e = part.edges();
                        writeln!(
                            w,
                            "{k},{},{},{},{}",
                            e[k],
                            e[k + 1],
                            part.counts()[k],
                            ratios[k]
                        )?;
                    }
                    Ok(())
                })?;
            }
        }
    }
    out.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct FormatExtra {
    format: &'static str,
}

fn format_name(f: Format) -> &'static str {
    match f {
        Format::Csv => "csv",
        Format::Structured => "structured",
    }
}

fn predict(a: AnalysisArgs) -> Result<()> {
    let s = Session::open(&a)?;
    let an = Analysis::new(&s.manifest)?;
    let config = PredictConfig {
        n_bins: s.settings.bins,
        basis: Some(s.basis(&an)),
        eval: EpochSel::Final,
    };
    let report = an.prediction_report(&config)?;
    let prov = s.provenance(
        "predict",
        &FormatExtra {
            format: format_name(a.format),
        },
    );
    let _lock = Lock::acquire(&a.out)?;
    let mut out = Output::new(a.out.join("predict"), &prov, "provenance.toml")?;
    match a.format {
        Format::Csv => {
            out.text("predictions.csv", |w| report.write_csv(w))?;
            out.text("datasets.csv", |w| {
                writeln!(w, "dataset,n_samples,mean_confusion")?;
                for d in &report.datasets {
                    writeln!(w, "{},{},{}", d.name, d.n_samples, d.mean_confusion)?;
                }
                Ok(())
            })?;
        }
        Format::Structured => {
            out.text("predictions.toml", |w| {
                w.write_all(report.to_toml().as_bytes())
            })?;
        }
    }
    out.finish()?;
    for p in report
        .predictions
        .iter()
        .filter(|p| p.model_id == ENSEMBLE_ID)
    {
        eprintln!(
            "{} on {}: predicted {:.4}, actual {}",
            p.model_id,
            p.ood_dataset,
            p.predicted,
            p.actual
                .map(|x| format!("{x:.4}"))
                .unwrap_or_else(|| "n/a".into())
        );
    }
    Ok(())
}

fn phases(a: AnalysisArgs) -> Result<()> {
    let s = Session::open(&a)?;
    let m = &s.manifest;
    let train = m
        .train_dataset()
        .ok_or_else(|| anyhow!("phase detection needs a train dataset in the manifest"))?;
    let series = m
        .runs()
        .iter()
        .map(|r| {
            m.metrics(&r.model_id)
                .ok_or_else(|| anyhow!("run {} has no metrics", r.model_id))
        })
        .collect::<Result<Vec<&MetricsSeries>>>()?;
    let mean = MetricsSeries::mean_over_runs(&series);
    let params = PhaseParams {
        smoothing: s.settings.smoothing,
        delta: s.settings.delta,
    };
    let rep = detect_phases(&mean, &train.name, &m.id_dataset().name, params)?;
    let an = Analysis::new(m)?;
    let trajectories: Vec<(String, Vec<f64>)> = s
        .datasets()
        .iter()
        .map(|d| Ok((d.name.clone(), mean_entropy_trajectory(an.scorer(&d.name)?))))
        .collect::<Result<_>>()?;

    #[derive(Serialize)]
    struct PhasesFile {
        n_epochs: usize,
        smoothing: usize,
        delta: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        t1: Option<usize>,
        #[serde(skip_serializing_if = "Option::is_none")]
        t2: Option<usize>,
    }
    let file = PhasesFile {
        n_epochs: rep.epochs.len(),
        smoothing: params.smoothing,
        delta: params.delta,
        t1: rep.t1,
        t2: rep.t2,
    };
    let prov = s.provenance("phases", &NoExtra {});
    let _lock = Lock::acquire(&a.out)?;
    let mut out = Output::new(a.out.join("phases"), &prov, "provenance.toml")?;
    out.text("phases.toml", |w| {
        w.write_all(toml::to_string(&file).expect("serializes").as_bytes())
    })?;
    out.text("evidence.csv", |w| rep.write_evidence_csv(w))?;
    out.text("entropy.csv", |w| write_trajectories(w, &trajectories))?;
    out.finish()?;
    eprintln!("t1 = {:?}, t2 = {:?}", rep.t1, rep.t2);
    Ok(())
}

fn fit(a: AnalysisArgs) -> Result<()> {
    let s = Session::open(&a)?;
    let m = &s.manifest;
    let an = Analysis::new(m)?;
    let basis = s.basis(&an);
    let c = m.n_classes();
    let runs: Vec<&str> = m.runs().iter().map(|r| r.model_id.as_str()).collect();
    let tests = s.labelled_tests();

    let mut group_rows = Vec::new();
    let mut acc: BTreeMap<(String, String), f64> = BTreeMap::new();
    for d in &tests {
        let part = an.partition(&d.name, basis, s.settings.bins)?;
        let edges = part.edges();
        for model in runs.iter().copied().chain([ENSEMBLE_ID]) {
            let correct = an
                .correctness(model, &d.name, EpochSel::Final)?
                .expect("labelled dataset");
            acc.insert(
                (model.to_owned(), d.name.clone()),
                correct.iter().sum::<f64>() / correct.len() as f64,
            );
            let (mut xs, mut ys, mut ws) = (Vec::new(), Vec::new(), Vec::new());
            for (k, a) in per_bin_mean(&part, &correct)?.into_iter().enumerate() {
                if let Some(a) = a {
                    xs.push(0.5 * (edges[k] + edges[k + 1]));
                    ys.push(a);
                    ws.push(part.counts()[k] as f64);
                }
            }
            let row = match fit_group_model(&xs, &ys, &ws, c) {
                Ok(g) => format!("{},{model},{},{},{}", d.name, g.alpha, g.fit_rss, xs.len()),
                Err(e) => {
                    eprintln!("warning: group model for {model} on {}: {e}", d.name);
                    format!("{},{model},,,{}", d.name, xs.len())
                }
            };
            group_rows.push(row);
        }
    }

    let counts: Vec<u64> = m.runs().iter().map(|r| r.param_count).collect();
    let alphas = match complexity_index(&counts) {
        Ok(v) => Some(v),
        Err(e) => {
            eprintln!("warning: no complexity index: {e}");
            None
        }
    };
    let collinearity = match &alphas {
        Some(alphas) => {
            let mut curves = Vec::new();
            for d in &tests {
                let labels = m.labels(&d.name).expect("labelled dataset");
                let split =
                    correct_count_split(an.scorer(&d.name)?, labels, None, s.settings.thresholds)?;
                curves.push(DatasetCurve {
                    name: d.name.clone(),
                    points: runs
                        .iter()
                        .zip(alphas)
                        .map(|(r, &al)| (al, acc[&((*r).to_owned(), d.name.clone())]))
                        .collect(),
                    ratios: split.ratios,
                });
            }
            match fit_collinearity(&curves, c) {
                Ok(f) => Some(f),
                Err(e) => {
                    eprintln!("warning: collinearity fit unavailable: {e}");
                    None
                }
            }
        }
        None => None,
    };

    let prov = s.provenance("fit", &NoExtra {});
    let _lock = Lock::acquire(&a.out)?;
    let mut out = Output::new(a.out.join("fit"), &prov, "provenance.toml")?;
    out.text("group_models.csv", |w| {
        writeln!(w, "dataset,model_id,alpha,fit_rss,n_bins_used")?;
        group_rows.iter().try_for_each(|r| writeln!(w, "{r}"))
    })?;
    out.text("accuracy_table.csv", |w| {
        write!(w, "model_id,param_count,complexity")?;
        for d in &tests {
            write!(w, ",{}", d.name)?;
        }
        writeln!(w)?;
        for (i, r) in m.runs().iter().enumerate() {
            let al = alphas
                .as_ref()
                .map(|v| v[i].to_string())
                .unwrap_or_default();
            write!(w, "{},{},{al}", r.model_id, r.param_count)?;
            for d in &tests {
                write!(w, ",{}", acc[&(r.model_id.clone(), d.name.clone())])?;
            }
            writeln!(w)?;
        }
        Ok(())
    })?;
    if let Some(f) = &collinearity {
        out.text("collinearity.csv", |w| f.write_csv(w))?;
    }
    out.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct ExtremesExtra<'a> {
    format: &'static str,
    dataset: &'a str,
    k: usize,
    which: &'static str,
    mistakes_only: bool,
}

fn extremes(a: ExtremesArgs) -> Result<()> {
    let s = Session::open(&a.analysis)?;
    let an = Analysis::new(&s.manifest)?;
    let rows = extremes_for(&an, &a.dataset, s.basis(&an), a.k, a.which, a.mistakes_only)?;
    let prov = s.provenance(
        "extremes",
        &ExtremesExtra {
            format: format_name(a.analysis.format),
            dataset: &a.dataset,
            k: a.k,
            which: a.which.as_str(),
            mistakes_only: a.mistakes_only,
        },
    );
    let stem = format!(
        "{}.{}{}",
        a.dataset,
        a.which.as_str(),
        if a.mistakes_only { ".mistakes" } else { "" }
    );
    let _lock = Lock::acquire(&a.analysis.out)?;
    let mut out = Output::new(
        a.analysis.out.join("extremes"),
        &prov,
        &format!("provenance.{stem}.toml"),
    )?;
    match a.analysis.format {
        Format::Csv => out.text(&format!("{stem}.csv"), |w| extremes::write_csv(&rows, w))?,
        Format::Structured => {
            #[derive(Serialize)]
            struct File<'a> {
                dataset: &'a str,
                which: &'static str,
                mistakes_only: bool,
                samples: &'a [extremes::ExtremeRow],
            }
            let f = File {
                dataset: &a.dataset,
                which: a.which.as_str(),
                mistakes_only: a.mistakes_only,
                samples: &rows,
            };
            out.text(&format!("{stem}.toml"), |w| {
                w.write_all(toml::to_string(&f).expect("serializes").as_bytes())
            })?
        }
    }
    out.finish()?;
    Ok(())
}
