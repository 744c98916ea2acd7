//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every criterion prints exactly one PASS/FAIL line, in order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use clens::models::{self, DatasetCurve};
use clens::partition::{
    self, bin_scores, correct_count_split, subpop_accuracy, Correctness, EpochSel, Subpop,
};
use clens::phases::{detect_phases, PhaseParams};
use clens::predictor::{predict_ood_accuracy, Analysis, ENSEMBLE_ID};
use clens::proba_log::{
    write_cpl, write_labels, DatasetEntry, DatasetRole, LabelVec, Manifest, MetricsSeries,
};
use clens::rng::Stream;
use clens::scoring::{entropy, Ensemble};
use clens::synth::{self, ColoredConfig, SynthConfig, SynthDataset};
use clens::trainer::{self, DataView, RunSpec, ToyArch, TrainConfig};
use clens::ProbLog;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_dist(s: &mut Stream, c: usize) -> Vec<f64> {
    // occasional exact zeros exercise the cutoff path
    let mut p: Vec<f64> = (0..c)
        .map(|_| {
            if s.bernoulli(0.1) {
                0.0
            } else {
                -s.uniform().max(1e-300).ln()
            }
        })
        .collect();
    if p.iter().all(|&v| v == 0.0) {
        p[s.below(c)] = 1.0;
    }
    let t: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= t);
    p
}

fn random_log(s: &mut Stream, id: &str, t: usize, n: usize, c: usize) -> ProbLog {
    let mut probs = Vec::with_capacity(t * n * c);
    for _ in 0..t * n {
        // sharpen some rows so scores spread over the whole range
        let temp = 0.2 + 3.0 * s.uniform();
        let raw: Vec<f64> = (0..c).map(|_| (temp * s.normal()).exp()).collect();
        let z: f64 = raw.iter().sum();
        probs.extend(raw.iter().map(|v| (v / z) as f32));
    }
    ProbLog::new(id, t, n, c, probs).unwrap()
}

// ---- 1 -------------------------------------------------------------------

fn entropy_suite() -> Check {
    let tol = 1e-12;
    for c in [2usize, 3, 10, 100] {
        let h = entropy(&vec![1.0 / c as f64; c]).unwrap();
        ensure((h - (c as f64).ln()).abs() <= tol, || {
            format!("uniform C={c}: {h}")
        })?;
        let mut one = vec![0.0; c];
        one[c - 1] = 1.0;
        let h = entropy(&one).unwrap();
        ensure(h.abs() <= tol, || format!("one-hot C={c}: {h}"))?;
    }
    let h = entropy(&[0.5, 0.25, 0.25]).unwrap();
    ensure((h - 1.039720770839918).abs() <= tol, || {
        format!("[.5,.25,.25]: {h}")
    })?;
    ensure(entropy(&[0.7, 0.7]).is_err(), || {
        "accepted a non-distribution".into()
    })?;

    let mut s = Stream::new(11);
    for i in 0..10_000 {
        let c = 2 + s.below(99);
        let p = random_dist(&mut s, c);
        let h = entropy(&p).unwrap();
        ensure((0.0..=(c as f64).ln()).contains(&h), || {
            format!("draw {i}: H={h} outside [0, ln {c}]")
        })?;
    }
    Ok("fixed values within 1e-12; 10000 random distributions in [0, ln C]".into())
}

// ---- 2 -------------------------------------------------------------------

fn naive_entropy(p: &[f64]) -> f64 {
    let h: f64 = p.iter().filter(|&&v| v > 1e-12).map(|&v| -v * v.ln()).sum();
    h.clamp(0.0, (p.len() as f64).ln())
}

/// Straight-line reference: per-sample ensemble mean, entropy, window mean.
fn naive_confusion(logs: &[ProbLog], a: usize, b: usize) -> Vec<f64> {
    let (n, c) = (logs[0].n_samples(), logs[0].n_classes());
    (0..n)
        .map(|i| {
            let mut total = 0.0;
            for t in a..=b {
                let mut mean = vec![0.0; c];
                for log in logs {
                    for (k, v) in log.row(t, i).iter().enumerate() {
                        mean[k] += *v as f64 / logs.len() as f64;
                    }
                }
                total += naive_entropy(&mean);
            }
            total / (b - a + 1) as f64
        })
        .collect()
}

fn naive_argmax_mean(logs: &[ProbLog], t: usize, i: usize) -> usize {
    let c = logs[0].n_classes();
    let mut mean = vec![0.0; c];
    for log in logs {
        for (k, v) in log.row(t, i).iter().enumerate() {
            mean[k] += *v as f64;
        }
    }
    (0..c).fold(0, |best, k| if mean[k] > mean[best] { k } else { best })
}

fn scalar_oracle() -> Check {
    let mut s = Stream::new(22);
    let mut worst: f64 = 0.0;
    for inst in 0..100 {
        let m = 1 + s.below(8);
        let (n_id, n_ood) = (1 + s.below(64), 1 + s.below(64));
        let c = 2 + s.below(9);
        let t = 1 + s.below(6);
        let n_bins = 1 + s.below(12);
        let id_logs: Vec<ProbLog> = (0..m)
            .map(|r| random_log(&mut s, &format!("r{r}"), t, n_id, c))
            .collect();
        let ood_logs: Vec<ProbLog> = (0..m)
            .map(|r| random_log(&mut s, &format!("r{r}"), t, n_ood, c))
            .collect();
        let labels: Vec<usize> = (0..n_id).map(|_| s.below(c)).collect();
        let a = 1 + s.below(t);
        let b = a + s.below(t - a + 1);

        let ens = |logs: &[ProbLog]| Ensemble::new(logs.iter().cloned().map(Arc::new)).unwrap();
        let (id_ens, ood_ens) = (ens(&id_logs), ens(&ood_logs));
        let id_scores = id_ens.confusion_scores(a, b).unwrap();
        let ood_scores = ood_ens.confusion_scores(a, b).unwrap();
        let (id_ref, ood_ref) = (
            naive_confusion(&id_logs, a, b),
            naive_confusion(&ood_logs, a, b),
        );
        for (x, y) in id_scores
            .iter()
            .chain(&ood_scores)
            .zip(id_ref.iter().chain(&ood_ref))
        {
            worst = worst.max((x - y).abs());
            ensure((x - y).abs() <= 1e-12, || {
                format!("instance {inst}: score {x} vs {y}")
            })?;
        }

        let ln_c = (c as f64).ln();
        let width = ln_c / n_bins as f64;
        let naive_bin = |v: f64| ((v / width).floor() as usize).min(n_bins - 1);
        let id_part = bin_scores(&id_scores, n_bins, c).unwrap();
        let ood_part = bin_scores(&ood_scores, n_bins, c).unwrap();
        for (k, v) in id_part.assignment().iter().zip(&id_ref) {
            ensure(*k == naive_bin(*v), || {
                format!("instance {inst}: bin {k} for score {v}")
            })?;
        }
        let mut ref_counts = vec![0usize; n_bins];
        let mut ref_hits = vec![0.0; n_bins];
        for i in 0..n_id {
            let k = naive_bin(id_ref[i]);
            ref_counts[k] += 1;
            if naive_argmax_mean(&id_logs, t, i) == labels[i] {
                ref_hits[k] += 1.0;
            }
        }
        let mut ref_ood = vec![0.0; n_bins];
        for v in &ood_ref {
            ref_ood[naive_bin(*v)] += 1.0 / n_ood as f64;
        }
        for (x, y) in partition::participation_ratios(&ood_part)
            .iter()
            .zip(&ref_ood)
        {
            ensure((x - y).abs() <= 1e-12, || {
                format!("instance {inst}: ratio {x} vs {y}")
            })?;
        }

        // predictor, empty ID bins borrowing from the nearest non-empty bin
        let mut expected = 0.0;
        for k in 0..n_bins {
            if ref_ood[k] == 0.0 {
                continue;
            }
            let src = (0..n_bins)
                .filter(|&j| ref_counts[j] > 0)
                .min_by_key(|&j| (j.abs_diff(k), j))
                .unwrap();
            expected += ref_ood[k] * ref_hits[src] / ref_counts[src] as f64;
        }
        let lv = LabelVec::new(labels.clone(), c).unwrap();
        let correct = Correctness::compute(&id_ens, &lv, EpochSel::Final).unwrap();
        let accs: Vec<f64> = partition::per_bin_mean(&id_part, &correct.ensemble)
            .unwrap()
            .into_iter()
            .map(|a| a.unwrap_or(0.0))
            .collect();
        let got = predict_ood_accuracy(&accs, id_part.counts(), &ood_part.ratios())
            .unwrap()
            .accuracy;
        worst = worst.max((got - expected).abs());
        ensure((got - expected).abs() <= 1e-12, || {
            format!("instance {inst}: predicted {got} vs {expected}")
        })?;
    }
    Ok(format!("100 instances, max deviation {worst:.1e}"))
}

// ---- 3 -------------------------------------------------------------------

/// Manifest with one labelled dataset per entry and one log per run.
fn write_fixture(
    sets: &[(&str, DatasetRole, &[usize])],
    logs: &[Vec<ProbLog>],
) -> (tempfile::TempDir, Manifest) {
    let dir = tempfile::tempdir().unwrap();
    let mut file = clens::proba_log::ManifestFile::default();
    for (name, role, labels) in sets {
        let rel = PathBuf::from(format!("{name}.labels.csv"));
        write_labels(labels, dir.path().join(&rel)).unwrap();
        file.datasets.push(DatasetEntry {
            name: (*name).into(),
            role: *role,
            n_samples: labels.len(),
            labels: Some(rel),
            tags: None,
        });
    }
    for (r, per_set) in logs.iter().enumerate() {
        let mut paths = BTreeMap::new();
        for ((name, _, _), log) in sets.iter().zip(per_set) {
            let rel = PathBuf::from(format!("r{r}.{name}.cpl"));
            write_cpl(log, dir.path().join(&rel)).unwrap();
            paths.insert((*name).to_owned(), rel);
        }
        file.runs.push(clens::proba_log::RunEntry {
            model_id: format!("r{r}"),
            family: "random".into(),
            seed: r as u64,
            param_count: 1,
            metrics: None,
            logs: paths,
        });
    }
    let m = Manifest::load(file, dir.path()).unwrap();
    (dir, m)
}

fn self_prediction() -> Check {
    let mut s = Stream::new(33);
    let (m, t, n, c) = (5, 4, 300, 6);
    let logs: Vec<Vec<ProbLog>> = (0..m)
        .map(|r| vec![random_log(&mut s, &format!("r{r}"), t, n, c)])
        .collect();
    let labels: Vec<usize> = (0..n).map(|_| s.below(c)).collect();
    let (_fx, manifest) = write_fixture(&[("id", DatasetRole::Id, &labels)], &logs);
    let a = Analysis::new(&manifest).unwrap();
    let mut worst: f64 = 0.0;
    for n_bins in [1, 7, 40] {
        for model in ["r0", "r3", ENSEMBLE_ID] {
            let p = a
                .predict(model, a.full_window(), n_bins, "id", EpochSel::Final)
                .unwrap();
            let r = p.residual.unwrap().abs();
            worst = worst.max(r);
            ensure(r <= 1e-12, || {
                format!("bins {n_bins}, {model}: residual {r}")
            })?;
        }
    }
    Ok(format!("bins {{1, 7, 40}}, max |residual| {worst:.1e}"))
}

// ---- 4 -------------------------------------------------------------------

fn resampling_oracle() -> Check {
    let mut cfg = SynthConfig::mixture(404);
    cfg.n_id = 10_000;
    cfg.ood.clear();
    let bundle = synth::gen_mixture(&cfg).map_err(|e| e.to_string())?;
    let (train, id) = (bundle.train(), bundle.get("id").unwrap());
    let d = train.n_features;
    let specs: Vec<RunSpec> = [vec![], vec![32], vec![64], vec![32, 16]]
        .into_iter()
        .flat_map(|h| {
            (0..2).map(move |seed| RunSpec {
                arch: ToyArch::new(h.clone(), d, 10).unwrap(),
                seed,
            })
        })
        .collect();
    let tcfg = TrainConfig {
        epochs: 8,
        seed: 404,
        ..Default::default()
    };
    let views = [DataView::from(train), DataView::from(id)];
    let outs =
        trainer::train_ensemble(&specs, &views[0], &views, &tcfg).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().unwrap();
    let mut file =
        trainer::write_experiment(&[train, id], &outs, dir.path()).map_err(|e| e.to_string())?;
    let manifest = Manifest::load(file.clone(), dir.path()).map_err(|e| e.to_string())?;
    let a = Analysis::new(&manifest).unwrap();
    let basis = a.full_window();
    let scores = a.scores("id", basis).unwrap();

    // tilt the ID bin mass toward confusing samples
    let n_bins = 40;
    let part = bin_scores(&scores, n_bins, 10).unwrap();
    let mut target: Vec<f64> = part
        .ratios()
        .iter()
        .enumerate()
        .map(|(k, r)| r * (4.0 * k as f64 / n_bins as f64).exp())
        .collect();
    let z: f64 = target.iter().sum();
    target.iter_mut().for_each(|v| *v /= z);
    let shifted = synth::resample_by_bins(id, &scores, &target, 10_000, "shifted", 404)
        .map_err(|e| e.to_string())?;

    let labels = PathBuf::from("data/shifted.labels.csv");
    write_labels(&shifted.dataset.labels, dir.path().join(&labels)).unwrap();
    file.datasets.push(DatasetEntry {
        name: "shifted".into(),
        role: DatasetRole::Ood,
        n_samples: 10_000,
        labels: Some(labels),
        tags: None,
    });
    for run in &mut file.runs {
        let src = manifest.log(&run.model_id, "id").unwrap();
        let rel = PathBuf::from(format!("runs/{}/shifted.cpl", run.model_id));
        write_cpl(
            &src.select_samples(&shifted.source_indices).unwrap(),
            dir.path().join(&rel),
        )
        .unwrap();
        run.logs.insert("shifted".into(), rel);
    }
    let manifest = Manifest::load(file, dir.path()).map_err(|e| e.to_string())?;
    let a = Analysis::new(&manifest).unwrap();
    let mut worst: f64 = 0.0;
    let mut shift = 0.0;
    for run in manifest.runs() {
        let p = a
            .predict(&run.model_id, basis, n_bins, "shifted", EpochSel::Final)
            .unwrap();
        let id_acc = a
            .predict(&run.model_id, basis, n_bins, "id", EpochSel::Final)
            .unwrap()
            .actual
            .unwrap();
        shift = p.actual.unwrap() - id_acc;
        worst = worst.max(p.residual.unwrap().abs());
    }
    ensure(worst <= 0.02, || format!("max |residual| {worst:.4}"))?;
    ensure(shift < -0.02, || {
        format!("resampling did not shift accuracy ({shift:+.3})")
    })?;
    Ok(format!(
        "8 runs, max |residual| {worst:.4} (accuracy shift {shift:+.3})"
    ))
}

// ---- 5 -------------------------------------------------------------------

/// Mean signed residual on the clean shifted set when partitioning by the
/// entropy at the first and at the last epoch.
fn epoch_residuals(seed: u64) -> Result<(f64, f64), String> {
    let bundle = synth::gen_mixture(&SynthConfig::three_phase(seed)).map_err(|e| e.to_string())?;
    let sets: Vec<&SynthDataset> = ["train", "id", "ood-clean"]
        .iter()
        .map(|n| bundle.get(n).unwrap())
        .collect();
    let views: Vec<DataView> = sets.iter().map(|d| DataView::from(*d)).collect();
    let d = sets[0].n_features;
    let specs: Vec<RunSpec> = [128, 256]
        .into_iter()
        .flat_map(|h| {
            (0..2).map(move |seed| RunSpec {
                arch: ToyArch::new(vec![h], d, 10).unwrap(),
                seed,
            })
        })
        .collect();
    let cfg = TrainConfig::three_phase(seed);
    let outs =
        trainer::train_ensemble(&specs, &views[0], &views, &cfg).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().unwrap();
    let file = trainer::write_experiment(&sets, &outs, dir.path()).map_err(|e| e.to_string())?;
    let m = Manifest::load(file, dir.path()).map_err(|e| e.to_string())?;
    let a = Analysis::new(&m).unwrap();
    let mean_residual = |t: usize| -> f64 {
        m.runs()
            .iter()
            .map(|r| {
                a.predict_epoch_variant(&r.model_id, t, 40, "ood-clean")
                    .unwrap()
                    .residual
                    .unwrap()
            })
            .sum::<f64>()
            / m.runs().len() as f64
    };
    Ok((mean_residual(1), mean_residual(cfg.epochs)))
}

fn epoch_variant_trend() -> Check {
    let per_seed: Vec<(f64, f64)> = (1..=10).map(epoch_residuals).collect::<Result<_, _>>()?;
    let e1 = per_seed.iter().map(|r| r.0).sum::<f64>() / 10.0;
    let et = per_seed.iter().map(|r| r.1).sum::<f64>() / 10.0;
    let wins = per_seed.iter().filter(|r| r.0 <= r.1).count();
    ensure(e1 <= et, || {
        format!("mean residual e_1 {e1:+.4} > e_T {et:+.4}")
    })?;
    Ok(format!(
        "10 seeds: e_1 {e1:+.4} <= e_T {et:+.4} ({wins}/10 seeds individually)"
    ))
}

// ---- 6 -------------------------------------------------------------------

fn ensembling_hurts_hard() -> Check {
    let (m, c, n_hard, n_easy) = (5usize, 4usize, 30usize, 20usize);
    let n = n_hard + n_easy;
    let mut s = Stream::new(66);
    let labels: Vec<usize> = (0..n).map(|_| s.below(c)).collect();
    let mut probs = vec![vec![0f32; n * c]; m];
    for i in 0..n {
        let y = labels[i];
        let wrong = (y + 1 + s.below(c - 1)) % c;
        // hard: three runs agree on the same wrong class, two are right
        let mut order: Vec<usize> = (0..m).collect();
        s.shuffle(&mut order);
        for (pos, &r) in order.iter().enumerate() {
            let k = if i < n_hard && pos < 3 { wrong } else { y };
            probs[r][i * c + k] = 1.0;
        }
    }
    let logs: Vec<Arc<ProbLog>> = probs
        .into_iter()
        .enumerate()
        .map(|(r, p)| Arc::new(ProbLog::new(format!("r{r}"), 1, n, c, p).unwrap()))
        .collect();
    let ens = Ensemble::new(logs).unwrap();
    let lv = LabelVec::new(labels, c).unwrap();
    let split = correct_count_split(&ens, &lv, None, Some((2.5, 4.0))).unwrap();
    let groups = subpop_accuracy(&split, &ens, &lv, None).unwrap();
    let hard = groups.iter().find(|g| g.group == Subpop::Hard).unwrap();
    ensure(hard.count == n_hard, || {
        format!("hard group has {} samples", hard.count)
    })?;
    ensure(hard.ensemble_accuracy == Some(0.0), || {
        format!("ensemble accuracy {:?}", hard.ensemble_accuracy)
    })?;
    let mean = hard.mean_accuracy.unwrap();
    ensure(mean > 0.0, || "mean per-run accuracy is zero".into())?;
    Ok(format!("hard group: ensemble 0, mean per-run {mean:.2}"))
}

// ---- 7 -------------------------------------------------------------------

fn model_fit_recovery() -> Check {
    let c = 10;
    let ln_c = (c as f64).ln();
    let centers: Vec<f64> = (0..40).map(|k| (k as f64 + 0.5) * ln_c / 40.0).collect();
    let mut worst: f64 = 0.0;
    for alpha in [0.0, 0.137, 0.5, 0.8123, 1.0] {
        let accs: Vec<f64> = centers
            .iter()
            .map(|&x| models::eval_group_model(alpha, x, c).unwrap())
            .collect();
        let weights: Vec<f64> = (0..40).map(|k| 1.0 + (k % 3) as f64).collect();
        let fit =
            models::fit_group_model(&centers, &accs, &weights, c).map_err(|e| e.to_string())?;
        worst = worst.max((fit.alpha - alpha).abs());
        ensure((fit.alpha - alpha).abs() <= 1e-6, || {
            format!("alpha {alpha}: fitted {}", fit.alpha)
        })?;
    }

    let (m_easy, s_easy, m_med, s_med) = (0.62, 0.31, 0.35, 0.27);
    let chance = 1.0 / c as f64;
    let world = |r: [f64; 3], x: f64| {
        r[0] * (m_easy + x * s_easy) + r[1] * (m_med + x * s_med) + r[2] * chance
    };
    let xs = models::complexity_index(&[1_000, 4_000, 16_000, 64_000, 256_000]).unwrap();
    let ratios = [
        [0.7, 0.2, 0.1],
        [0.5, 0.3, 0.2],
        [0.3, 0.3, 0.4],
        [0.55, 0.15, 0.3],
    ];
    let curves: Vec<DatasetCurve> = ratios
        .iter()
        .enumerate()
        .map(|(j, r)| DatasetCurve {
            name: format!("d{j}"),
            points: xs.iter().map(|&x| (x, world(*r, x))).collect(),
            ratios: *r,
        })
        .collect();
    let fit = models::fit_collinearity(&curves, c).map_err(|e| e.to_string())?;
    for (got, want) in [
        (fit.min_acc_easy, m_easy),
        (fit.slope_easy, s_easy),
        (fit.min_acc_med, m_med),
        (fit.slope_med, s_med),
    ] {
        let got = got.ok_or("missing shared parameter")?;
        worst = worst.max((got - want).abs());
        ensure((got - want).abs() <= 1e-6, || {
            format!("shared parameter {got} vs {want}")
        })?;
    }
    let mut min_r2: f64 = 1.0;
    for ood in &ratios[1..] {
        let pairs: Vec<(f64, f64)> = xs
            .iter()
            .map(|&x| (world(ratios[0], x), world(*ood, x)))
            .collect();
        min_r2 = min_r2.min(models::linear_r2(&pairs).unwrap());
    }
    ensure(min_r2 > 0.999, || format!("ID/OOD R^2 {min_r2}"))?;
    Ok(format!(
        "max parameter error {worst:.1e}; ID/OOD R^2 >= {min_r2:.6}"
    ))
}

// ---- 8 -------------------------------------------------------------------

fn colored_fraction(seed: u64) -> Result<f64, String> {
    let bundle =
        synth::gen_colored_two_class(&ColoredConfig::new(seed)).map_err(|e| e.to_string())?;
    let sets = trainer::eval_order(&bundle.datasets);
    let views: Vec<DataView> = sets.iter().map(|d| DataView::from(*d)).collect();
    let specs: Vec<RunSpec> = [16, 32]
        .into_iter()
        .flat_map(|h| {
            (0..2).map(move |s| RunSpec {
                arch: ToyArch::new(vec![h], 4, 2).unwrap(),
                seed: s,
            })
        })
        .collect();
    let cfg = TrainConfig {
        seed,
        ..Default::default()
    };
    let outs =
        trainer::train_ensemble(&specs, &views[0], &views, &cfg).map_err(|e| e.to_string())?;
    let green = sets.iter().position(|d| d.name == "ood_all_green").unwrap();
    let logs: Vec<Arc<ProbLog>> = outs
        .iter()
        .map(|o| Arc::new(o.logs[green].clone()))
        .collect();
    let ens = Ensemble::new(logs).unwrap();
    let scores = ens.confusion_scores(1, ens.n_epochs()).unwrap();
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let decile = &idx[..scores.len() / 10];
    let labels = &sets[green].labels;
    Ok(decile.iter().filter(|&&i| labels[i] == 1).count() as f64 / decile.len() as f64)
}

fn colored_scenario() -> Check {
    let fractions: Vec<f64> = (1..=10).map(colored_fraction).collect::<Result<_, _>>()?;
    let passing = fractions.iter().filter(|&&f| f > 0.9).count();
    let shown: Vec<String> = fractions.iter().map(|f| format!("{f:.2}")).collect();
    ensure(passing > 5, || {
        format!("{passing}/10 seeds above 0.9: {shown:?}")
    })?;
    Ok(format!(
        "{passing}/10 seeds above 0.9 (class-1 fractions {})",
        shown.join(" ")
    ))
}

// ---- 9 -------------------------------------------------------------------

fn phase_detection() -> Check {
    let mut found = Vec::new();
    for seed in 0..20 {
        let curves: MetricsSeries = synth::gen_phase_curves(5, 10, 30, 0.01, seed);
        let r = detect_phases(&curves, "train", "id", PhaseParams::default()).unwrap();
        let (t1, t2) = (
            r.t1.ok_or("t1 not detected")?,
            r.t2.ok_or("t2 not detected")?,
        );
        ensure(t1.abs_diff(5) <= 1 && t2.abs_diff(10) <= 1, || {
            format!("seed {seed}: t1={t1} t2={t2}")
        })?;
        found.push((t1, t2));
    }
    let t1s: std::collections::BTreeSet<_> = found.iter().map(|f| f.0).collect();
    let t2s: std::collections::BTreeSet<_> = found.iter().map(|f| f.1).collect();
    Ok(format!("20 noise seeds: t1 in {t1s:?}, t2 in {t2s:?}"))
}

// ---- 10 ------------------------------------------------------------------

fn clens(threads: &str, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_clens"))
        .args(args)
        .env("CLENS_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!(
            "clens {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn pipeline(root: &Path, threads: &str) -> Result<(), String> {
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    let (data, exp) = (p("data"), p("exp"));
    let manifest = p("exp/manifest.toml");
    clens(
        threads,
        &["gen", "--preset", "mixture", "--seed", "5", "--out", &data],
    )?;
    clens(
        threads,
        &[
            "train",
            "--data",
            &data,
            "--out",
            &exp,
            "--archs",
            "linear,16",
            "--seeds",
            "2",
            "--epochs",
            "6",
            "--seed",
            "5",
        ],
    )?;
    for cmd in ["score", "partition", "predict", "phases", "fit"] {
        clens(threads, &[cmd, "--manifest", &manifest, "--out", &exp])?;
    }
    clens(
        threads,
        &[
            "extremes",
            "--manifest",
            &manifest,
            "--out",
            &exp,
            "--dataset",
            "id",
            "--mistakes-only",
        ],
    )?;
    clens(threads, &["report", "--in", &exp])
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_owned()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_owned(),
                    std::fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}

fn determinism() -> Check {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path(), "1")?;
    pipeline(b.path(), "4")?;
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    let names_a: Vec<_> = ta.keys().collect();
    let names_b: Vec<_> = tb.keys().collect();
    ensure(names_a == names_b, || "artifact sets differ".into())?;
    for (name, bytes) in &ta {
        ensure(tb[name] == *bytes, || format!("{} differs", name.display()))?;
    }
    Ok(format!(
        "{} artifacts byte-identical with 1 and 4 threads",
        ta.len()
    ))
}

// ---- 11 ------------------------------------------------------------------

fn gradient_check() -> Check {
    let mut cfg = SynthConfig::mixture(111);
    cfg.n_train = 64;
    let bundle = synth::gen_mixture(&cfg).map_err(|e| e.to_string())?;
    let data = DataView::from(bundle.train());
    let arch = ToyArch::new(vec![12, 8], data.n_features, 10).unwrap();
    let model = trainer::init_model(&arch, 111);
    let batch: Vec<usize> = (0..32).collect();
    let (_, grad) = trainer::loss_and_grad(&model, &data, &batch);
    let mut s = Stream::new(111);
    let (mut probes, mut worst) = (0, 0.0f64);
    let h = 1e-5;
    while probes < 20 {
        let p = s.below(grad.len());
        if grad[p].abs() < 1e-6 {
            // dead unit: nothing to compare against
            continue;
        }
        let loss_at = |delta: f64| {
            let mut m = model.clone();
            m.params[p] += delta;
            trainer::loss_and_grad(&m, &data, &batch).0
        };
        let fd = (loss_at(h) - loss_at(-h)) / (2.0 * h);
        let rel = (fd - grad[p]).abs() / fd.abs().max(grad[p].abs());
        worst = worst.max(rel);
        ensure(rel < 1e-4, || {
            format!("param {p}: analytic {} vs numeric {fd}", grad[p])
        })?;
        probes += 1;
    }
    Ok(format!("20 probes, max relative error {worst:.1e}"))
}

fn main() {
    // `cargo test -- --list` and friends expect the harness protocol
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [(&str, fn() -> Check); 11] = [
        ("entropy unit suite", entropy_suite),
        ("scalar-oracle equivalence", scalar_oracle),
        ("self-prediction identity", self_prediction),
        ("resampling oracle", resampling_oracle),
        ("epoch-variant trend", epoch_variant_trend),
        ("ensembling hurts the hard group", ensembling_hurts_hard),
        ("model-fit recovery", model_fit_recovery),
        ("colored two-class scenario", colored_scenario),
        ("phase detection", phase_detection),
        ("pipeline determinism", determinism),
        ("trainer gradient check", gradient_check),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why} [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
