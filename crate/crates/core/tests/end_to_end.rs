use std::sync::Arc;

use clens::proba_log::{read_cpl, write_cpl};
use clens::scoring::Ensemble;
use clens::synth::{self, SynthConfig, Tag};
use clens::trainer::{self, DataView, RunSpec, ToyArch, TrainConfig};

#[test]
fn low_confusion_mistakes_are_enriched_for_corruption_and_spurious_tags() {
    let mut cfg = SynthConfig::mixture(5);
    cfg.n_id = 6000;
    cfg.ood.clear();
    let bundle = synth::gen_mixture(&cfg).unwrap();
    let (train, id) = (bundle.train(), bundle.get("id").unwrap());
    let d = train.n_features;
    let specs: Vec<RunSpec> = [vec![32], vec![64]]
        .into_iter()
        .flat_map(|h| (0..2).map(move |seed| RunSpec { arch: ToyArch::new(h.clone(), d, 10).unwrap(), seed }))
        .collect();
    let views = [DataView::from(id)];
    let outs = trainer::train_ensemble(&specs, &DataView::from(train), &views, &TrainConfig { epochs: 15, ..Default::default() })
        .unwrap();
    let ens = Ensemble::new(outs.iter().map(|o| Arc::new(o.logs[0].clone()))).unwrap();
    let scores = ens.confusion_scores(1, ens.n_epochs()).unwrap();
    let pred = ens.predict_final();

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let q = order.len() / 4;
    let tagged = |i: usize| id.has_tag(i, |t| matches!(t, Tag::Corrupted | Tag::ClassSpecific { .. }));
    let fraction = |quartile: &[usize]| {
        let wrong: Vec<usize> = quartile.iter().copied().filter(|&i| pred[i] != id.labels[i]).collect();
        assert!(!wrong.is_empty());
        wrong.iter().filter(|&&i| tagged(i)).count() as f64 / wrong.len() as f64
    };
    let (low, high) = (fraction(&order[..q]), fraction(&order[order.len() - q..]));
    assert!(low > high, "lowest quartile {low:.3} vs highest {high:.3}");
}

#[test]
fn bundles_round_trip_through_disk() {
    let bundle = synth::gen_mixture(&SynthConfig::three_phase(2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let written = synth::write_bundle(&bundle, dir.path(), &["test".into()]).unwrap();
    let (index, back) = synth::read_bundle(dir.path()).unwrap();
    assert_eq!(index, written);
    assert_eq!(back, bundle);
}

#[test]
fn generation_is_reproducible_and_seed_sensitive() {
    let a = synth::gen_mixture(&SynthConfig::mixture(9)).unwrap();
    let b = synth::gen_mixture(&SynthConfig::mixture(9)).unwrap();
    let c = synth::gen_mixture(&SynthConfig::mixture(10)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.train().features, c.train().features);
}

#[test]
fn tags_are_sound() {
    let bundle = synth::gen_mixture(&SynthConfig::mixture(4)).unwrap();
    for ds in &bundle.datasets {
        for i in 0..ds.n_samples() {
            let corrupted = ds.has_tag(i, |t| *t == Tag::Corrupted);
            assert_eq!(corrupted, ds.labels[i] != ds.latent[i], "{} sample {i}", ds.name);
            if ds.has_tag(i, |t| *t == Tag::Clean) {
                assert_eq!(ds.tags[i], vec![Tag::Clean]);
            }
        }
    }
}

#[test]
fn trained_logs_survive_the_file_format() {
    let bundle = synth::gen_colored_two_class(&synth::ColoredConfig::new(1)).unwrap();
    let spec = RunSpec { arch: ToyArch::new(vec![8], 4, 2).unwrap(), seed: 0 };
    let train = DataView::from(bundle.train());
    let out = trainer::train_run(&spec, &train, &[train], &TrainConfig { epochs: 3, ..Default::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.cpl");
    write_cpl(&out.logs[0], &path).unwrap();
    let back = read_cpl(&path).unwrap();
    assert_eq!(back.values(), out.logs[0].values());
    assert_eq!((back.n_epochs(), back.n_samples(), back.n_classes()), (3, 2000, 2));
}
