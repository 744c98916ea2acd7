use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn clens(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clens"))
        .args(args)
        .env_remove("CLENS_THREADS")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn ok(args: &[&str]) {
    let out = clens(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// gen + a tiny train; returns (data dir, experiment dir).
fn small_experiment(root: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let (data, exp) = (root.join("data"), root.join("exp"));
    ok(&["gen", "--preset", "colored2", "--seed", "3", "--out", s(&data)]);
    ok(&[
        "train", "--data", s(&data), "--out", s(&exp), "--archs", "linear,8", "--seeds", "2", "--epochs", "5",
    ]);
    (data, exp)
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&clens(&["--help"])), 0);
    assert_eq!(code(&clens(&["--version"])), 0);
    assert!(String::from_utf8_lossy(&clens(&["--version"]).stdout).contains("0.1.0"));
}

#[test]
fn usage_errors_are_config_errors() {
    assert_eq!(code(&clens(&["score", "--bogus"])), 4);
    assert_eq!(code(&clens(&["frobnicate"])), 4);
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&clens(&["gen", "--preset", "nope", "--out", s(dir.path())])), 4);
    let out = Command::new(env!("CARGO_BIN_EXE_clens"))
        .args(["gen", "--out", s(dir.path())])
        .env("CLENS_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&out), 4);
}

#[test]
fn missing_or_corrupt_inputs_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing.toml");
    assert_eq!(code(&clens(&["score", "--manifest", s(&missing), "--out", s(dir.path())])), 3);

    let (_, exp) = small_experiment(dir.path());
    let cpl = exp.join("runs/linear-s0/id.cpl");
    let mut bytes = fs::read(&cpl).unwrap();
    bytes.truncate(bytes.len() - 3);
    fs::write(&cpl, bytes).unwrap();
    let manifest = exp.join("manifest.toml");
    assert_eq!(code(&clens(&["score", "--manifest", s(&manifest), "--out", s(&exp)])), 3);
}

#[test]
fn invalid_requests_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (_, exp) = small_experiment(dir.path());
    let manifest = exp.join("manifest.toml");
    let out = clens(&["extremes", "--manifest", s(&manifest), "--out", s(&exp), "--dataset", "nope"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    let out = clens(&["score", "--manifest", s(&manifest), "--out", s(&exp), "--window", "3:99"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn colored_preset_writes_four_sets() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen", "--preset", "colored2", "--seed", "9", "--out", s(dir.path())]);
    let index = fs::read_to_string(dir.path().join("bundle.toml")).unwrap();
    assert!(index.starts_with("# clens 0.1.0 config="));
    for name in ["train", "id", "ood_all_green", "ood_all_red"] {
        assert!(index.contains(&format!("name = \"{name}\"")), "{name}");
        assert!(dir.path().join(format!("{name}.features.cft")).exists());
    }
    let prov = fs::read_to_string(dir.path().join("provenance.gen.toml")).unwrap();
    assert!(prov.contains("bundle.toml"));
}

#[test]
fn artifacts_carry_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let (_, exp) = small_experiment(dir.path());
    let manifest = exp.join("manifest.toml");
    ok(&["predict", "--manifest", s(&manifest), "--out", s(&exp), "--bins", "10"]);
    let csv = fs::read_to_string(exp.join("predict/predictions.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    let prov = fs::read_to_string(exp.join("predict/provenance.toml")).unwrap();
    let hash = header.rsplit('=').next().unwrap();
    assert_eq!(hash.len(), 16);
    assert!(prov.contains(hash), "{header}\n{prov}");

    // a different setting changes the hash
    ok(&["predict", "--manifest", s(&manifest), "--out", s(&exp), "--bins", "20"]);
    let again = fs::read_to_string(exp.join("predict/predictions.csv")).unwrap();
    assert_ne!(again.lines().next().unwrap(), header);
}

#[test]
fn report_regenerates_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (_, exp) = small_experiment(dir.path());
    let manifest = exp.join("manifest.toml");
    for cmd in ["score", "partition", "predict", "phases"] {
        ok(&[cmd, "--manifest", s(&manifest), "--out", s(&exp)]);
    }
    ok(&["report", "--in", s(&exp)]);
    let first = fs::read(exp.join("report.md")).unwrap();
    ok(&["report", "--in", s(&exp)]);
    assert_eq!(fs::read(exp.join("report.md")).unwrap(), first);
    let text = String::from_utf8(first).unwrap();
    assert!(text.starts_with("<!-- clens 0.1.0 config="));
    assert!(text.contains('|'));
}

#[test]
fn structured_extremes_output() {
    let dir = tempfile::tempdir().unwrap();
    let (_, exp) = small_experiment(dir.path());
    let manifest = exp.join("manifest.toml");
    ok(&[
        "extremes", "--manifest", s(&manifest), "--out", s(&exp), "--dataset", "ood_all_green", "--k", "5",
        "--which", "highest", "--format", "structured",
    ]);
    let text = fs::read_to_string(exp.join("extremes/ood_all_green.highest.toml")).unwrap();
    assert!(exp.join("extremes/provenance.ood_all_green.highest.toml").exists());
    assert_eq!(text.matches("rank = ").count(), 5, "{text}");
}

#[test]
fn held_lock_blocks_a_second_writer() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join(".clens.lock"), "12345\n").unwrap();
    let out = clens(&["gen", "--out", s(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("in use"));
    assert!(!dir.path().join("bundle.toml").exists());
    // the stale lock is left for the user to inspect
    assert!(dir.path().join(".clens.lock").exists());
}

#[test]
fn lock_is_released_after_success() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen", "--preset", "colored2", "--out", s(dir.path())]);
    assert!(!dir.path().join(".clens.lock").exists());
}
