use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 11

[data]
source = "files"
path = "out/recording"

[synth]
n_subjects = 4
n_channels = 4
n_trials = 12
trial_length = 120

[model]
q = 3
eeg_lags = 3
stimulus_lags = 4
mu_grid = [0.0, 0.01, 1.0]
gamma_grid = [0.0, 0.1, 1.0]

[protocol]
train_trials = 6
n_runs = 4
perms_per_run = 30

[sweep]
grid = [4, 6]
"#;

fn gccakit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gccakit"))
        .current_dir(dir)
        .env("GCCAKIT_LOG", "error")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = gccakit(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("exp.toml"), config).unwrap();
    dir
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn pipeline_writes_documented_tables() {
    let dir = setup(SMALL);
    let d = dir.path();
    for cmd in ["synth", "sweep", "evaluate", "threshold"] {
        ok(d, &[cmd, "--config", "exp.toml", "--out", "out"]);
    }
    assert!(d.join("out/recording/recording.toml").is_file());
    assert_eq!(header(&d.join("out/metrics.csv")), "run,method,window,index,metric,value,threshold");
    assert_eq!(
        header(&d.join("out/sweep.csv")),
        "variable,grid_value,run,method,mu,gamma,window,index,metric,value,threshold"
    );
    assert_eq!(
        header(&d.join("out/thresholds.csv")),
        "variable,grid_value,metric,index,level,samples,threshold,null_mean,null_std"
    );
    let metrics = fs::read_to_string(d.join("out/metrics.csv")).unwrap();
    for method in ["gcca_noreg", "gcca_reg", "sigcca"] {
        assert!(metrics.contains(&format!(",{method},")), "{method} missing");
    }
    for row in metrics.lines().skip(1) {
        assert_eq!(row.split(',').count(), 7, "{row}");
    }
}

#[test]
fn fitted_models_are_reused_by_evaluate() {
    let dir = setup(SMALL);
    let d = dir.path();
    ok(d, &["synth", "--config", "exp.toml", "--out", "out"]);
    ok(d, &["fit", "--config", "exp.toml", "--out", "out"]);
    let manifest = fs::read_to_string(d.join("out/models/sigcca/model.toml")).unwrap();
    assert!(manifest.contains("eigenvalues"));
    assert!(d.join("out/models/sigcca/encoder.gmat").is_file());
    assert!(d.join("out/models/gcca_reg/decoder_3.gmat").is_file());
    ok(d, &["evaluate", "--config", "exp.toml", "--out", "out"]);
    let from_models = fs::read(d.join("out/metrics.csv")).unwrap();
    fs::remove_dir_all(d.join("out/models")).unwrap();
    ok(d, &["evaluate", "--config", "exp.toml", "--out", "out"]);
    assert_eq!(from_models, fs::read(d.join("out/metrics.csv")).unwrap());
}

#[test]
fn sweep_is_byte_identical_across_reruns_and_threads() {
    let dir = setup(SMALL);
    let d = dir.path();
    ok(d, &["synth", "--config", "exp.toml", "--out", "out"]);
    ok(d, &["sweep", "--config", "exp.toml", "--out", "a", "--threads", "1"]);
    ok(d, &["sweep", "--config", "exp.toml", "--out", "b", "--threads", "3"]);
    let a = fs::read(d.join("a/sweep.csv")).unwrap();
    assert_eq!(a, fs::read(d.join("b/sweep.csv")).unwrap());
    ok(d, &["sweep", "--config", "exp.toml", "--out", "c", "--seed", "12"]);
    assert_ne!(a, fs::read(d.join("c/sweep.csv")).unwrap());
}

#[test]
fn oversized_q_is_a_config_error_naming_q() {
    let dir = setup(&SMALL.replace("q = 3", "q = 500"));
    let d = dir.path();
    ok(d, &["synth", "--config", "exp.toml", "--out", "out"]);
    let out = gccakit(d, &["fit", "--config", "exp.toml", "--out", "out"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("model.q") && err.contains("Q = 500"), "{err}");
    assert!(!d.join("out/models").exists());
}

#[test]
fn failure_classes_have_distinct_exit_codes() {
    let dir = setup("[model]\nbogus = 1\n");
    let out = gccakit(dir.path(), &["fit", "--config", "exp.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));

    let dir = setup(SMALL);
    let out = gccakit(dir.path(), &["sweep", "--config", "exp.toml"]);
    assert_eq!(out.status.code(), Some(2), "missing recording directory");

    let out = gccakit(dir.path(), &["sweep", "--config", "missing.toml"]);
    assert_eq!(out.status.code(), Some(3));

    let d = dir.path();
    ok(d, &["synth", "--config", "exp.toml", "--out", "out"]);
    let stim = d.join("out/recording/stimulus/t0.gmat");
    let bytes = fs::read(&stim).unwrap();
    fs::write(&stim, &bytes[..bytes.len() - 8]).unwrap();
    let out = gccakit(d, &["sweep", "--config", "exp.toml", "--out", "out"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("t0.gmat"));
}
