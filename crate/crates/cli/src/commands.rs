//! The subcommands.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use gccakit::datamodel::{prepare_trials, split_trials, CorrelationSet, LagSpec, Recording, Trial};
use gccakit::harness::{fit_methods, generate_synthetic, run_sweep, SweepResult};
use gccakit::metrics::{evaluate_projection, fit_decoders, mean_std, MetricsReport, TestProjection};
use gccakit::stats::{mix_seed, null_draws, NullSet, StatsError};

use crate::config::{DataSource, ExperimentConfig};
use crate::error::CliError;
use crate::matfile::write_atomic;
use crate::store::{list_models, read_model, read_recording, write_model, write_recording, StoredModel, RECORDING_MANIFEST};

pub const RECORDING_DIR: &str = "recording";
pub const MODELS_DIR: &str = "models";
pub const METRICS_CSV: &str = "metrics.csv";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const THRESHOLDS_CSV: &str = "thresholds.csv";

pub const METRICS_HEADER: [&str; 7] = ["run", "method", "window", "index", "metric", "value", "threshold"];
pub const SWEEP_HEADER: [&str; 11] = [
    "variable", "grid_value", "run", "method", "mu", "gamma", "window", "index", "metric", "value", "threshold",
];
pub const THRESHOLDS_HEADER: [&str; 9] = [
    "variable", "grid_value", "metric", "index", "level", "samples", "threshold", "null_mean", "null_std",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Fit,
    Evaluate,
    Sweep,
    Synth,
    Threshold,
}

pub fn run(cmd: Command, cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let start = Instant::now();
    let result = match cmd {
        Command::Synth => synth(cfg, out),
        Command::Fit => fit(cfg, out).map(drop),
        Command::Evaluate => evaluate(cfg, out),
        Command::Sweep => sweep(cfg, out),
        Command::Threshold => threshold(cfg, out),
    };
    log::info!("total: {:.3} s", start.elapsed().as_secs_f64());
    result
}

fn stage<T>(name: &str, f: impl FnOnce() -> Result<T, CliError>) -> Result<T, CliError> {
    let start = Instant::now();
    let result = f();
    log::info!("stage {name}: {:.3} s", start.elapsed().as_secs_f64());
    result
}

pub fn load_recording(cfg: &ExperimentConfig) -> Result<Recording, CliError> {
    stage("load", || match cfg.data.source {
        DataSource::Synth => Ok(generate_synthetic(&cfg.synth_spec())?),
        DataSource::Files => {
            let dir = cfg.data.path.as_ref().expect("validated");
            if !dir.join(RECORDING_MANIFEST).is_file() {
                return Err(CliError::config(
                    "data.path",
                    format!("{} has no {RECORDING_MANIFEST}", dir.display()),
                ));
            }
            // every trial is centered and scaled to unit norm, as at generation
            Ok(read_recording(dir)?.normalized()?)
        }
    })
}

fn synth(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let rec = stage("generate", || Ok(generate_synthetic(&cfg.synth_spec())?))?;
    let dir = out.join(RECORDING_DIR);
    stage("write", || write_recording(&rec, &dir))?;
    log::info!(
        "wrote {} subjects x {} trials to {}",
        rec.n_subjects(),
        rec.n_trials(),
        dir.display()
    );
    Ok(())
}

fn check_q(cfg: &ExperimentConfig, rec: &Recording) -> Result<(), CliError> {
    let block = rec.n_channels() * cfg.model.eeg_lags;
    let stim = rec.n_features() * cfg.model.stimulus_lags;
    for spec in cfg.methods()? {
        let dim = spec.method.pencil_dim(rec.n_subjects(), block, stim);
        if cfg.model.q > dim {
            return Err(CliError::config(
                "model.q",
                format!(
                    "Q = {} exceeds the pencil dimension {dim} of {}",
                    cfg.model.q, spec.label
                ),
            ));
        }
    }
    Ok(())
}

fn refs(trials: &[Arc<Trial>], idx: &[usize]) -> Vec<Arc<Trial>> {
    idx.iter().map(|&i| trials[i].clone()).collect()
}

fn as_refs(trials: &[Arc<Trial>]) -> Vec<&Trial> {
    trials.iter().map(|t| t.as_ref()).collect()
}

/// Fits every configured method on one seeded split of all subjects and
/// channels.
fn fit_all(cfg: &ExperimentConfig, rec: &Recording, trials: &[Arc<Trial>]) -> Result<Vec<StoredModel>, CliError> {
    check_q(cfg, rec)?;
    let split = split_trials(
        rec.n_trials(),
        cfg.protocol.train_trials,
        cfg.protocol.val_fraction,
        mix_seed(cfg.seed, 1),
    )
    .map_err(|e| CliError::config("protocol.train_trials", e.to_string()))?;
    let train = refs(trials, &split.train);
    let val = refs(trials, &split.val);
    let fitted = stage("fit", || {
        let corr = CorrelationSet::sum(train.iter().map(|t| &t.corr))?;
        Ok(fit_methods(&corr, &as_refs(&train), &as_refs(&val), &cfg.methods()?, &cfg.grids()?)?)
    })?;
    Ok(fitted
        .into_iter()
        .map(|f| {
            let score = if f.val_score.is_nan() {
                "untuned".to_string()
            } else {
                format!("validation ISC = {:.4}", f.val_score)
            };
            log::info!("{}: mu = {:e}, gamma = {:e}, {score}", f.label, f.hyper.mu, f.hyper.gamma);
            StoredModel {
                label: f.label,
                model: f.model,
                val_score: f.val_score,
                eeg_lags: cfg.eeg_lags(),
                stimulus_lags: cfg.stimulus_lags(),
                decoder_lags: cfg.model.decoder_lags,
                split: split.clone(),
            }
        })
        .collect())
}

fn fit(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<StoredModel>, CliError> {
    let rec = load_recording(cfg)?;
    let trials = stage("lag", || Ok(prepare_trials(&rec, cfg.eeg_lags(), Some(cfg.stimulus_lags()))?))?;
    let models = fit_all(cfg, &rec, &trials)?;
    stage("write", || {
        for m in &models {
            write_model(m, &out.join(MODELS_DIR).join(&m.label))?;
        }
        Ok(())
    })?;
    Ok(models)
}

fn evaluate(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let rec = load_recording(cfg)?;
    let models_dir = out.join(MODELS_DIR);
    let mut lagged: Vec<((LagSpec, LagSpec), Vec<Arc<Trial>>)> = Vec::new();
    let mut trials_for = |eeg: LagSpec, stim: LagSpec| -> Result<Vec<Arc<Trial>>, CliError> {
        if let Some((_, t)) = lagged.iter().find(|(k, _)| *k == (eeg, stim)) {
            return Ok(t.clone());
        }
        let t = stage("lag", || Ok(prepare_trials(&rec, eeg, Some(stim))?))?;
        lagged.push(((eeg, stim), t.clone()));
        Ok(t)
    };
    let models = if models_dir.is_dir() && !list_models(&models_dir)?.is_empty() {
        let mut models: Vec<StoredModel> =
            stage("read models", || list_models(&models_dir)?.iter().map(|d| read_model(d)).collect())?;
        // thresholds come from the first model, so follow the configured order
        let rank = |label: &str| cfg.model.methods.iter().position(|m| m == label).unwrap_or(usize::MAX);
        models.sort_by(|a, b| rank(&a.label).cmp(&rank(&b.label)).then_with(|| a.label.cmp(&b.label)));
        models
    } else {
        log::info!("no models in {}; fitting", models_dir.display());
        let trials = trials_for(cfg.eeg_lags(), cfg.stimulus_lags())?;
        fit_all(cfg, &rec, &trials)?
    };
    let window = match cfg.protocol.window_length {
        0 => rec.trial_len(0),
        w => w,
    };
    let mut reports: Vec<(String, MetricsReport)> = Vec::new();
    let mut first_projection = None;
    for m in &models {
        let trials = trials_for(m.eeg_lags, m.stimulus_lags)?;
        if m.model.n_subjects() != rec.n_subjects() || m.model.block_dim() != rec.n_channels() * m.eeg_lags.count() {
            return Err(CliError::Data(format!(
                "model {} does not match the recording ({} subjects, {} channels)",
                m.label,
                rec.n_subjects(),
                rec.n_channels()
            )));
        }
        if let Some(&bad) = m.split.train.iter().chain(&m.split.test).find(|&&i| i >= rec.n_trials()) {
            return Err(CliError::Data(format!("model {} refers to trial {bad}", m.label)));
        }
        let (train, test) = (refs(&trials, &m.split.train), refs(&trials, &m.split.test));
        let (proj, report) = stage(&format!("evaluate {}", m.label), || {
            let decoders = fit_decoders(&m.model, &as_refs(&train), m.decoder_lags)?;
            let proj = TestProjection::new(&m.model, &decoders, &as_refs(&test))?;
            let report = evaluate_projection(&proj, window)?;
            Ok((proj, report))
        })?;
        if first_projection.is_none() {
            first_projection = Some(proj);
        }
        reports.push((m.label.clone(), report));
    }
    let n_perms = cfg.protocol.n_runs * cfg.protocol.perms_per_run;
    let thresholds = match &first_projection {
        Some(proj) if n_perms > 0 => stage("permutations", || {
            let draws = match null_draws(proj, window, n_perms, mix_seed(cfg.seed, 4)) {
                Ok(d) => d,
                Err(e @ (StatsError::TooFewTrials(_) | StatsError::UnequalTrials(..))) => {
                    log::warn!("no thresholds: {e}");
                    return Ok(None);
                }
                Err(e) => return Err(e.into()),
            };
            match NullSet::from_draws(&draws, cfg.protocol.level) {
                Ok(set) => Ok(Some(set.thresholds())),
                Err(StatsError::TooFewSamples(n)) => {
                    log::warn!("no thresholds: {n} null samples are too few");
                    Ok(None)
                }
                Err(e) => Err(e.into()),
            }
        })?,
        _ => None,
    };
    let mut w = table(&METRICS_HEADER);
    for (label, report) in &reports {
        for (wi, _) in report.windows.iter().enumerate() {
            for tag in report.tags() {
                let threshold = thresholds.as_ref().and_then(|t| t.get(tag));
                w.write_record([
                    "0".to_string(),
                    label.clone(),
                    wi.to_string(),
                    tag.index().to_string(),
                    tag.name().to_string(),
                    num(report.value(wi, tag)),
                    opt(threshold),
                ])
                .map_err(csv_err)?;
            }
        }
        let (m, s) = report.summary(gccakit::metrics::MetricTag::Isc(0));
        log::info!("{label}: test ISC {m:.4} +/- {s:.4} over {} windows", report.windows.len());
    }
    finish(w, &out.join(METRICS_CSV))
}

fn sweep(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let rec = load_recording(cfg)?;
    let sc = cfg.sweep_config()?;
    check_q(cfg, &rec)?;
    let result = stage("sweep", || Ok(run_sweep(&rec, &sc)?))?;
    write_sweep_csv(&result, &out.join(SWEEP_CSV))
}

pub fn write_sweep_csv(result: &SweepResult, path: &Path) -> Result<(), CliError> {
    let mut w = table(&SWEEP_HEADER);
    for r in result.rows() {
        w.write_record([
            r.grid_variable.to_string(),
            r.grid_value.to_string(),
            r.run.to_string(),
            r.method,
            num(r.mu),
            num(r.gamma),
            r.window.map(|w| w.to_string()).unwrap_or_default(),
            r.index.to_string(),
            r.metric.to_string(),
            num(r.value),
            opt(r.threshold),
        ])
        .map_err(csv_err)?;
    }
    finish(w, path)
}

fn threshold(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    if cfg.protocol.perms_per_run == 0 {
        return Err(CliError::config("protocol.perms_per_run", "must be at least 1"));
    }
    let rec = load_recording(cfg)?;
    let mut sc = cfg.sweep_config()?;
    sc.methods.truncate(1);
    check_q(cfg, &rec)?;
    let result = stage("permutations", || Ok(run_sweep(&rec, &sc)?))?;
    let mut w = table(&THRESHOLDS_HEADER);
    for (gi, set) in result.nulls.iter().enumerate() {
        let Some(set) = set else {
            return Err(CliError::config(
                "protocol.n_runs",
                format!(
                    "{} runs x {} permutations give fewer than 100 null samples",
                    sc.n_runs, sc.n_perms_per_run
                ),
            ));
        };
        for d in set.isc.iter().chain([&set.sc, &set.sc_avg]) {
            let (mean, std) = mean_std(&d.samples);
            w.write_record([
                sc.variable.name().to_string(),
                result.grid[gi].to_string(),
                d.metric.name().to_string(),
                d.metric.index().to_string(),
                num(d.level),
                d.samples.len().to_string(),
                num(d.threshold),
                num(mean),
                num(std),
            ])
            .map_err(csv_err)?;
        }
    }
    finish(w, &out.join(THRESHOLDS_CSV))
}

fn num(v: f64) -> String {
    v.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn table(header: &[&str]) -> csv::Writer<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("writing to memory");
    w
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Other(e.to_string())
}

fn finish(w: csv::Writer<Vec<u8>>, path: &Path) -> Result<(), CliError> {
    let bytes = w.into_inner().map_err(|e| CliError::Other(e.to_string()))?;
    write_atomic(path, &bytes).map_err(CliError::io(path))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

/// Output directory: the `--out` flag, else the config's `output`.
pub fn output_dir(flag: Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    flag.unwrap_or_else(|| cfg.output.clone())
}
