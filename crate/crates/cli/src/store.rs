//! Recording and model directories.
//!
//! A recording directory holds `recording.toml` and one matrix file per
//! subject and trial (samples x channels) plus one per stimulus trial
//! (samples x features). File names come from templates in the manifest in
//! which `{subject}` and `{trial}` are replaced by zero-based indices, so
//! existing exports can be described without renaming them.
//!
//! A model directory holds `model.toml` (method, sizes, hyperparameters,
//! eigenvalues, the trial split) and the decoders and encoder as matrix
//! files.

use std::fs;
use std::path::{Path, PathBuf};

use faer::Mat;
use gccakit::datamodel::{LagSpec, Recording, TrialSplit};
use gccakit::estimators::{GroupModel, Hyper, Method};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::matfile::{read_matrix, write_atomic, write_matrix};

pub const RECORDING_MANIFEST: &str = "recording.toml";
pub const MODEL_MANIFEST: &str = "model.toml";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RecordingManifest {
    pub n_subjects: usize,
    pub n_trials: usize,
    pub sample_rate: f64,
    pub eeg: String,
    pub stimulus: String,
}

impl RecordingManifest {
    pub fn binary(n_subjects: usize, n_trials: usize, sample_rate: f64) -> Self {
        Self {
            n_subjects,
            n_trials,
            sample_rate,
            eeg: "eeg/s{subject}_t{trial}.gmat".into(),
            stimulus: "stimulus/t{trial}.gmat".into(),
        }
    }

    fn eeg_path(&self, dir: &Path, subject: usize, trial: usize) -> PathBuf {
        dir.join(
            self.eeg
                .replace("{subject}", &subject.to_string())
                .replace("{trial}", &trial.to_string()),
        )
    }

    fn stimulus_path(&self, dir: &Path, trial: usize) -> PathBuf {
        dir.join(self.stimulus.replace("{trial}", &trial.to_string()))
    }
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    toml::from_str(&text).map_err(|e| CliError::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn write_toml<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let text = toml::to_string(value).map_err(|e| CliError::Other(e.to_string()))?;
    write_atomic(path, text.as_bytes()).map_err(CliError::io(path))
}

pub fn write_recording(rec: &Recording, dir: &Path) -> Result<(), CliError> {
    let manifest = RecordingManifest::binary(rec.n_subjects(), rec.n_trials(), rec.sample_rate());
    for t in 0..rec.n_trials() {
        for k in 0..rec.n_subjects() {
            let m = rec.eeg(k, t).transpose().to_owned();
            write_matrix(&m, &manifest.eeg_path(dir, k, t))?;
        }
        write_matrix(&rec.stimulus(t).transpose().to_owned(), &manifest.stimulus_path(dir, t))?;
    }
    // manifest last, so a complete manifest implies complete data
    write_toml(&manifest, &dir.join(RECORDING_MANIFEST))
}

pub fn read_recording(dir: &Path) -> Result<Recording, CliError> {
    let manifest: RecordingManifest = read_toml(&dir.join(RECORDING_MANIFEST))?;
    let transpose = |m: Mat<f64>| m.transpose().to_owned();
    let subjects = (0..manifest.n_subjects)
        .map(|k| {
            (0..manifest.n_trials)
                .map(|t| read_matrix(&manifest.eeg_path(dir, k, t)).map(transpose))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let stimulus = (0..manifest.n_trials)
        .map(|t| read_matrix(&manifest.stimulus_path(dir, t)).map(transpose))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Recording::new(subjects, stimulus, manifest.sample_rate)?)
}

/// Everything needed to reuse a fitted model on the same recording.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub label: String,
    pub method: String,
    pub n_subjects: usize,
    /// Rows of each decoder (channels x EEG lags).
    pub block_dim: usize,
    /// Rows of the encoder, 0 without one.
    pub stim_dim: usize,
    pub q: usize,
    pub mu: f64,
    pub gamma: f64,
    pub jitter: f64,
    pub val_score: f64,
    pub eigenvalues: Vec<f64>,
    pub eeg_lags: [isize; 2],
    pub stimulus_lags: [isize; 2],
    pub decoder_lags: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// A model together with how it was trained.
#[derive(Debug, Clone)]
pub struct StoredModel {
    pub label: String,
    pub model: GroupModel,
    pub val_score: f64,
    pub eeg_lags: LagSpec,
    pub stimulus_lags: LagSpec,
    pub decoder_lags: usize,
    pub split: TrialSplit,
}

pub fn write_model(stored: &StoredModel, dir: &Path) -> Result<(), CliError> {
    let m = &stored.model;
    for (k, w) in m.decoders.iter().enumerate() {
        write_matrix(w, &dir.join(format!("decoder_{k}.gmat")))?;
    }
    if let Some(v) = &m.encoder {
        write_matrix(v, &dir.join("encoder.gmat"))?;
    }
    let manifest = ModelManifest {
        label: stored.label.clone(),
        method: m.method.name().to_string(),
        n_subjects: m.n_subjects(),
        block_dim: m.block_dim(),
        stim_dim: m.stim_dim(),
        q: m.q(),
        mu: m.hyper.mu,
        gamma: m.hyper.gamma,
        jitter: m.jitter,
        val_score: stored.val_score,
        eigenvalues: m.eigenvalues.clone(),
        eeg_lags: [stored.eeg_lags.lag_min(), stored.eeg_lags.lag_max()],
        stimulus_lags: [stored.stimulus_lags.lag_min(), stored.stimulus_lags.lag_max()],
        decoder_lags: stored.decoder_lags,
        train: stored.split.train.clone(),
        val: stored.split.val.clone(),
        test: stored.split.test.clone(),
    };
    write_toml(&manifest, &dir.join(MODEL_MANIFEST))
}

pub fn read_model(dir: &Path) -> Result<StoredModel, CliError> {
    let path = dir.join(MODEL_MANIFEST);
    let man: ModelManifest = read_toml(&path)?;
    let format = |reason: String| CliError::Format {
        path: path.clone(),
        reason,
    };
    let method = Method::parse(&man.method).ok_or_else(|| format(format!("unknown method `{}`", man.method)))?;
    let lags = |[lo, hi]: [isize; 2]| LagSpec::new(lo, hi).map_err(|e| format(e.to_string()));
    let decoders = (0..man.n_subjects)
        .map(|k| read_matrix(&dir.join(format!("decoder_{k}.gmat"))))
        .collect::<Result<Vec<_>, _>>()?;
    if decoders.iter().any(|w| w.nrows() != man.block_dim || w.ncols() != man.q) {
        return Err(format(format!("decoders are not {}x{}", man.block_dim, man.q)));
    }
    let encoder = if man.stim_dim > 0 {
        let v = read_matrix(&dir.join("encoder.gmat"))?;
        if v.nrows() != man.stim_dim || v.ncols() != man.q {
            return Err(format(format!("encoder is not {}x{}", man.stim_dim, man.q)));
        }
        Some(v)
    } else {
        None
    };
    if man.eigenvalues.len() != man.q {
        return Err(format(format!("{} eigenvalues for Q = {}", man.eigenvalues.len(), man.q)));
    }
    Ok(StoredModel {
        label: man.label,
        model: GroupModel {
            method,
            decoders,
            encoder,
            eigenvalues: man.eigenvalues,
            hyper: Hyper::new(man.mu, man.gamma, man.q),
            jitter: man.jitter,
        },
        val_score: man.val_score,
        eeg_lags: lags(man.eeg_lags)?,
        stimulus_lags: lags(man.stimulus_lags)?,
        decoder_lags: man.decoder_lags,
        split: TrialSplit {
            train: man.train,
            val: man.val,
            test: man.test,
        },
    })
}

/// Model subdirectories of `dir`, sorted by name.
pub fn list_models(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(CliError::io(dir))? {
        let path = entry.map_err(CliError::io(dir))?.path();
        if path.join(MODEL_MANIFEST).is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
