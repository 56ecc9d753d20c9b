//! Experiment configuration, read from TOML.
//!
//! Every key is optional. Missing keys fall back to the defaults of the
//! library (EEG lags 5 centered, stimulus lags 11, decoder lags 3, Q = 32,
//! 50 runs with 20 permutations each).

use std::fs;
use std::path::{Path, PathBuf};

use gccakit::datamodel::LagSpec;
use gccakit::harness::{default_gamma_grid, default_mu_grid, MethodGrids, MethodSpec, SiMuRule, SweepConfig, SweepVariable, SynthSpec};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output: PathBuf,
    pub data: DataSection,
    pub synth: SynthSection,
    pub model: ModelSection,
    pub protocol: ProtocolSection,
    pub sweep: SweepSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output: PathBuf::from("out"),
            data: DataSection::default(),
            synth: SynthSection::default(),
            model: ModelSection::default(),
            protocol: ProtocolSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    /// Generate the recording in memory from the `[synth]` section.
    #[default]
    Synth,
    /// Read a recording directory.
    Files,
}

#[derive(Debug, Clone, Deserialize, PartialEq, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    /// Recording directory; relative paths resolve against the config file.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_subjects: usize,
    pub n_channels: usize,
    pub n_trials: usize,
    pub trial_length: usize,
    pub sample_rate: f64,
    pub n_shared: usize,
    pub subjects_per_component: Vec<usize>,
    pub component_gains: Vec<f64>,
    pub fir_length: usize,
    pub cutoff_hz: f64,
    pub snr_db: f64,
    pub max_delay: usize,
    pub noise_mixing: f64,
    /// Defaults to the top-level seed.
    pub seed: Option<u64>,
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SynthSpec::default();
        Self {
            n_subjects: s.n_subjects,
            n_channels: s.n_channels,
            n_trials: s.n_trials,
            trial_length: s.trial_length,
            sample_rate: s.sample_rate,
            n_shared: s.n_shared,
            subjects_per_component: s.subjects_per_component,
            component_gains: s.component_gains,
            fir_length: s.fir_length,
            cutoff_hz: s.cutoff_hz,
            snr_db: s.snr_db,
            max_delay: s.max_delay,
            noise_mixing: s.noise_mixing,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub methods: Vec<String>,
    pub q: usize,
    /// Number of centered EEG lags.
    pub eeg_lags: usize,
    /// Number of past stimulus lags.
    pub stimulus_lags: usize,
    /// Number of future lags of the stimulus decoders.
    pub decoder_lags: usize,
    pub mu_grid: Option<Vec<f64>>,
    pub gamma_grid: Option<Vec<f64>>,
    /// `ledoit_wolf` or `baseline`.
    pub si_mu: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            methods: vec!["gcca_noreg".into(), "gcca_reg".into(), "sigcca".into()],
            q: 32,
            eeg_lags: 5,
            stimulus_lags: 11,
            decoder_lags: 3,
            mu_grid: None,
            gamma_grid: None,
            si_mu: "ledoit_wolf".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    pub train_trials: usize,
    pub val_fraction: f64,
    /// Samples per evaluation window; 0 means one trial.
    pub window_length: usize,
    pub n_runs: usize,
    pub perms_per_run: usize,
    pub level: f64,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        Self {
            train_trials: 40,
            val_fraction: 0.25,
            window_length: 0,
            n_runs: gccakit::stats::DEFAULT_RUNS,
            perms_per_run: gccakit::stats::DEFAULT_PERMS_PER_RUN,
            level: gccakit::stats::DEFAULT_LEVEL,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// `training_trials`, `group_size` or `n_channels`.
    pub variable: String,
    /// Defaults to the fixed value of the swept variable.
    pub grid: Option<Vec<usize>>,
    pub group_size: Option<usize>,
    pub n_channels: Option<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            variable: "training_trials".into(),
            grid: None,
            group_size: None,
            n_channels: None,
        }
    }
}

impl ExperimentConfig {
    /// Reads and validates a config file; relative paths inside it resolve
    /// against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(CliError::io(path))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            CliError::Config { key, reason } => CliError::config(key, format!("{reason} (in {})", path.display())),
            other => other,
        })?;
        if let (Some(dir), Some(p)) = (path.parent(), cfg.data.path.as_mut()) {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let key = e.message().split('`').nth(1).unwrap_or("config").to_string();
            let at = e
                .span()
                .map(|s| {
                    let line = text[..s.start].matches('\n').count() + 1;
                    format!(" at line {line}")
                })
                .unwrap_or_default();
            CliError::config(key, format!("{}{at}", e.message()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |key: &str, reason: String| Err(CliError::config(key, reason));
        if self.model.methods.is_empty() {
            return bad("model.methods", "at least one method is required".into());
        }
        self.methods()?;
        if self.model.q == 0 {
            return bad("model.q", "Q must be at least 1".into());
        }
        if self.model.eeg_lags == 0 {
            return bad("model.eeg_lags", "must be at least 1".into());
        }
        if self.model.stimulus_lags == 0 {
            return bad("model.stimulus_lags", "must be at least 1".into());
        }
        if self.model.decoder_lags == 0 {
            return bad("model.decoder_lags", "must be at least 1".into());
        }
        for (key, grid) in [("model.mu_grid", &self.model.mu_grid), ("model.gamma_grid", &self.model.gamma_grid)] {
            if let Some(g) = grid {
                if g.is_empty() {
                    return bad(key, "grid is empty".into());
                }
                if g.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return bad(key, "values must be finite and non-negative".into());
                }
            }
        }
        self.si_mu_rule()?;
        let p = &self.protocol;
        if p.train_trials == 0 {
            return bad("protocol.train_trials", "must be at least 1".into());
        }
        if !(p.val_fraction > 0.0 && p.val_fraction < 1.0) {
            return bad("protocol.val_fraction", format!("{} is outside (0, 1)", p.val_fraction));
        }
        if p.n_runs == 0 {
            return bad("protocol.n_runs", "must be at least 1".into());
        }
        if !(p.level > 0.0 && p.level < 1.0) {
            return bad("protocol.level", format!("{} is outside (0, 1)", p.level));
        }
        self.sweep_variable()?;
        if self.sweep.grid.as_ref().is_some_and(|g| g.is_empty()) {
            return bad("sweep.grid", "grid is empty".into());
        }
        if self.data.source == DataSource::Files && self.data.path.is_none() {
            return bad("data.path", "required when data.source = \"files\"".into());
        }
        Ok(())
    }

    pub fn methods(&self) -> Result<Vec<MethodSpec>, CliError> {
        self.model
            .methods
            .iter()
            .map(|l| {
                MethodSpec::parse(l).ok_or_else(|| {
                    CliError::config(
                        "model.methods",
                        format!("unknown method `{l}`; expected one of {}", MethodSpec::LABELS.join(", ")),
                    )
                })
            })
            .collect()
    }

    pub fn si_mu_rule(&self) -> Result<SiMuRule, CliError> {
        match self.model.si_mu.as_str() {
            "ledoit_wolf" => Ok(SiMuRule::LedoitWolf),
            "baseline" => Ok(SiMuRule::FromBaseline),
            other => Err(CliError::config(
                "model.si_mu",
                format!("`{other}`; expected `ledoit_wolf` or `baseline`"),
            )),
        }
    }

    pub fn sweep_variable(&self) -> Result<SweepVariable, CliError> {
        SweepVariable::parse(&self.sweep.variable).ok_or_else(|| {
            CliError::config(
                "sweep.variable",
                format!(
                    "`{}`; expected `training_trials`, `group_size` or `n_channels`",
                    self.sweep.variable
                ),
            )
        })
    }

    pub fn eeg_lags(&self) -> LagSpec {
        LagSpec::centered(self.model.eeg_lags).expect("validated")
    }

    pub fn stimulus_lags(&self) -> LagSpec {
        LagSpec::past(self.model.stimulus_lags).expect("validated")
    }

    pub fn synth_spec(&self) -> SynthSpec {
        let s = &self.synth;
        SynthSpec {
            n_subjects: s.n_subjects,
            n_channels: s.n_channels,
            n_trials: s.n_trials,
            trial_length: s.trial_length,
            sample_rate: s.sample_rate,
            n_shared: s.n_shared,
            subjects_per_component: s.subjects_per_component.clone(),
            component_gains: s.component_gains.clone(),
            fir_length: s.fir_length,
            cutoff_hz: s.cutoff_hz,
            snr_db: s.snr_db,
            max_delay: s.max_delay,
            noise_mixing: s.noise_mixing,
            seed: s.seed.unwrap_or(self.seed),
        }
    }

    pub fn grids(&self) -> Result<MethodGrids, CliError> {
        Ok(MethodGrids {
            mu_grid: self.model.mu_grid.clone().unwrap_or_else(default_mu_grid),
            gamma_grid: self.model.gamma_grid.clone().unwrap_or_else(default_gamma_grid),
            q: self.model.q,
            si_mu_rule: self.si_mu_rule()?,
        })
    }

    pub fn sweep_config(&self) -> Result<SweepConfig, CliError> {
        let variable = self.sweep_variable()?;
        let grids = self.grids()?;
        let grid = match &self.sweep.grid {
            Some(g) => g.clone(),
            None => {
                let fixed = match variable {
                    SweepVariable::TrainingTrials => Some(self.protocol.train_trials),
                    SweepVariable::GroupSize => self.sweep.group_size,
                    SweepVariable::Channels => self.sweep.n_channels,
                };
                vec![fixed.ok_or_else(|| CliError::config("sweep.grid", "required for this sweep variable"))?]
            }
        };
        Ok(SweepConfig {
            variable,
            grid,
            train_trials: self.protocol.train_trials,
            group_size: self.sweep.group_size,
            n_channels: self.sweep.n_channels,
            n_runs: self.protocol.n_runs,
            methods: self.methods()?,
            mu_grid: grids.mu_grid,
            gamma_grid: grids.gamma_grid,
            q: grids.q,
            window_length: self.protocol.window_length,
            val_fraction: self.protocol.val_fraction,
            eeg_lags: self.eeg_lags(),
            stim_lags: self.stimulus_lags(),
            decoder_lags: self.model.decoder_lags,
            si_mu_rule: grids.si_mu_rule,
            n_perms_per_run: self.protocol.perms_per_run,
            level: self.protocol.level,
            seed: self.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_library_defaults() {
        let cfg = ExperimentConfig::parse("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        let sweep = cfg.sweep_config().unwrap();
        assert_eq!(sweep.eeg_lags, LagSpec::centered(5).unwrap());
        assert_eq!(sweep.stim_lags, LagSpec::past(11).unwrap());
        assert_eq!(sweep.decoder_lags, 3);
        assert_eq!(sweep.grid, vec![40]);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::parse("[model]\nqq = 3\n").unwrap_err();
        match err {
            CliError::Config { key, .. } => assert_eq!(key, "qq"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_values_name_their_key() {
        for (text, key) in [
            ("[model]\nq = 0", "model.q"),
            ("[model]\nmethods = [\"pca\"]", "model.methods"),
            ("[protocol]\nval_fraction = 1.5", "protocol.val_fraction"),
            ("[sweep]\nvariable = \"minutes\"", "sweep.variable"),
            ("[data]\nsource = \"files\"", "data.path"),
            ("[model]\nmu_grid = [-1.0]", "model.mu_grid"),
        ] {
            match ExperimentConfig::parse(text) {
                Err(CliError::Config { key: k, .. }) => assert_eq!(k, key, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }
}
