//! Monte-Carlo sweeps over training size, group size or channel count.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use super::selection::{
    default_gamma_grid, default_mu_grid, ledoit_wolf_mu, select_hyperparameters, validation_isc,
    SelectionError,
};
use crate::datamodel::{prepare_trials, split_trials, CorrelationSet, DataError, LagSpec, Recording, Trial, TrialSplit};
use crate::estimators::{fit, EstimatorError, GroupModel, Hyper, Method};
use crate::metrics::{
    evaluate_projection, fit_decoders, MetricTag, MetricsError, MetricsReport, TestProjection, Thresholds,
};
use crate::stats::{mix_seed, null_draws, NullDraw, NullSet, StatsError};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("infeasible sweep: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVariable {
    /// Number of training trials (minutes, for one-minute trials).
    TrainingTrials,
    GroupSize,
    Channels,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::TrainingTrials => "training_trials",
            SweepVariable::GroupSize => "group_size",
            SweepVariable::Channels => "n_channels",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::TrainingTrials, Self::GroupSize, Self::Channels]
            .into_iter()
            .find(|v| v.name() == s)
    }
}

/// How stimulus-informed methods get their `mu`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SiMuRule {
    /// Subject-averaged Ledoit-Wolf loading of the training data.
    LedoitWolf,
    /// The validated `mu` of the stimulus-unaware counterpart.
    FromBaseline,
}

/// A method as it appears in a sweep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodSpec {
    pub label: String,
    pub method: Method,
    /// Whether the hyperparameter is validated. Untuned stimulus-unaware
    /// methods use `mu = 0`.
    pub tuned: bool,
}

impl MethodSpec {
    pub const LABELS: [&'static str; 6] = [
        "gcca_noreg",
        "gcca_reg",
        "corrca_noreg",
        "corrca_reg",
        "sigcca",
        "sicorrca",
    ];

    pub fn parse(label: &str) -> Option<Self> {
        let (method, tuned) = match label {
            "gcca_noreg" => (Method::Gcca, false),
            "gcca_reg" => (Method::Gcca, true),
            "corrca_noreg" => (Method::CorrCa, false),
            "corrca_reg" => (Method::CorrCa, true),
            "sigcca" => (Method::SiGcca, true),
            "sicorrca" => (Method::SiCorrCa, true),
            _ => return None,
        };
        Some(Self {
            label: label.to_string(),
            method,
            tuned,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub variable: SweepVariable,
    pub grid: Vec<usize>,
    pub train_trials: usize,
    /// `None` uses every subject.
    pub group_size: Option<usize>,
    /// `None` uses every channel.
    pub n_channels: Option<usize>,
    pub n_runs: usize,
    pub methods: Vec<MethodSpec>,
    pub mu_grid: Vec<f64>,
    pub gamma_grid: Vec<f64>,
    pub q: usize,
    /// Samples per evaluation window; 0 means one trial.
    pub window_length: usize,
    pub val_fraction: f64,
    pub eeg_lags: LagSpec,
    pub stim_lags: LagSpec,
    pub decoder_lags: usize,
    pub si_mu_rule: SiMuRule,
    /// Permutations per run for the significance thresholds; 0 skips them.
    pub n_perms_per_run: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            variable: SweepVariable::TrainingTrials,
            grid: vec![40],
            train_trials: 40,
            group_size: None,
            n_channels: None,
            n_runs: 50,
            methods: ["gcca_noreg", "gcca_reg", "sigcca"]
                .iter()
                .map(|l| MethodSpec::parse(l).expect("known label"))
                .collect(),
            mu_grid: default_mu_grid(),
            gamma_grid: default_gamma_grid(),
            q: 32,
            window_length: 0,
            val_fraction: 0.25,
            eeg_lags: LagSpec::centered(5).expect("valid"),
            stim_lags: LagSpec::past(11).expect("valid"),
            decoder_lags: 3,
            si_mu_rule: SiMuRule::LedoitWolf,
            n_perms_per_run: crate::stats::DEFAULT_PERMS_PER_RUN,
            level: crate::stats::DEFAULT_LEVEL,
            seed: 0,
        }
    }
}

/// One method's result in one run.
#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub label: String,
    pub hyper: Hyper,
    /// Validation score of the chosen point; NaN for untuned methods.
    pub val_score: f64,
    /// Mean first-component ISC over the training trials.
    pub train_isc: f64,
    pub report: MetricsReport,
}

/// Everything one Monte-Carlo run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub grid_index: usize,
    pub grid_value: usize,
    pub run: usize,
    pub split: TrialSplit,
    pub subjects: Vec<usize>,
    pub channels: Vec<usize>,
    pub methods: Vec<MethodOutcome>,
}

impl RunOutcome {
    pub fn method(&self, label: &str) -> Option<&MethodOutcome> {
        self.methods.iter().find(|m| m.label == label)
    }
}

/// One line of the tidy results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub grid_variable: &'static str,
    pub grid_value: usize,
    pub run: usize,
    pub method: String,
    pub mu: f64,
    pub gamma: f64,
    /// `None` for whole-set rows such as the training ISC.
    pub window: Option<usize>,
    pub metric: &'static str,
    pub index: usize,
    pub value: f64,
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub variable: SweepVariable,
    pub grid: Vec<usize>,
    /// Ordered by grid index, then run.
    pub runs: Vec<RunOutcome>,
    /// Null distributions per grid value, drawn from the first method's test
    /// projections. Their thresholds are shared by all methods.
    pub nulls: Vec<Option<NullSet>>,
}

impl SweepResult {
    pub fn thresholds(&self, grid_index: usize) -> Option<Thresholds> {
        self.nulls[grid_index].as_ref().map(NullSet::thresholds)
    }

    pub fn runs_at(&self, grid_index: usize) -> impl Iterator<Item = &RunOutcome> {
        self.runs.iter().filter(move |r| r.grid_index == grid_index)
    }

    /// The tidy table: per run and method, one row per window and metric
    /// plus one training-ISC row.
    pub fn rows(&self) -> Vec<ResultRow> {
        let mut rows = Vec::new();
        for run in &self.runs {
            let thresholds = self.thresholds(run.grid_index);
            for m in &run.methods {
                let base = ResultRow {
                    grid_variable: self.variable.name(),
                    grid_value: run.grid_value,
                    run: run.run,
                    method: m.label.clone(),
                    mu: m.hyper.mu,
                    gamma: m.hyper.gamma,
                    window: None,
                    metric: "isc_train",
                    index: 0,
                    value: m.train_isc,
                    threshold: None,
                };
                for (w, _) in m.report.windows.iter().enumerate() {
                    for tag in m.report.tags() {
                        rows.push(ResultRow {
                            window: Some(w),
                            metric: tag.name(),
                            index: tag.index(),
                            value: m.report.value(w, tag),
                            threshold: thresholds.as_ref().and_then(|t| t.get(tag)),
                            ..base.clone()
                        });
                    }
                }
                rows.push(base);
            }
        }
        rows
    }

    /// Mean over windows of a metric, one value per run at a grid index.
    pub fn per_run_mean(&self, grid_index: usize, label: &str, tag: MetricTag) -> Vec<f64> {
        self.runs_at(grid_index)
            .filter_map(|r| r.method(label).map(|m| m.report.mean(tag)))
            .collect()
    }
}

fn validate(rec: &Recording, cfg: &SweepConfig) -> Result<(), SweepError> {
    let bad = |m: String| Err(SweepError::Infeasible(m));
    if cfg.grid.is_empty() {
        return bad("empty sweep grid".into());
    }
    if cfg.methods.is_empty() {
        return bad("no methods".into());
    }
    if cfg.n_runs == 0 {
        return bad("zero Monte-Carlo runs".into());
    }
    if cfg.methods.iter().any(|m| m.tuned) && (cfg.mu_grid.is_empty() && cfg.gamma_grid.is_empty()) {
        return bad("empty hyperparameter grids".into());
    }
    for &v in &cfg.grid {
        let (train, group, chans) = settings(cfg, v, rec);
        if train + 2 > rec.n_trials() {
            return bad(format!(
                "{train} training trials leave fewer than 2 of {} for validation and test",
                rec.n_trials()
            ));
        }
        if group < 2 || group > rec.n_subjects() {
            return bad(format!("group size {group} with {} subjects", rec.n_subjects()));
        }
        if chans == 0 || chans > rec.n_channels() {
            return bad(format!("{chans} channels with {} recorded", rec.n_channels()));
        }
    }
    Ok(())
}

fn settings(cfg: &SweepConfig, value: usize, rec: &Recording) -> (usize, usize, usize) {
    let mut train = cfg.train_trials;
    let mut group = cfg.group_size.unwrap_or(rec.n_subjects());
    let mut chans = cfg.n_channels.unwrap_or(rec.n_channels());
    match cfg.variable {
        SweepVariable::TrainingTrials => train = value,
        SweepVariable::GroupSize => group = value,
        SweepVariable::Channels => chans = value,
    }
    (train, group, chans)
}

fn choose(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    if k == n {
        return (0..n).collect();
    }
    let mut v = sample(rng, n, k).into_vec();
    v.sort_unstable();
    v
}

/// Runs every grid value for `n_runs` Monte-Carlo runs.
///
/// Runs are independent and execute on the current rayon pool; their
/// results are gathered by (grid index, run), so the output does not depend
/// on the number of threads.
pub fn run_sweep(rec: &Recording, cfg: &SweepConfig) -> Result<SweepResult, SweepError> {
    validate(rec, cfg)?;
    let trials = prepare_trials(rec, cfg.eeg_lags, Some(cfg.stim_lags))?;
    let window = if cfg.window_length == 0 {
        rec.trial_len(0)
    } else {
        cfg.window_length
    };
    let mut runs = Vec::new();
    let mut nulls = Vec::new();
    for (gi, &value) in cfg.grid.iter().enumerate() {
        let start = std::time::Instant::now();
        let results: Vec<(RunOutcome, Option<Vec<NullDraw>>)> = (0..cfg.n_runs)
            .into_par_iter()
            .map(|r| single_run(rec, &trials, cfg, gi, value, r, window))
            .collect::<Result<_, _>>()?;
        let draws: Vec<&NullDraw> = results.iter().filter_map(|r| r.1.as_ref()).flatten().collect();
        let set = if draws.is_empty() {
            None
        } else {
            match NullSet::from_draws(draws, cfg.level) {
                Ok(set) => Some(set),
                Err(StatsError::TooFewSamples(n)) => {
                    log::info!("{n} null samples are too few for thresholds; skipped");
                    None
                }
                Err(e) => return Err(e.into()),
            }
        };
        let mut outcomes: Vec<RunOutcome> = results.into_iter().map(|r| r.0).collect();
        if let Some(t) = set.as_ref().map(NullSet::thresholds) {
            for o in &mut outcomes {
                for m in &mut o.methods {
                    m.report.thresholds = Some(t.clone());
                }
            }
        }
        log::info!(
            "{} = {value}: {} runs in {:.2?}",
            cfg.variable.name(),
            cfg.n_runs,
            start.elapsed()
        );
        runs.extend(outcomes);
        nulls.push(set);
    }
    Ok(SweepResult {
        variable: cfg.variable,
        grid: cfg.grid.clone(),
        runs,
        nulls,
    })
}

fn single_run(
    rec: &Recording,
    trials: &[Arc<Trial>],
    cfg: &SweepConfig,
    grid_index: usize,
    value: usize,
    run: usize,
    window: usize,
) -> Result<(RunOutcome, Option<Vec<NullDraw>>), SweepError> {
    let seed = mix_seed(cfg.seed, ((grid_index as u64) << 32) | run as u64);
    let (n_train, group, chans) = settings(cfg, value, rec);
    let split = split_trials(rec.n_trials(), n_train, cfg.val_fraction, mix_seed(seed, 1))?;
    let subjects = choose(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, 2)), rec.n_subjects(), group);
    let channels = choose(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, 3)), rec.n_channels(), chans);

    let full = subjects.len() == rec.n_subjects() && channels.len() == rec.n_channels();
    let pick = |idx: &[usize]| -> Result<Vec<Arc<Trial>>, SweepError> {
        idx.iter()
            .map(|&i| {
                if full {
                    Ok(trials[i].clone())
                } else {
                    Ok(Arc::new(trials[i].restrict(&subjects, &channels)?))
                }
            })
            .collect()
    };
    let (train, val, test) = (pick(&split.train)?, pick(&split.val)?, pick(&split.test)?);
    let train: Vec<&Trial> = train.iter().map(|t| t.as_ref()).collect();
    let val: Vec<&Trial> = val.iter().map(|t| t.as_ref()).collect();
    let test: Vec<&Trial> = test.iter().map(|t| t.as_ref()).collect();
    let corr = CorrelationSet::sum(train.iter().map(|t| &t.corr))?;

    let fitted = fit_methods(&corr, &train, &val, &cfg.methods, &MethodGrids::from_config(cfg))?;
    let mut methods = Vec::with_capacity(cfg.methods.len());
    let mut draws = None;
    for (mi, FittedMethod { label, hyper, val_score, model }) in fitted.into_iter().enumerate() {
        let decoders = fit_decoders(&model, &train, cfg.decoder_lags)?;
        let proj = TestProjection::new(&model, &decoders, &test)?;
        let report = evaluate_projection(&proj, window)?;
        if mi == 0 && cfg.n_perms_per_run > 0 {
            draws = Some(null_draws(&proj, window, cfg.n_perms_per_run, mix_seed(seed, 4))?);
        }
        methods.push(MethodOutcome {
            label,
            hyper,
            val_score,
            train_isc: validation_isc(&model, &train)?,
            report,
        });
    }
    Ok((
        RunOutcome {
            grid_index,
            grid_value: value,
            run,
            split,
            subjects,
            channels,
            methods,
        },
        draws,
    ))
}

/// Hyperparameter grids and rules shared by the methods of one fit.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodGrids {
    pub mu_grid: Vec<f64>,
    pub gamma_grid: Vec<f64>,
    pub q: usize,
    pub si_mu_rule: SiMuRule,
}

impl MethodGrids {
    pub fn from_config(cfg: &SweepConfig) -> Self {
        Self {
            mu_grid: cfg.mu_grid.clone(),
            gamma_grid: cfg.gamma_grid.clone(),
            q: cfg.q,
            si_mu_rule: cfg.si_mu_rule,
        }
    }
}

/// A method fitted on training data with its selected hyperparameters.
#[derive(Debug, Clone)]
pub struct FittedMethod {
    pub label: String,
    pub hyper: Hyper,
    /// NaN for untuned methods.
    pub val_score: f64,
    pub model: GroupModel,
}

/// Selects hyperparameters on `val` and fits every method on `corr`.
///
/// Stimulus-unaware methods validate `mu`. Stimulus-informed methods take
/// `mu` from `grids.si_mu_rule` and validate `gamma`. Untuned methods use
/// `mu = 0`.
pub fn fit_methods(
    corr: &CorrelationSet,
    train: &[&Trial],
    val: &[&Trial],
    specs: &[MethodSpec],
    grids: &MethodGrids,
) -> Result<Vec<FittedMethod>, SweepError> {
    let q = grids.q;
    let mut baseline_mu: [Option<f64>; 2] = [None, None];
    let mut lw_mu = None;
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        let (hyper, val_score) = if !spec.tuned {
            (Hyper::new(0.0, 0.0, q), f64::NAN)
        } else if !spec.method.uses_stimulus() {
            let s = select_hyperparameters(corr, val, spec.method, &grids.mu_grid, &[], q, 0.0)?;
            baseline_mu[usize::from(spec.method == Method::CorrCa)] = Some(s.mu);
            (Hyper::new(s.mu, 0.0, q), s.score)
        } else {
            let si_mu = match grids.si_mu_rule {
                SiMuRule::LedoitWolf => match lw_mu {
                    Some(m) => m,
                    None => {
                        let m = ledoit_wolf_mu(train)?;
                        lw_mu = Some(m);
                        m
                    }
                },
                SiMuRule::FromBaseline => {
                    let (slot, base) = if spec.method == Method::SiCorrCa {
                        (1, Method::CorrCa)
                    } else {
                        (0, Method::Gcca)
                    };
                    match baseline_mu[slot] {
                        Some(m) => m,
                        None => {
                            let s = select_hyperparameters(corr, val, base, &grids.mu_grid, &[], q, 0.0)?;
                            baseline_mu[slot] = Some(s.mu);
                            s.mu
                        }
                    }
                }
            };
            let s = select_hyperparameters(corr, val, spec.method, &[], &grids.gamma_grid, q, si_mu)?;
            (Hyper::new(s.mu, s.gamma, q), s.score)
        };
        let model = fit(spec.method, corr, hyper)?;
        out.push(FittedMethod {
            label: spec.label.clone(),
            hyper,
            val_score,
            model,
        });
    }
    Ok(out)
}
