//! Synthetic data, hyperparameter selection and Monte-Carlo sweeps.

pub mod selection;
pub mod sweep;
pub mod synth;

pub use selection::{
    default_gamma_grid, default_mu_grid, ledoit_wolf_mu, select_hyperparameters, validation_isc,
    Selection, SelectionError,
};
pub use sweep::{
    fit_methods, run_sweep, FittedMethod, MethodGrids, MethodOutcome, MethodSpec, ResultRow, RunOutcome, SiMuRule, SweepConfig, SweepError,
    SweepResult, SweepVariable,
};
pub use synth::{generate_synthetic, SynthError, SynthSpec};
