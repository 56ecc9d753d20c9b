//! Generalized canonical correlation analysis for groups of
//! stimulus-synchronized recordings.
//!
//! The crate provides four component estimators that all reduce to a
//! symmetric-definite generalized eigenvalue problem:
//!
//! * MAXVAR-GCCA, with per-subject spatiotemporal decoders,
//! * correlated component analysis (corrCA), with one decoder shared by all
//!   subjects,
//! * stimulus-informed GCCA (SI-GCCA), which adds a stimulus encoder that
//!   pulls the shared subspace toward a lagged stimulus feature,
//! * stimulus-informed corrCA (SI-corrCA).
//!
//! Around the estimators sit the evaluation pieces: inter-subject and
//! stimulus correlations over test windows, permutation-based significance
//! thresholds, validation-based hyperparameter selection and Monte-Carlo
//! sweeps over a synthetic or ingested [`datamodel::Recording`].
//!
//! All matrices are [`faer::Mat<f64>`]. Linear algebra runs sequentially so
//! that results are bit-reproducible; Monte-Carlo runs in [`harness`] are the
//! unit of parallelism.

pub mod datamodel;
pub mod estimators;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod stats;

pub use faer::Mat;

pub use datamodel::{
    build_lag_matrix, compute_correlations, normalize_trial, split_trials, CorrelationSet,
    LagMatrix, LagSpec, Recording, Trial, TrialSplit,
};
pub use estimators::{
    corrca_fit, fit, gcca_fit, project, scale_model, sicorrca_fit, sigcca_fit, GroupModel,
    Hyper, LeadingSolver, Method, ProjectedSignals,
};
pub use linalg::{ledoit_wolf_intensity, sym_gevd_smallest, GevdResult, SymPencil};
