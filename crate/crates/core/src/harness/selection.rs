//! Validation-based hyperparameter search.

use thiserror::Error;

use crate::datamodel::{CorrelationSet, Trial};
use crate::estimators::{project_views, EstimatorError, GroupModel, LeadingSolver, Method};
use crate::linalg::{ledoit_wolf_intensity, LinalgError};
use crate::metrics::{mean_pairwise, MetricsError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectionError {
    #[error("empty hyperparameter grid")]
    EmptyGrid,
    #[error("empty validation set")]
    NoValidation,
    #[error("no grid point could be fitted: {0}")]
    AllFailed(EstimatorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// `{0} ∪ {10^-5, 10^-4.5, ..., 10^5}`: 22 values, ascending.
pub fn default_mu_grid() -> Vec<f64> {
    log_grid(-5.0, 21)
}

/// `{0} ∪ {10^-2, 10^-1.5, ..., 10^8}`: 22 values, ascending.
pub fn default_gamma_grid() -> Vec<f64> {
    log_grid(-2.0, 21)
}

fn log_grid(first_exp: f64, n: usize) -> Vec<f64> {
    std::iter::once(0.0)
        .chain((0..n).map(|i| 10f64.powf(first_exp + 0.5 * i as f64)))
        .collect()
}

/// Outcome of a grid search.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub mu: f64,
    pub gamma: f64,
    /// Mean first-component validation ISC at the chosen point.
    pub score: f64,
}

/// Mean over validation trials of the first-component ISC, each trial
/// scored on its own.
pub fn validation_isc(model: &GroupModel, val: &[&Trial]) -> Result<f64, MetricsError> {
    if val.is_empty() {
        return Err(MetricsError::TooFew {
            what: "validation trials",
            required: 1,
            got: 0,
        });
    }
    let mut sum = 0.0;
    for trial in val {
        let views: Vec<_> = trial.eeg.iter().map(|x| x.data()).collect();
        let p = project_views(model, &views)?;
        let cols: Vec<Vec<f64>> = p
            .per_subject
            .iter()
            .map(|z| (0..z.nrows()).map(|t| z[(t, 0)]).collect())
            .collect();
        sum += mean_pairwise(&cols)?.value;
    }
    Ok(sum / val.len() as f64)
}

/// Picks the hyperparameter that maximizes the mean first-component ISC on
/// the validation trials. Grid points are scored with
/// [`LeadingSolver`], which computes the first component only.
///
/// Stimulus-unaware methods search `mu_grid` with `gamma = 0`;
/// stimulus-informed methods keep `mu = si_mu` fixed and search
/// `gamma_grid`. Grids are scanned in the given order and only a strictly
/// better score replaces the incumbent, so ties go to the earlier (for an
/// ascending grid, smaller) value. Grid points whose fit fails are skipped.
pub fn select_hyperparameters(
    train: &CorrelationSet,
    val: &[&Trial],
    method: Method,
    mu_grid: &[f64],
    gamma_grid: &[f64],
    q: usize,
    si_mu: f64,
) -> Result<Selection, SelectionError> {
    if val.is_empty() {
        return Err(SelectionError::NoValidation);
    }
    let points: Vec<(f64, f64)> = if method.uses_stimulus() {
        gamma_grid.iter().map(|&g| (si_mu, g)).collect()
    } else {
        mu_grid.iter().map(|&m| (m, 0.0)).collect()
    };
    if points.is_empty() {
        return Err(SelectionError::EmptyGrid);
    }
    let dim = method.pencil_dim(train.n_subjects(), train.block_dim(), train.stim_dim());
    if q > dim {
        return Err(SelectionError::AllFailed(EstimatorError::TooManyComponents { q, dim }));
    }
    let solver = LeadingSolver::new(method, train).map_err(SelectionError::AllFailed)?;
    let mut best: Option<Selection> = None;
    let mut last_err = None;
    for (mu, gamma) in points {
        let model = match solver.fit(mu, gamma) {
            Ok(m) => m,
            Err(e) => {
                log::debug!("{method} mu={mu:e} gamma={gamma:e} skipped: {e}");
                last_err = Some(e);
                continue;
            }
        };
        let score = validation_isc(&model, val)?;
        let better = match &best {
            None => true,
            Some(b) => score > b.score || (b.score.is_nan() && !score.is_nan()),
        };
        if better {
            best = Some(Selection { mu, gamma, score });
        }
    }
    best.ok_or_else(|| SelectionError::AllFailed(last_err.expect("non-empty grid")))
}

/// Ledoit-Wolf loading averaged over subjects, computed from the lagged
/// training data of each subject.
pub fn ledoit_wolf_mu(train: &[&Trial]) -> Result<f64, SelectionError> {
    let k = train.first().map(|t| t.n_subjects()).unwrap_or(0);
    if k == 0 {
        return Err(SelectionError::NoValidation);
    }
    let mut sum = 0.0;
    for s in 0..k {
        let parts: Vec<&crate::datamodel::LagMatrix> = train.iter().map(|t| &t.eeg[s]).collect();
        let x = crate::datamodel::LagMatrix::concat(&parts)
            .map_err(|e| SelectionError::Metrics(MetricsError::Data(e)))?;
        sum += ledoit_wolf_intensity(x.data())?.mu;
    }
    Ok(sum / k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn printed_grids() {
        let mu = default_mu_grid();
        assert_eq!(mu.len(), 22);
        assert_eq!(mu[0], 0.0);
        assert!((mu[1] - 1e-5).abs() < 1e-20);
        assert!((mu[2] - 10f64.powf(-4.5)).abs() < 1e-18);
        assert!((mu[21] - 1e5).abs() < 1e-9);
        let g = default_gamma_grid();
        assert_eq!(g.len(), 22);
        assert!((g[1] - 1e-2).abs() < 1e-17);
        assert!((g[21] - 1e8).abs() < 1e-6);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }
}
