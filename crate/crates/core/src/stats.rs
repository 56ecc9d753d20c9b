//! Trial-permutation null distributions and significance thresholds for ISC
//! and SC.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::metrics::{MetricTag, MetricsError, TestProjection, Thresholds};

pub const DEFAULT_LEVEL: f64 = 0.05;
pub const DEFAULT_RUNS: usize = 50;
pub const DEFAULT_PERMS_PER_RUN: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least 2 test trials to permute, got {0}")]
    TooFewTrials(usize),
    #[error("need at least 100 null samples, got {0}")]
    TooFewSamples(usize),
    #[error("significance level {0} outside (0, 1)")]
    InvalidLevel(f64),
    #[error("permuted trials differ in length ({0} vs {1})")]
    UnequalTrials(usize, usize),
    #[error("null sample is not finite")]
    NonFinite,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Empirical null distribution of one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct NullDistribution {
    pub samples: Vec<f64>,
    pub metric: MetricTag,
    pub level: f64,
    pub threshold: f64,
}

impl NullDistribution {
    pub fn new(samples: Vec<f64>, metric: MetricTag, level: f64) -> Result<Self, StatsError> {
        if !(level > 0.0 && level < 1.0) {
            return Err(StatsError::InvalidLevel(level));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite);
        }
        let threshold = empirical_quantile(&samples, 1.0 - level);
        Ok(Self {
            samples,
            metric,
            level,
            threshold,
        })
    }

    /// Fraction of `values` strictly above the threshold.
    pub fn exceedance(&self, values: &[f64]) -> f64 {
        values.iter().filter(|&&v| v > self.threshold).count() as f64 / values.len() as f64
    }
}

/// Inverse empirical CDF: the smallest sample with at least a fraction `p`
/// of the samples at or below it.
pub fn empirical_quantile(samples: &[f64], p: f64) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let idx = ((p * n as f64).ceil() as usize).clamp(1, n) - 1;
    sorted[idx]
}

/// Null distributions of every metric of a set of test projections.
#[derive(Debug, Clone, PartialEq)]
pub struct NullSet {
    /// Per component.
    pub isc: Vec<NullDistribution>,
    pub sc: NullDistribution,
    pub sc_avg: NullDistribution,
}

impl NullSet {
    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            isc: self.isc.iter().map(|d| d.threshold).collect(),
            sc: self.sc.threshold,
            sc_avg: self.sc_avg.threshold,
        }
    }

    /// Assembles distributions from draws, in iteration order.
    pub fn from_draws<'a>(
        draws: impl IntoIterator<Item = &'a NullDraw>,
        level: f64,
    ) -> Result<Self, StatsError> {
        let draws: Vec<&NullDraw> = draws.into_iter().collect();
        if draws.len() < 100 {
            return Err(StatsError::TooFewSamples(draws.len()));
        }
        let q = draws[0].isc.len();
        let isc = (0..q)
            .map(|c| NullDistribution::new(draws.iter().map(|d| d.isc[c]).collect(), MetricTag::Isc(c), level))
            .collect::<Result<Vec<_>, _>>()?;
        let sc = NullDistribution::new(draws.iter().map(|d| d.sc).collect(), MetricTag::Sc(0), level)?;
        let sc_avg = NullDistribution::new(draws.iter().map(|d| d.sc_avg).collect(), MetricTag::ScAvg, level)?;
        Ok(Self { isc, sc, sc_avg })
    }

    pub fn get(&self, tag: MetricTag) -> Option<&NullDistribution> {
        match tag {
            MetricTag::Isc(q) => self.isc.get(q),
            MetricTag::Sc(_) => Some(&self.sc),
            MetricTag::ScAvg => Some(&self.sc_avg),
        }
    }
}

/// Draws `n_perms_per_run` permutations of every run's test trials.
///
/// For ISC, the trial order of every subject is shuffled independently; for
/// SC and SC_avg the stimulus trials are shuffled against the (aligned)
/// projected trials. Each permutation contributes one sample per metric,
/// taken from one window chosen uniformly at random. Per-subject SC samples
/// cycle through the subjects and are pooled into a single distribution.
/// Sample `r * n_perms_per_run + i` always comes from run `r`, permutation
/// `i`, whatever the thread count.
pub fn permutation_nulls(
    runs: &[TestProjection],
    window_length: usize,
    n_perms_per_run: usize,
    level: f64,
    seed: u64,
) -> Result<NullSet, StatsError> {
    let total = runs.len() * n_perms_per_run;
    if total < 100 {
        return Err(StatsError::TooFewSamples(total));
    }
    let per_run: Vec<Vec<NullDraw>> = runs
        .iter()
        .enumerate()
        .map(|(r, proj)| null_draws(proj, window_length, n_perms_per_run, mix_seed(seed, r as u64)))
        .collect::<Result<_, _>>()?;
    NullSet::from_draws(per_run.iter().flatten(), level)
}

/// Null distribution of a single metric; see [`permutation_nulls`].
pub fn permutation_threshold(
    runs: &[TestProjection],
    metric: MetricTag,
    window_length: usize,
    n_perms_per_run: usize,
    level: f64,
    seed: u64,
) -> Result<NullDistribution, StatsError> {
    let set = permutation_nulls(runs, window_length, n_perms_per_run, level, seed)?;
    set.get(metric)
        .cloned()
        .ok_or(StatsError::Metrics(MetricsError::NoSuchComponent {
            q: metric.index(),
            available: set.isc.len(),
        }))
}

/// One permutation's sample of every metric.
#[derive(Debug, Clone, PartialEq)]
pub struct NullDraw {
    pub isc: Vec<f64>,
    pub sc: f64,
    pub sc_avg: f64,
}

/// The null samples contributed by one run.
pub fn null_draws(
    proj: &TestProjection,
    window_length: usize,
    n_perms: usize,
    seed: u64,
) -> Result<Vec<NullDraw>, StatsError> {
    let n = proj.n_trials();
    if n < 2 {
        return Err(StatsError::TooFewTrials(n));
    }
    let len0 = proj.trial_len(0);
    for t in 1..n {
        if proj.trial_len(t) != len0 {
            return Err(StatsError::UnequalTrials(len0, proj.trial_len(t)));
        }
    }
    let windows = proj.windows(window_length)?;
    let k = proj.n_subjects();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_perms);
    for i in 0..n_perms {
        let eeg: Vec<Vec<usize>> = (0..k).map(|_| shuffled(n, &mut rng)).collect();
        let stim = shuffled(n, &mut rng);
        let w = &windows[rng.random_range(0..windows.len())];
        let isc = proj.window_metrics(w, Some(&eeg), None)?.isc;
        let aligned = proj.window_metrics(w, None, Some(&stim))?;
        out.push(NullDraw {
            isc,
            sc: aligned.sc[i % k],
            sc_avg: aligned.sc_avg,
        });
    }
    Ok(out)
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(rng);
    v
}

/// Derives independent stream seeds from a base seed (splitmix64 finalizer).
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_is_inverse_cdf() {
        let s: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(empirical_quantile(&s, 0.95), 950.0);
        assert_eq!(empirical_quantile(&s, 1.0), 1000.0);
        assert_eq!(empirical_quantile(&s, 0.0), 1.0);
        let d = NullDistribution::new(s.clone(), MetricTag::ScAvg, 0.05).unwrap();
        assert!((d.exceedance(&s) - 0.05).abs() < 1e-12);
        assert!(NullDistribution::new(s, MetricTag::ScAvg, 1.5).is_err());
    }

    #[test]
    fn seeds_differ_per_stream() {
        assert_ne!(mix_seed(1, 0), mix_seed(1, 1));
        assert_ne!(mix_seed(1, 0), mix_seed(2, 0));
        assert_eq!(mix_seed(5, 9), mix_seed(5, 9));
    }
}
