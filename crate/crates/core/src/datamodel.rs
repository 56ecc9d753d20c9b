//! Recordings, time-lag embedding, trial normalization and splitting, and
//! assembly of the (cross-)correlation blocks every estimator consumes.

use std::sync::Arc;

use faer::{Mat, MatRef};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::{gram, symmetrize};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("invalid lag range [{lag_min}, {lag_max}]")]
    InvalidLags { lag_min: isize, lag_max: isize },
    #[error("signal has {samples} samples but the lag window spans {lags}")]
    TooShort { samples: usize, lags: usize },
    #[error("trial is constant after centering")]
    DegenerateTrial,
    #[error("trial needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("inconsistent recording: {0}")]
    Inconsistent(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("index {index} out of range ({len})")]
    OutOfRange { index: usize, len: usize },
}

/// Multi-subject trials recorded against one shared stimulus.
///
/// `subjects[k][t]` is subject `k`'s trial `t` as a `channels x samples`
/// matrix, `stimulus[t]` holds the raw feature rows (`features x samples`)
/// aligned with it.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    subjects: Vec<Vec<Mat<f64>>>,
    stimulus: Vec<Mat<f64>>,
    sample_rate: f64,
}

impl Recording {
    pub fn new(
        subjects: Vec<Vec<Mat<f64>>>,
        stimulus: Vec<Mat<f64>>,
        sample_rate: f64,
    ) -> Result<Self, DataError> {
        if subjects.is_empty() {
            return Err(DataError::Inconsistent("no subjects".into()));
        }
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(DataError::Inconsistent(format!("sample rate {sample_rate}")));
        }
        let n_trials = stimulus.len();
        if n_trials == 0 {
            return Err(DataError::Inconsistent("no trials".into()));
        }
        let channels = subjects[0].first().map(|m| m.nrows()).unwrap_or(0);
        let features = stimulus[0].nrows();
        if channels == 0 || features == 0 {
            return Err(DataError::Inconsistent("empty channel or feature dimension".into()));
        }
        for (k, trials) in subjects.iter().enumerate() {
            if trials.len() != n_trials {
                return Err(DataError::Inconsistent(format!(
                    "subject {k} has {} trials, stimulus has {n_trials}",
                    trials.len()
                )));
            }
            for (t, m) in trials.iter().enumerate() {
                if m.nrows() != channels {
                    return Err(DataError::Inconsistent(format!(
                        "subject {k} trial {t} has {} channels, expected {channels}",
                        m.nrows()
                    )));
                }
                if m.ncols() != stimulus[t].ncols() {
                    return Err(DataError::Inconsistent(format!(
                        "subject {k} trial {t} has {} samples, stimulus has {}",
                        m.ncols(),
                        stimulus[t].ncols()
                    )));
                }
            }
        }
        for (t, s) in stimulus.iter().enumerate() {
            if s.nrows() != features {
                return Err(DataError::Inconsistent(format!(
                    "stimulus trial {t} has {} features, expected {features}",
                    s.nrows()
                )));
            }
        }
        Ok(Self {
            subjects,
            stimulus,
            sample_rate,
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_trials(&self) -> usize {
        self.stimulus.len()
    }

    pub fn n_channels(&self) -> usize {
        self.subjects[0][0].nrows()
    }

    pub fn n_features(&self) -> usize {
        self.stimulus[0].nrows()
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn trial_len(&self, trial: usize) -> usize {
        self.stimulus[trial].ncols()
    }

    pub fn eeg(&self, subject: usize, trial: usize) -> MatRef<'_, f64> {
        self.subjects[subject][trial].as_ref()
    }

    pub fn stimulus(&self, trial: usize) -> MatRef<'_, f64> {
        self.stimulus[trial].as_ref()
    }

    /// Applies [`normalize_trial`] to every EEG and stimulus trial.
    pub fn normalized(&self) -> Result<Self, DataError> {
        let subjects = self
            .subjects
            .iter()
            .map(|trials| trials.iter().map(|m| normalize_trial(m.as_ref())).collect())
            .collect::<Result<Vec<Vec<_>>, _>>()?;
        let stimulus = self
            .stimulus
            .iter()
            .map(|m| normalize_trial(m.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            subjects,
            stimulus,
            sample_rate: self.sample_rate,
        })
    }
}

/// Inclusive range of integer sample lags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LagSpec {
    lag_min: isize,
    lag_max: isize,
}

impl LagSpec {
    pub fn new(lag_min: isize, lag_max: isize) -> Result<Self, DataError> {
        if lag_min > lag_max {
            return Err(DataError::InvalidLags { lag_min, lag_max });
        }
        Ok(Self { lag_min, lag_max })
    }

    /// `count` lags centered on zero; an even count leans one lag into the
    /// future.
    pub fn centered(count: usize) -> Result<Self, DataError> {
        if count == 0 {
            return Err(DataError::InvalidLags { lag_min: 0, lag_max: -1 });
        }
        let lag_min = -((count as isize - 1) / 2);
        Self::new(lag_min, lag_min + count as isize - 1)
    }

    /// `count` lags looking into the past: `[-(count - 1), 0]`.
    pub fn past(count: usize) -> Result<Self, DataError> {
        if count == 0 {
            return Err(DataError::InvalidLags { lag_min: 0, lag_max: -1 });
        }
        Self::new(-(count as isize - 1), 0)
    }

    /// `count` lags looking into the future: `[0, count - 1]`.
    pub fn future(count: usize) -> Result<Self, DataError> {
        if count == 0 {
            return Err(DataError::InvalidLags { lag_min: 0, lag_max: -1 });
        }
        Self::new(0, count as isize - 1)
    }

    pub fn lag_min(&self) -> isize {
        self.lag_min
    }

    pub fn lag_max(&self) -> isize {
        self.lag_max
    }

    pub fn count(&self) -> usize {
        (self.lag_max - self.lag_min + 1) as usize
    }

    pub fn lags(&self) -> impl Iterator<Item = isize> {
        self.lag_min..=self.lag_max
    }
}

/// Zero-padded block-Hankel embedding of a multichannel signal.
///
/// Column `c * L + j` holds channel `c` shifted by lag `lag_min + j`: row `t`
/// contains `x_c(t + lag)` when that index exists and zero otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct LagMatrix {
    data: Mat<f64>,
    spec: LagSpec,
    channels: usize,
}

impl LagMatrix {
    /// Wraps an already-lagged `T x (channels * spec.count())` matrix.
    pub fn from_parts(data: Mat<f64>, spec: LagSpec, channels: usize) -> Result<Self, DataError> {
        if data.ncols() != channels * spec.count() {
            return Err(DataError::ShapeMismatch(format!(
                "{} columns for {channels} channels x {} lags",
                data.ncols(),
                spec.count()
            )));
        }
        Ok(Self { data, spec, channels })
    }

    pub fn data(&self) -> MatRef<'_, f64> {
        self.data.as_ref()
    }

    pub fn into_data(self) -> Mat<f64> {
        self.data
    }

    pub fn spec(&self) -> LagSpec {
        self.spec
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    /// Stacks lag matrices vertically. Each part keeps its own zero padding.
    pub fn concat(parts: &[&LagMatrix]) -> Result<Self, DataError> {
        let first = parts
            .first()
            .ok_or_else(|| DataError::ShapeMismatch("nothing to concatenate".into()))?;
        let cols = first.ncols();
        for p in parts {
            if p.ncols() != cols || p.spec != first.spec {
                return Err(DataError::ShapeMismatch("concatenating different layouts".into()));
            }
        }
        let rows: usize = parts.iter().map(|p| p.nrows()).sum();
        let mut data = Mat::<f64>::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            data.as_mut()
                .submatrix_mut(offset, 0, p.nrows(), cols)
                .copy_from(p.data.as_ref());
            offset += p.nrows();
        }
        Ok(Self {
            data,
            spec: first.spec,
            channels: first.channels,
        })
    }

    /// Keeps the column blocks of the listed channels, in the given order.
    pub fn select_channels(&self, channels: &[usize]) -> Result<Self, DataError> {
        let l = self.spec.count();
        for &c in channels {
            if c >= self.channels {
                return Err(DataError::OutOfRange {
                    index: c,
                    len: self.channels,
                });
            }
        }
        let data = Mat::from_fn(self.nrows(), channels.len() * l, |i, j| {
            self.data[(i, channels[j / l] * l + j % l)]
        });
        Ok(Self {
            data,
            spec: self.spec,
            channels: channels.len(),
        })
    }
}

/// Builds the `T x (C * L)` zero-padded Hankel embedding of a `C x T`
/// signal.
pub fn build_lag_matrix(signal: MatRef<'_, f64>, spec: LagSpec) -> Result<LagMatrix, DataError> {
    let (channels, samples) = (signal.nrows(), signal.ncols());
    let l = spec.count();
    if samples < l {
        return Err(DataError::TooShort { samples, lags: l });
    }
    let mut data = Mat::<f64>::zeros(samples, channels * l);
    for c in 0..channels {
        for (j, lag) in spec.lags().enumerate() {
            let col = c * l + j;
            for t in 0..samples {
                let src = t as isize + lag;
                if src >= 0 && (src as usize) < samples {
                    data[(t, col)] = signal[(c, src as usize)];
                }
            }
        }
    }
    Ok(LagMatrix {
        data,
        spec,
        channels,
    })
}

/// Centers every row of a `C x T` trial and scales the whole matrix to unit
/// Frobenius norm.
pub fn normalize_trial(trial: MatRef<'_, f64>) -> Result<Mat<f64>, DataError> {
    let (c, t) = (trial.nrows(), trial.ncols());
    if t < 2 {
        return Err(DataError::TooFewSamples(t));
    }
    let mut out = trial.to_owned();
    for i in 0..c {
        let mean = (0..t).map(|j| trial[(i, j)]).sum::<f64>() / t as f64;
        for j in 0..t {
            out[(i, j)] -= mean;
        }
    }
    let norm = crate::linalg::frobenius2(out.as_ref()).sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(DataError::DegenerateTrial);
    }
    let inv = 1.0 / norm;
    for j in 0..t {
        for i in 0..c {
            out[(i, j)] *= inv;
        }
    }
    Ok(out)
}

/// Disjoint train/validation/test trial indices, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Samples `n_train` training trials uniformly without replacement and
/// splits the rest into validation (`floor(val_fraction * rest)`, at least
/// one) and test (at least one).
pub fn split_trials(
    n_trials: usize,
    n_train: usize,
    val_fraction: f64,
    seed: u64,
) -> Result<TrialSplit, DataError> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(DataError::InvalidSplit(format!("validation fraction {val_fraction}")));
    }
    if n_train >= n_trials {
        return Err(DataError::InvalidSplit(format!(
            "{n_train} training trials out of {n_trials}"
        )));
    }
    let rest = n_trials - n_train;
    if rest < 2 {
        return Err(DataError::InvalidSplit(format!(
            "{rest} trial(s) left for validation and test"
        )));
    }
    let n_val = ((val_fraction * rest as f64).floor() as usize).clamp(1, rest - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n_trials).collect();
    order.shuffle(&mut rng);
    let mut train = order[..n_train].to_vec();
    let mut val = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(TrialSplit { train, val, test })
}

/// Stimulus-side correlation blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct StimulusBlocks {
    /// `R_ky = X_k' Y`, one `M x P` block per subject.
    pub r_ky: Vec<Mat<f64>>,
    /// `R_yy = Y' Y`.
    pub r_yy: Mat<f64>,
}

/// All sample (cross-)correlation blocks of a group of lagged recordings.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSet {
    /// `KM x KM`, block `(k, l)` is `R_kl = X_k' X_l`.
    pub r_full: Mat<f64>,
    /// The diagonal blocks `R_kk`, bit-identical to those in `r_full`.
    pub r_blockdiag: Vec<Mat<f64>>,
    pub stimulus: Option<StimulusBlocks>,
    pub sample_count: usize,
}

impl CorrelationSet {
    pub fn n_subjects(&self) -> usize {
        self.r_blockdiag.len()
    }

    /// Columns per subject (`M`).
    pub fn block_dim(&self) -> usize {
        self.r_blockdiag.first().map(|m| m.nrows()).unwrap_or(0)
    }

    /// Stimulus columns (`P`), zero without stimulus.
    pub fn stim_dim(&self) -> usize {
        self.stimulus.as_ref().map(|s| s.r_yy.nrows()).unwrap_or(0)
    }

    pub fn r_kl(&self, k: usize, l: usize) -> MatRef<'_, f64> {
        let m = self.block_dim();
        self.r_full.as_ref().submatrix(k * m, l * m, m, m)
    }

    /// Sum of several sets with identical layout: the correlations of the
    /// concatenated data.
    pub fn sum<'a>(sets: impl IntoIterator<Item = &'a CorrelationSet>) -> Result<Self, DataError> {
        let mut iter = sets.into_iter();
        let mut acc = iter
            .next()
            .ok_or_else(|| DataError::ShapeMismatch("empty correlation sum".into()))?
            .clone();
        for s in iter {
            if s.r_full.nrows() != acc.r_full.nrows()
                || s.n_subjects() != acc.n_subjects()
                || s.stim_dim() != acc.stim_dim()
                || s.stimulus.is_some() != acc.stimulus.is_some()
            {
                return Err(DataError::ShapeMismatch("summing different layouts".into()));
            }
            add_assign(&mut acc.r_full, s.r_full.as_ref());
            if let (Some(a), Some(b)) = (acc.stimulus.as_mut(), s.stimulus.as_ref()) {
                for (x, y) in a.r_ky.iter_mut().zip(&b.r_ky) {
                    add_assign(x, y.as_ref());
                }
                add_assign(&mut a.r_yy, b.r_yy.as_ref());
            }
            acc.sample_count += s.sample_count;
        }
        acc.refresh_diagonal();
        Ok(acc)
    }

    /// Restricts to a subset of subjects and channels. `lags_per_channel` is
    /// the number of lag columns each channel occupies within a block.
    pub fn restrict(
        &self,
        subjects: &[usize],
        channels: &[usize],
        lags_per_channel: usize,
    ) -> Result<Self, DataError> {
        let m = self.block_dim();
        if lags_per_channel == 0 || m % lags_per_channel != 0 {
            return Err(DataError::ShapeMismatch(format!(
                "block dimension {m} is not a multiple of {lags_per_channel} lags"
            )));
        }
        let n_channels = m / lags_per_channel;
        for &k in subjects {
            if k >= self.n_subjects() {
                return Err(DataError::OutOfRange {
                    index: k,
                    len: self.n_subjects(),
                });
            }
        }
        for &c in channels {
            if c >= n_channels {
                return Err(DataError::OutOfRange {
                    index: c,
                    len: n_channels,
                });
            }
        }
        let within: Vec<usize> = channels
            .iter()
            .flat_map(|&c| (0..lags_per_channel).map(move |j| c * lags_per_channel + j))
            .collect();
        let idx: Vec<usize> = subjects
            .iter()
            .flat_map(|&k| within.iter().map(move |&i| k * m + i))
            .collect();
        let r_full = Mat::from_fn(idx.len(), idx.len(), |i, j| self.r_full[(idx[i], idx[j])]);
        let stimulus = self.stimulus.as_ref().map(|s| StimulusBlocks {
            r_ky: subjects
                .iter()
                .map(|&k| {
                    Mat::from_fn(within.len(), s.r_yy.nrows(), |i, j| s.r_ky[k][(within[i], j)])
                })
                .collect(),
            r_yy: s.r_yy.clone(),
        });
        let mut out = Self {
            r_full,
            r_blockdiag: vec![Mat::zeros(within.len(), within.len()); subjects.len()],
            stimulus,
            sample_count: self.sample_count,
        };
        out.refresh_diagonal();
        Ok(out)
    }

    fn refresh_diagonal(&mut self) {
        let m = self.block_dim();
        for k in 0..self.r_blockdiag.len() {
            self.r_blockdiag[k] = self.r_full.as_ref().submatrix(k * m, k * m, m, m).to_owned();
        }
    }
}

fn add_assign(acc: &mut Mat<f64>, x: MatRef<'_, f64>) {
    for j in 0..acc.ncols() {
        for i in 0..acc.nrows() {
            acc[(i, j)] += x[(i, j)];
        }
    }
}

/// Computes every `R_kl`, and `R_ky`, `R_yy` when a lagged stimulus is
/// given. Inputs are expected to be centered, so correlations are plain
/// inner products summed over all rows.
pub fn compute_correlations(
    subjects: &[LagMatrix],
    stimulus: Option<&LagMatrix>,
) -> Result<CorrelationSet, DataError> {
    let refs: Vec<MatRef<'_, f64>> = subjects.iter().map(|s| s.data()).collect();
    correlations_from_refs(&refs, stimulus.map(|s| s.data()))
}

pub(crate) fn correlations_from_refs(
    subjects: &[MatRef<'_, f64>],
    stimulus: Option<MatRef<'_, f64>>,
) -> Result<CorrelationSet, DataError> {
    let k = subjects.len();
    if k == 0 {
        return Err(DataError::ShapeMismatch("no subjects".into()));
    }
    let t = subjects[0].nrows();
    let m = subjects[0].ncols();
    for (i, s) in subjects.iter().enumerate() {
        if s.nrows() != t || s.ncols() != m {
            return Err(DataError::ShapeMismatch(format!(
                "subject {i} is {}x{}, expected {t}x{m}",
                s.nrows(),
                s.ncols()
            )));
        }
    }
    if let Some(y) = stimulus {
        if y.nrows() != t {
            return Err(DataError::ShapeMismatch(format!(
                "stimulus has {} samples, expected {t}",
                y.nrows()
            )));
        }
    }
    let mut r_full = Mat::<f64>::zeros(k * m, k * m);
    for a in 0..k {
        let diag = gram(subjects[a]);
        r_full.as_mut().submatrix_mut(a * m, a * m, m, m).copy_from(diag.as_ref());
        for b in (a + 1)..k {
            let block = subjects[a].transpose() * subjects[b];
            r_full.as_mut().submatrix_mut(a * m, b * m, m, m).copy_from(block.as_ref());
            r_full
                .as_mut()
                .submatrix_mut(b * m, a * m, m, m)
                .copy_from(block.transpose());
        }
    }
    let stimulus = stimulus.map(|y| {
        let mut r_yy = gram(y);
        symmetrize(&mut r_yy);
        StimulusBlocks {
            r_ky: subjects.iter().map(|x| x.transpose() * y).collect(),
            r_yy,
        }
    });
    let mut out = CorrelationSet {
        r_full,
        r_blockdiag: vec![Mat::zeros(m, m); k],
        stimulus,
        sample_count: t,
    };
    out.refresh_diagonal();
    Ok(out)
}

/// One trial of lagged data for every subject, the lagged stimulus and the
/// raw first stimulus feature used for stimulus correlations.
#[derive(Debug, Clone)]
pub struct Trial {
    pub eeg: Vec<LagMatrix>,
    pub stimulus: Option<LagMatrix>,
    pub feature: Vec<f64>,
    pub corr: CorrelationSet,
}

impl Trial {
    pub fn from_recording(
        rec: &Recording,
        trial: usize,
        eeg_lags: LagSpec,
        stim_lags: Option<LagSpec>,
    ) -> Result<Self, DataError> {
        if trial >= rec.n_trials() {
            return Err(DataError::OutOfRange {
                index: trial,
                len: rec.n_trials(),
            });
        }
        let eeg = (0..rec.n_subjects())
            .map(|k| build_lag_matrix(rec.eeg(k, trial), eeg_lags))
            .collect::<Result<Vec<_>, _>>()?;
        let stimulus = stim_lags
            .map(|s| build_lag_matrix(rec.stimulus(trial), s))
            .transpose()?;
        let y = rec.stimulus(trial);
        let feature = (0..y.ncols()).map(|t| y[(0, t)]).collect();
        let corr = compute_correlations(&eeg, stimulus.as_ref())?;
        Ok(Self {
            eeg,
            stimulus,
            feature,
            corr,
        })
    }

    pub fn len(&self) -> usize {
        self.feature.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feature.is_empty()
    }

    pub fn n_subjects(&self) -> usize {
        self.eeg.len()
    }

    /// Same trial restricted to some subjects and channels.
    pub fn restrict(&self, subjects: &[usize], channels: &[usize]) -> Result<Self, DataError> {
        let eeg = subjects
            .iter()
            .map(|&k| {
                self.eeg
                    .get(k)
                    .ok_or(DataError::OutOfRange {
                        index: k,
                        len: self.eeg.len(),
                    })
                    .and_then(|x| x.select_channels(channels))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let lags = self.eeg[0].spec().count();
        Ok(Self {
            corr: self.corr.restrict(subjects, channels, lags)?,
            eeg,
            stimulus: self.stimulus.clone(),
            feature: self.feature.clone(),
        })
    }
}

/// Lags every trial of a recording once.
pub fn prepare_trials(
    rec: &Recording,
    eeg_lags: LagSpec,
    stim_lags: Option<LagSpec>,
) -> Result<Vec<Arc<Trial>>, DataError> {
    (0..rec.n_trials())
        .map(|t| Trial::from_recording(rec, t, eeg_lags, stim_lags).map(Arc::new))
        .collect()
}

/// Correlations of a set of trials, summed per trial.
pub fn pooled_correlations(trials: &[Arc<Trial>]) -> Result<CorrelationSet, DataError> {
    CorrelationSet::sum(trials.iter().map(|t| &t.corr))
}
