//! Correlation metrics on projected signals: Pearson correlation,
//! inter-subject correlation (ISC), least-squares stimulus decoders and the
//! stimulus correlations SC_k and SC_avg over fixed-length windows.

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef, Side};
use thiserror::Error;

use crate::datamodel::{build_lag_matrix, DataError, LagSpec, Trial};
use crate::estimators::{project_views, EstimatorError, GroupModel, ProjectedSignals};

/// Norms below this make a correlation undefined.
pub const DEGENERATE_NORM: f64 = 1e-15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {required} {what}, got {got}")]
    TooFew {
        what: &'static str,
        required: usize,
        got: usize,
    },
    #[error("decoder normal equations are singular even after ridge loading")]
    Singular,
    #[error("component {q} out of range ({available})")]
    NoSuchComponent { q: usize, available: usize },
    #[error("window of {window} samples does not fit the test set")]
    InvalidWindow { window: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

/// A Pearson correlation; `degenerate` marks a (near) zero-norm input, in
/// which case `value` is 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub value: f64,
    pub degenerate: bool,
}

/// `x'y / (||x|| ||y||)` without centering.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricsError::TooFew {
            what: "samples",
            required: 2,
            got: x.len(),
        });
    }
    let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        xy += a * b;
        xx += a * a;
        yy += b * b;
    }
    let (nx, ny) = (xx.sqrt(), yy.sqrt());
    if nx < DEGENERATE_NORM || ny < DEGENERATE_NORM || !(nx * ny).is_finite() {
        return Ok(Correlation {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Correlation {
        value: (xy / (nx * ny)).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

fn centered(x: &[f64]) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len().max(1) as f64;
    x.iter().map(|v| v - mean).collect()
}

/// Pearson correlation after removing the mean of each input.
pub fn pearson_centered(x: &[f64], y: &[f64]) -> Result<Correlation, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    pearson(&centered(x), &centered(y))
}

/// Mean pairwise centered correlation of `signals`.
pub fn mean_pairwise(signals: &[Vec<f64>]) -> Result<Correlation, MetricsError> {
    let k = signals.len();
    if k < 2 {
        return Err(MetricsError::TooFew {
            what: "subjects",
            required: 2,
            got: k,
        });
    }
    let cs: Vec<Vec<f64>> = signals.iter().map(|s| centered(s)).collect();
    let mut sum = 0.0;
    let mut degenerate = false;
    for a in 0..k {
        for b in (a + 1)..k {
            let r = pearson(&cs[a], &cs[b])?;
            sum += r.value;
            degenerate |= r.degenerate;
        }
    }
    Ok(Correlation {
        value: 2.0 * sum / (k * (k - 1)) as f64,
        degenerate,
    })
}

fn column(m: MatRef<'_, f64>, q: usize) -> Vec<f64> {
    (0..m.nrows()).map(|t| m[(t, q)]).collect()
}

/// ISC of component `q` over the whole projected signal.
pub fn isc(projected: &ProjectedSignals, q: usize) -> Result<f64, MetricsError> {
    let available = projected.shared_average.ncols();
    if q >= available {
        return Err(MetricsError::NoSuchComponent { q, available });
    }
    let cols: Vec<Vec<f64>> = projected
        .per_subject
        .iter()
        .map(|z| column(z.as_ref(), q))
        .collect();
    Ok(mean_pairwise(&cols)?.value)
}

/// Which projected signal a stimulus decoder reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderScope {
    Subject(usize),
    Average,
}

/// Least-squares backward model from post-stimulus lagged components to the
/// stimulus feature.
#[derive(Debug, Clone, PartialEq)]
pub struct StimulusDecoder {
    /// Length `Q * L_d`, component-major with ascending lags.
    pub weights: Vec<f64>,
    pub lags: LagSpec,
    pub components: usize,
    pub scope: DecoderScope,
}

fn lag_components(z: MatRef<'_, f64>, lags: LagSpec) -> Result<Mat<f64>, MetricsError> {
    Ok(build_lag_matrix(z.transpose(), lags)?.into_data())
}

/// Fits a decoder on one contiguous segment.
pub fn fit_stimulus_decoder(
    projected_train: MatRef<'_, f64>,
    stimulus_train: &[f64],
    lags: usize,
) -> Result<StimulusDecoder, MetricsError> {
    fit_stimulus_decoder_segments(&[(projected_train, stimulus_train)], lags, DecoderScope::Average)
}

/// Fits a decoder on several segments (trials). Each segment is lagged on
/// its own, so the padding never mixes segments; the normal equations are
/// accumulated over all of them.
pub fn fit_stimulus_decoder_segments(
    segments: &[(MatRef<'_, f64>, &[f64])],
    lags: usize,
    scope: DecoderScope,
) -> Result<StimulusDecoder, MetricsError> {
    let spec = LagSpec::future(lags)?;
    let q = segments
        .first()
        .map(|s| s.0.ncols())
        .ok_or(MetricsError::TooFew {
            what: "training segments",
            required: 1,
            got: 0,
        })?;
    let n = q * lags;
    let mut gram = Mat::<f64>::zeros(n, n);
    let mut rhs = Mat::<f64>::zeros(n, 1);
    let mut total = 0;
    for (z, y) in segments {
        if z.nrows() != y.len() || z.ncols() != q {
            return Err(MetricsError::ShapeMismatch(format!(
                "segment is {}x{} with {} stimulus samples",
                z.nrows(),
                z.ncols(),
                y.len()
            )));
        }
        let zl = lag_components(*z, spec)?;
        gram += zl.transpose() * &zl;
        let yv = MatRef::from_column_major_slice(y, y.len(), 1);
        rhs += zl.transpose() * yv;
        total += y.len();
    }
    if total <= n {
        return Err(MetricsError::TooFew {
            what: "training samples",
            required: n + 1,
            got: total,
        });
    }
    let d = solve_normal_equations(gram, rhs.as_ref())?;
    Ok(StimulusDecoder {
        weights: (0..n).map(|i| d[(i, 0)]).collect(),
        lags: spec,
        components: q,
        scope,
    })
}

/// Cholesky solve of `G d = r`, loading `G` with `1e-10 trace(G) / n` only
/// when it is numerically singular.
fn solve_normal_equations(mut gram: Mat<f64>, rhs: MatRef<'_, f64>) -> Result<Mat<f64>, MetricsError> {
    let n = gram.nrows();
    crate::linalg::symmetrize(&mut gram);
    if let Some(x) = definite_solve(gram.as_ref(), rhs) {
        return Ok(x);
    }
    let ridge = 1e-10 * crate::linalg::trace(gram.as_ref()) / n as f64;
    if !(ridge > 0.0) {
        return Err(MetricsError::Singular);
    }
    for i in 0..n {
        gram[(i, i)] += ridge;
    }
    definite_solve(gram.as_ref(), rhs).ok_or(MetricsError::Singular)
}

fn definite_solve(g: MatRef<'_, f64>, rhs: MatRef<'_, f64>) -> Option<Mat<f64>> {
    let llt = g.llt(Side::Lower).ok()?;
    let l = llt.L();
    // reject factors whose pivots collapsed relative to the diagonal
    for i in 0..g.nrows() {
        let d = g[(i, i)];
        if !(d > 0.0) || l[(i, i)] * l[(i, i)] < 1e-13 * d {
            return None;
        }
    }
    let x = llt.solve(rhs);
    let finite = x.col(0).iter().all(|v| v.is_finite());
    finite.then_some(x)
}

impl StimulusDecoder {
    /// Reconstructs the stimulus from one contiguous projected segment.
    pub fn reconstruct(&self, projected: MatRef<'_, f64>) -> Result<Vec<f64>, MetricsError> {
        if projected.ncols() != self.components {
            return Err(MetricsError::ShapeMismatch(format!(
                "decoder expects {} components, got {}",
                self.components,
                projected.ncols()
            )));
        }
        let zl = lag_components(projected, self.lags)?;
        let d = MatRef::from_column_major_slice(&self.weights, self.weights.len(), 1);
        let y = zl * d;
        Ok(column(y.as_ref(), 0))
    }
}

/// `rho(y, Z~ d)` on one contiguous segment, centered.
pub fn stimulus_correlation(
    decoder: &StimulusDecoder,
    projected_test: MatRef<'_, f64>,
    stimulus_test: &[f64],
) -> Result<Correlation, MetricsError> {
    if projected_test.nrows() != stimulus_test.len() {
        return Err(MetricsError::LengthMismatch(projected_test.nrows(), stimulus_test.len()));
    }
    let rec = decoder.reconstruct(projected_test)?;
    pearson_centered(stimulus_test, &rec)
}

/// Per-subject decoders plus the decoder on the averaged subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderSet {
    pub per_subject: Vec<StimulusDecoder>,
    pub average: StimulusDecoder,
}

/// Trains all stimulus decoders on the projected training trials.
pub fn fit_decoders(
    model: &GroupModel,
    train: &[&Trial],
    lags: usize,
) -> Result<DecoderSet, MetricsError> {
    let projected = train
        .iter()
        .map(|t| project_trial(model, t))
        .collect::<Result<Vec<_>, _>>()?;
    let k = model.n_subjects();
    let per_subject = (0..k)
        .map(|s| {
            let segs: Vec<(MatRef<'_, f64>, &[f64])> = projected
                .iter()
                .zip(train)
                .map(|(p, t)| (p.per_subject[s].as_ref(), t.feature.as_slice()))
                .collect();
            fit_stimulus_decoder_segments(&segs, lags, DecoderScope::Subject(s))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let segs: Vec<(MatRef<'_, f64>, &[f64])> = projected
        .iter()
        .zip(train)
        .map(|(p, t)| (p.shared_average.as_ref(), t.feature.as_slice()))
        .collect();
    let average = fit_stimulus_decoder_segments(&segs, lags, DecoderScope::Average)?;
    Ok(DecoderSet { per_subject, average })
}

fn project_trial(model: &GroupModel, trial: &Trial) -> Result<ProjectedSignals, MetricsError> {
    let views: Vec<MatRef<'_, f64>> = trial.eeg.iter().map(|x| x.data()).collect();
    Ok(project_views(model, &views)?)
}

/// Everything the window metrics and permutation nulls need from one test
/// set: projections and stimulus reconstructions, per trial.
#[derive(Debug, Clone)]
pub struct TestProjection {
    /// `[trial][subject]`, `T x Q`.
    pub z: Vec<Vec<Mat<f64>>>,
    /// `[trial][subject]` stimulus reconstruction.
    pub recon: Vec<Vec<Vec<f64>>>,
    /// `[trial]` reconstruction from the averaged subspace.
    pub recon_avg: Vec<Vec<f64>>,
    /// `[trial]` stimulus feature.
    pub stimulus: Vec<Vec<f64>>,
}

impl TestProjection {
    pub fn new(model: &GroupModel, decoders: &DecoderSet, test: &[&Trial]) -> Result<Self, MetricsError> {
        let mut out = Self {
            z: Vec::with_capacity(test.len()),
            recon: Vec::with_capacity(test.len()),
            recon_avg: Vec::with_capacity(test.len()),
            stimulus: Vec::with_capacity(test.len()),
        };
        for trial in test {
            let p = project_trial(model, trial)?;
            out.recon.push(
                decoders
                    .per_subject
                    .iter()
                    .zip(&p.per_subject)
                    .map(|(d, z)| d.reconstruct(z.as_ref()))
                    .collect::<Result<Vec<_>, _>>()?,
            );
            out.recon_avg.push(decoders.average.reconstruct(p.shared_average.as_ref())?);
            out.stimulus.push(trial.feature.clone());
            out.z.push(p.per_subject);
        }
        Ok(out)
    }

    pub fn n_trials(&self) -> usize {
        self.z.len()
    }

    pub fn n_subjects(&self) -> usize {
        self.z.first().map(|t| t.len()).unwrap_or(0)
    }

    pub fn n_components(&self) -> usize {
        self.z
            .first()
            .and_then(|t| t.first())
            .map(|m| m.ncols())
            .unwrap_or(0)
    }

    pub fn trial_len(&self, trial: usize) -> usize {
        self.stimulus[trial].len()
    }

    /// Cuts the test set into windows of `window` samples. Windows no longer
    /// than a trial stay inside it; longer windows are made of whole
    /// consecutive trials. Incomplete remainders are dropped.
    pub fn windows(&self, window: usize) -> Result<Vec<Window>, MetricsError> {
        let lens: Vec<usize> = (0..self.n_trials()).map(|t| self.trial_len(t)).collect();
        make_windows(&lens, window)
    }

    /// ISC of every component plus SC per subject and SC_avg on one window,
    /// with trial `i` of subject `k` read from trial `perm_eeg[k][i]` and the
    /// stimulus of slot `i` from trial `perm_stim[i]`. `None` means
    /// unpermuted.
    pub fn window_metrics(
        &self,
        window: &Window,
        perm_eeg: Option<&[Vec<usize>]>,
        perm_stim: Option<&[usize]>,
    ) -> Result<WindowMetrics, MetricsError> {
        let k = self.n_subjects();
        let q = self.n_components();
        let eeg_trial = |s: usize, slot: usize| perm_eeg.map(|p| p[s][slot]).unwrap_or(slot);
        let stim_trial = |slot: usize| perm_stim.map(|p| p[slot]).unwrap_or(slot);
        let gather = |f: &dyn Fn(usize, usize, usize) -> f64| -> Vec<f64> {
            let mut v = Vec::with_capacity(window.len());
            for seg in &window.segments {
                for t in seg.start..seg.start + seg.len {
                    v.push(f(seg.trial, t, 0));
                }
            }
            v
        };
        let mut degenerate = false;
        let mut isc = Vec::with_capacity(q);
        for c in 0..q {
            let signals: Vec<Vec<f64>> = (0..k)
                .map(|s| gather(&|slot, t, _| self.z[eeg_trial(s, slot)][s][(t, c)]))
                .collect();
            let r = mean_pairwise(&signals)?;
            degenerate |= r.degenerate;
            isc.push(r.value);
        }
        let y = gather(&|slot, t, _| self.stimulus[stim_trial(slot)][t]);
        let mut sc = Vec::with_capacity(k);
        for s in 0..k {
            let rec = gather(&|slot, t, _| self.recon[eeg_trial(s, slot)][s][t]);
            let r = pearson_centered(&y, &rec)?;
            degenerate |= r.degenerate;
            sc.push(r.value);
        }
        // the averaged subspace only exists for aligned subjects
        let avg_trial = |slot: usize| eeg_trial(0, slot);
        let rec = gather(&|slot, t, _| self.recon_avg[avg_trial(slot)][t]);
        let r = pearson_centered(&y, &rec)?;
        degenerate |= r.degenerate;
        Ok(WindowMetrics {
            isc,
            sc,
            sc_avg: r.value,
            degenerate,
        })
    }
}

/// A contiguous piece of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub trial: usize,
    pub start: usize,
    pub len: usize,
}

/// One evaluation window; its segments are concatenated in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub segments: Vec<Segment>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.segments.iter().map(|s| s.len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub(crate) fn make_windows(lens: &[usize], window: usize) -> Result<Vec<Window>, MetricsError> {
    if lens.is_empty() {
        return Err(MetricsError::TooFew {
            what: "test trials",
            required: 1,
            got: 0,
        });
    }
    if window < 2 || window > lens.iter().sum() {
        return Err(MetricsError::InvalidWindow { window });
    }
    let mut out = Vec::new();
    if lens.iter().all(|&l| window <= l) {
        for (trial, &l) in lens.iter().enumerate() {
            for w in 0..l / window {
                out.push(Window {
                    segments: vec![Segment {
                        trial,
                        start: w * window,
                        len: window,
                    }],
                });
            }
        }
    } else {
        let mut current = Vec::new();
        let mut acc = 0;
        for (trial, &l) in lens.iter().enumerate() {
            current.push(Segment { trial, start: 0, len: l });
            acc += l;
            if acc >= window {
                out.push(Window {
                    segments: std::mem::take(&mut current),
                });
                acc = 0;
            }
        }
    }
    if out.is_empty() {
        return Err(MetricsError::InvalidWindow { window });
    }
    Ok(out)
}

/// Metrics of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowMetrics {
    /// ISC per component.
    pub isc: Vec<f64>,
    /// SC per subject.
    pub sc: Vec<f64>,
    pub sc_avg: f64,
    /// Some correlation had a zero-norm input and was reported as 0.
    pub degenerate: bool,
}

/// Names one scalar metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricTag {
    Isc(usize),
    Sc(usize),
    ScAvg,
}

impl MetricTag {
    pub fn name(&self) -> &'static str {
        match self {
            MetricTag::Isc(_) => "isc",
            MetricTag::Sc(_) => "sc",
            MetricTag::ScAvg => "sc_avg",
        }
    }

    pub fn index(&self) -> usize {
        match *self {
            MetricTag::Isc(q) => q,
            MetricTag::Sc(k) => k,
            MetricTag::ScAvg => 0,
        }
    }
}

/// 5%-level thresholds attached to a report.
#[derive(Debug, Clone, PartialEq)]
pub struct Thresholds {
    /// Per component.
    pub isc: Vec<f64>,
    /// Shared by all subjects.
    pub sc: f64,
    pub sc_avg: f64,
}

impl Thresholds {
    pub fn get(&self, tag: MetricTag) -> Option<f64> {
        match tag {
            MetricTag::Isc(q) => self.isc.get(q).copied(),
            MetricTag::Sc(_) => Some(self.sc),
            MetricTag::ScAvg => Some(self.sc_avg),
        }
    }
}

/// Windowed test-set metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub windows: Vec<WindowMetrics>,
    pub window_length: usize,
    pub thresholds: Option<Thresholds>,
}

impl MetricsReport {
    pub fn value(&self, window: usize, tag: MetricTag) -> f64 {
        let w = &self.windows[window];
        match tag {
            MetricTag::Isc(q) => w.isc[q],
            MetricTag::Sc(k) => w.sc[k],
            MetricTag::ScAvg => w.sc_avg,
        }
    }

    /// All metric tags present in the report, in output order.
    pub fn tags(&self) -> Vec<MetricTag> {
        let Some(w) = self.windows.first() else {
            return Vec::new();
        };
        (0..w.isc.len())
            .map(MetricTag::Isc)
            .chain((0..w.sc.len()).map(MetricTag::Sc))
            .chain(std::iter::once(MetricTag::ScAvg))
            .collect()
    }

    /// Mean and (population) standard deviation over windows.
    pub fn summary(&self, tag: MetricTag) -> (f64, f64) {
        let vals: Vec<f64> = (0..self.windows.len()).map(|w| self.value(w, tag)).collect();
        mean_std(&vals)
    }

    pub fn mean(&self, tag: MetricTag) -> f64 {
        self.summary(tag).0
    }
}

pub fn mean_std(vals: &[f64]) -> (f64, f64) {
    if vals.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Projects the test trials, reconstructs the stimulus and evaluates every
/// metric on consecutive non-overlapping windows.
pub fn windowed_eval(
    model: &GroupModel,
    test: &[&Trial],
    window_length: usize,
    decoders: &DecoderSet,
) -> Result<MetricsReport, MetricsError> {
    let proj = TestProjection::new(model, decoders, test)?;
    evaluate_projection(&proj, window_length)
}

pub fn evaluate_projection(proj: &TestProjection, window_length: usize) -> Result<MetricsReport, MetricsError> {
    let windows = proj
        .windows(window_length)?
        .iter()
        .map(|w| proj.window_metrics(w, None, None))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MetricsReport {
        windows,
        window_length,
        thresholds: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    }

    #[test]
    fn pearson_basics() {
        let x = [1.0, 2.0, -0.5, 3.0];
        assert!((pearson(&x, &x).unwrap().value - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap().value + 1.0).abs() < 1e-15);
        let r = pearson(&[1.0, 0.0, -1.0], &[0.0, 1.0, -1.0]).unwrap();
        assert!((r.value - 0.5).abs() < 1e-15);
        let z = pearson(&[0.0, 0.0], &[1.0, 2.0]).unwrap();
        assert_eq!(z, Correlation { value: 0.0, degenerate: true });
        assert!(pearson(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn isc_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = randn_vec(&mut rng, 200);
        assert!((mean_pairwise(&[a.clone(), a.clone(), a.clone()]).unwrap().value - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((mean_pairwise(&[a.clone(), neg]).unwrap().value + 1.0).abs() < 1e-12);

        // pairwise correlations (1, 0, 0): two copies of u and an orthogonal v
        let u = vec![1.0, -1.0, 1.0, -1.0];
        let v = vec![1.0, 1.0, -1.0, -1.0];
        let r = mean_pairwise(&[u.clone(), u, v]).unwrap();
        assert!((r.value - 1.0 / 3.0).abs() < 1e-15);
        assert!(mean_pairwise(&[a]).is_err());
    }

    #[test]
    fn isc_invariances() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sigs: Vec<Vec<f64>> = (0..4).map(|_| randn_vec(&mut rng, 100)).collect();
        let base = mean_pairwise(&sigs).unwrap().value;
        let scaled: Vec<Vec<f64>> = sigs
            .iter()
            .enumerate()
            .map(|(i, s)| s.iter().map(|v| v * (i as f64 + 0.5) * 3.0).collect())
            .collect();
        assert!((mean_pairwise(&scaled).unwrap().value - base).abs() < 1e-12);
        let mut perm = sigs.clone();
        perm.reverse();
        perm.swap(0, 2);
        assert!((mean_pairwise(&perm).unwrap().value - base).abs() < 1e-12);
    }

    #[test]
    fn decoder_identity_and_orthogonality() {
        let y = vec![1.0, -2.0, 0.5, 0.25, -1.0];
        let z = Mat::from_fn(5, 1, |i, _| y[i]);
        let d = fit_stimulus_decoder(z.as_ref(), &y, 1).unwrap();
        assert!((d.weights[0] - 1.0).abs() < 1e-12);
        let rec = d.reconstruct(z.as_ref()).unwrap();
        for (a, b) in rec.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }

        let z = Mat::from_fn(4, 1, |i, _| [1.0, 1.0, -1.0, -1.0][i]);
        let y = [1.0, -1.0, 1.0, -1.0];
        let d = fit_stimulus_decoder(z.as_ref(), &y, 1).unwrap();
        assert!(d.weights[0].abs() < 1e-15);
    }

    #[test]
    fn decoder_recovers_planted_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = Mat::from_fn(200, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let d_star = [0.7, -1.2, 0.3, 2.0, 0.0, -0.4];
        let spec = LagSpec::future(3).unwrap();
        let zl = lag_components(z.as_ref(), spec).unwrap();
        assert_eq!(zl.ncols(), 6);
        let y: Vec<f64> = (0..200)
            .map(|t| (0..6).map(|j| zl[(t, j)] * d_star[j]).sum())
            .collect();
        let d = fit_stimulus_decoder(z.as_ref(), &y, 3).unwrap();
        for (a, b) in d.weights.iter().zip(d_star) {
            assert!((a - b).abs() < 1e-8);
        }
        let sc = stimulus_correlation(&d, z.as_ref(), &y).unwrap();
        assert!((sc.value - 1.0).abs() < 1e-10);

        // 10% noise still decodes well
        let noisy: Vec<f64> = y.iter().map(|v| v + 0.1 * rng.sample::<f64, _>(StandardNormal) * 1.5).collect();
        let d = fit_stimulus_decoder(z.as_ref(), &noisy, 3).unwrap();
        assert!(stimulus_correlation(&d, z.as_ref(), &noisy).unwrap().value >= 0.9);

        // rescaling the test stimulus leaves SC unchanged
        let big: Vec<f64> = y.iter().map(|v| 7.5 * v).collect();
        let a = stimulus_correlation(&d, z.as_ref(), &y).unwrap().value;
        let b = stimulus_correlation(&d, z.as_ref(), &big).unwrap().value;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn singular_gram_falls_back_to_ridge() {
        // two identical components make the normal equations singular
        let col: Vec<f64> = (0..30).map(|t| (t as f64 * 0.7).sin()).collect();
        let z = Mat::from_fn(30, 2, |i, _| col[i]);
        let d = fit_stimulus_decoder(z.as_ref(), &col, 1).unwrap();
        assert!(d.weights.iter().all(|w| w.is_finite()));
        assert!((d.weights[0] + d.weights[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn windows_inside_and_across_trials() {
        let w = make_windows(&[10, 10, 10], 4).unwrap();
        assert_eq!(w.len(), 6);
        assert_eq!(w[2].segments, vec![Segment { trial: 1, start: 0, len: 4 }]);
        let w = make_windows(&[10, 10, 10], 30).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].len(), 30);
        let w = make_windows(&[10, 10, 10, 10, 10], 20).unwrap();
        assert_eq!(w.len(), 2);
        assert!(make_windows(&[10], 11).is_err());
        assert!(make_windows(&[], 1).is_err());
    }
}
