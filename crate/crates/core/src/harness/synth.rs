//! Synthetic multi-subject recordings with stimulus-following shared
//! components.

use faer::Mat;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::datamodel::{DataError, Recording};
use crate::stats::mix_seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Parameters of [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_subjects: usize,
    pub n_channels: usize,
    pub n_trials: usize,
    /// Samples per trial.
    pub trial_length: usize,
    pub sample_rate: f64,
    /// Number of latent components shared across subjects. Component 0
    /// follows the stimulus, the others are stimulus-independent.
    pub n_shared: usize,
    /// How many subjects carry each shared component; missing entries mean
    /// all subjects.
    pub subjects_per_component: Vec<usize>,
    /// Relative amplitude of each shared component; missing entries mean 1.
    pub component_gains: Vec<f64>,
    /// Length of the causal filter mapping the stimulus onto component 0.
    pub fir_length: usize,
    /// Cut-off of the low-pass latents and stimulus, in Hz.
    pub cutoff_hz: f64,
    /// Power ratio of the summed shared signal to the noise, per subject and
    /// trial.
    pub snr_db: f64,
    /// Per-subject response delays are drawn uniformly from `0..=max_delay`.
    pub max_delay: usize,
    /// Strength of the random spatial mixing added to identity in the noise
    /// model; 0 gives spatially white noise.
    pub noise_mixing: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_subjects: 10,
            n_channels: 16,
            n_trials: 52,
            trial_length: 480,
            sample_rate: 8.0,
            n_shared: 1,
            subjects_per_component: Vec::new(),
            component_gains: Vec::new(),
            fir_length: 6,
            cutoff_hz: 3.0,
            snr_db: -15.0,
            max_delay: 1,
            noise_mixing: 0.5,
            seed: 0,
        }
    }
}

const LOWPASS_TAPS: usize = 31;

impl SynthSpec {
    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Invalid(m));
        if self.n_subjects == 0 || self.n_channels == 0 || self.n_trials == 0 {
            return bad("subjects, channels and trials must be positive".into());
        }
        if self.trial_length < 2 {
            return bad(format!("trial length {}", self.trial_length));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return bad(format!("sample rate {}", self.sample_rate));
        }
        if !(self.cutoff_hz > 0.0 && self.cutoff_hz < self.sample_rate / 2.0) {
            return bad(format!("cut-off {} Hz at {} Hz sampling", self.cutoff_hz, self.sample_rate));
        }
        if !self.snr_db.is_finite() {
            return bad("snr must be finite".into());
        }
        if !(self.noise_mixing >= 0.0 && self.noise_mixing.is_finite()) {
            return bad(format!("noise mixing {}", self.noise_mixing));
        }
        if self.fir_length == 0 {
            return bad("fir length must be at least 1".into());
        }
        if self.max_delay + 1 >= self.trial_length {
            return bad(format!(
                "delay {} does not fit a {}-sample trial",
                self.max_delay, self.trial_length
            ));
        }
        for (i, &p) in self.subjects_per_component.iter().enumerate() {
            if p == 0 || p > self.n_subjects {
                return bad(format!(
                    "component {i} assigned to {p} of {} subjects",
                    self.n_subjects
                ));
            }
        }
        if self.component_gains.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return bad("component gains must be finite and non-negative".into());
        }
        Ok(())
    }
}

/// Hamming-windowed sinc low-pass with unit DC gain.
fn lowpass_taps(cutoff: f64) -> Vec<f64> {
    let mid = (LOWPASS_TAPS - 1) as f64 / 2.0;
    let mut h: Vec<f64> = (0..LOWPASS_TAPS)
        .map(|i| {
            let x = i as f64 - mid;
            let sinc = if x == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * std::f64::consts::PI * cutoff * x).sin() / (std::f64::consts::PI * x)
            };
            let w = 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (LOWPASS_TAPS - 1) as f64).cos();
            sinc * w
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

/// Causal convolution keeping the last `out_len` samples.
fn filter(x: &[f64], h: &[f64], out_len: usize) -> Vec<f64> {
    let offset = x.len() - out_len;
    (offset..x.len())
        .map(|t| {
            h.iter()
                .enumerate()
                .filter(|(j, _)| *j <= t)
                .map(|(j, c)| c * x[t - j])
                .sum()
        })
        .collect()
}

fn white(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut v = white(rng, n);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// Generates a seed-deterministic recording.
///
/// The stimulus feature is low-pass Gaussian noise. Shared component 0 is a
/// causal FIR filter of it, so a past-lag stimulus encoder can represent it
/// exactly; further shared components are independent low-pass noise. Each
/// component reaches its subjects through a random unit-norm spatial
/// pattern after a per-subject integer delay. Every subject adds noise
/// sources with the same low-pass spectrum, spatially mixed and scaled to
/// the requested SNR, and every trial is
/// centered and normalized to unit Frobenius norm.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Recording, SynthError> {
    spec.validate()?;
    let (k, c, t) = (spec.n_subjects, spec.n_channels, spec.trial_length);
    let mut setup = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, 0));

    let lowpass = lowpass_taps(spec.cutoff_hz / spec.sample_rate);
    let mut coupling: Vec<f64> = (0..spec.fir_length)
        .map(|j| setup.sample::<f64, _>(StandardNormal) * (-(j as f64) / 2.0).exp())
        .collect();
    let norm = coupling.iter().map(|v| v * v).sum::<f64>().sqrt();
    coupling.iter_mut().for_each(|v| *v /= norm);

    let carriers: Vec<Vec<usize>> = (0..spec.n_shared)
        .map(|i| {
            let p = spec.subjects_per_component.get(i).copied().unwrap_or(k);
            let mut s = sample(&mut setup, k, p).into_vec();
            s.sort_unstable();
            s
        })
        .collect();
    let gains: Vec<f64> = (0..spec.n_shared)
        .map(|i| spec.component_gains.get(i).copied().unwrap_or(1.0))
        .collect();
    let patterns: Vec<Vec<Vec<f64>>> = (0..k)
        .map(|_| (0..spec.n_shared).map(|_| unit_vector(&mut setup, c)).collect())
        .collect();
    let delays: Vec<usize> = (0..k).map(|_| setup.random_range(0..=spec.max_delay)).collect();
    let spread = spec.noise_mixing / (c as f64).sqrt();
    let mixing: Vec<Mat<f64>> = (0..k)
        .map(|_| {
            Mat::from_fn(c, c, |i, j| {
                let g: f64 = setup.sample(StandardNormal);
                spread * g + if i == j { 1.0 } else { 0.0 }
            })
        })
        .collect();

    let margin = LOWPASS_TAPS + spec.fir_length + spec.max_delay;
    let snr = 10f64.powf(spec.snr_db / 10.0);
    let mut subjects: Vec<Vec<Mat<f64>>> = vec![Vec::with_capacity(spec.n_trials); k];
    let mut stimulus = Vec::with_capacity(spec.n_trials);

    for trial in 0..spec.n_trials {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, 1 + trial as u64));
        let long = t + margin;
        let stim_long = filter(&white(&mut rng, long + LOWPASS_TAPS), &lowpass, long);
        let latents: Vec<Vec<f64>> = (0..spec.n_shared)
            .map(|i| {
                if i == 0 {
                    filter(&stim_long, &coupling, long)
                } else {
                    filter(&white(&mut rng, long + LOWPASS_TAPS), &lowpass, long)
                }
            })
            .collect();
        let latents: Vec<Vec<f64>> = latents
            .into_iter()
            .map(|l| {
                let sd = (l.iter().map(|v| v * v).sum::<f64>() / l.len() as f64).sqrt();
                l.into_iter().map(|v| v / sd).collect()
            })
            .collect();

        for s in 0..k {
            let mut signal = Mat::<f64>::zeros(c, t);
            for (i, latent) in latents.iter().enumerate() {
                if !carriers[i].contains(&s) || gains[i] == 0.0 {
                    continue;
                }
                let start = margin - delays[s];
                for tt in 0..t {
                    let v = gains[i] * latent[start + tt];
                    for ch in 0..c {
                        signal[(ch, tt)] += patterns[s][i][ch] * v;
                    }
                }
            }
            let mut raw = Mat::<f64>::zeros(c, t);
            for ch in 0..c {
                let src = filter(&white(&mut rng, t + LOWPASS_TAPS), &lowpass, t);
                for (tt, v) in src.into_iter().enumerate() {
                    raw[(ch, tt)] = v;
                }
            }
            let noise = &mixing[s] * &raw;
            let p_signal = crate::linalg::frobenius2(signal.as_ref());
            let p_noise = crate::linalg::frobenius2(noise.as_ref());
            let scale = if p_signal > 0.0 {
                (p_signal / (snr * p_noise)).sqrt()
            } else {
                1.0
            };
            let x = signal + scale * noise;
            subjects[s].push(crate::datamodel::normalize_trial(x.as_ref())?);
        }
        let y = Mat::from_fn(1, t, |_, tt| stim_long[margin + tt]);
        stimulus.push(crate::datamodel::normalize_trial(y.as_ref())?);
    }
    Ok(Recording::new(subjects, stimulus, spec.sample_rate)?)
}
