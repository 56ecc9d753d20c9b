use gccakit::datamodel::{build_lag_matrix, LagSpec};
use gccakit::metrics::{fit_stimulus_decoder, mean_pairwise, stimulus_correlation};
use gccakit::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// `y(t) = sum_l z(t + l) d_l`, zero beyond the end.
fn corr(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        xy += (a - mx) * (b - my);
        xx += (a - mx) * (a - mx);
        yy += (b - my) * (b - my);
    }
    xy / (xx * yy).sqrt()
}

fn planted(z: &Mat<f64>, d: &[f64], lags: usize) -> Vec<f64> {
    let zl = build_lag_matrix(z.transpose(), LagSpec::future(lags).unwrap())
        .unwrap()
        .into_data();
    (0..zl.nrows())
        .map(|t| (0..zl.ncols()).map(|j| zl[(t, j)] * d[j]).sum())
        .collect()
}

#[test]
fn exact_in_sample_fit_has_unit_correlation() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z = Mat::from_fn(300, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
    let d = [0.5, -1.0, 0.2, 0.7, 0.1, -0.3];
    let y = planted(&z, &d, 3);
    let dec = fit_stimulus_decoder(z.as_ref(), &y, 3).unwrap();
    let sc = stimulus_correlation(&dec, z.as_ref(), &y).unwrap();
    assert!((sc.value - 1.0).abs() < 1e-10, "{}", sc.value);
}

#[test]
fn planted_decoder_with_mild_noise_generalizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let z = Mat::from_fn(1000, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
    let d: Vec<f64> = noise(&mut rng, 9);
    let clean = planted(&z, &d, 3);
    let scale = (clean.iter().map(|v| v * v).sum::<f64>() / clean.len() as f64).sqrt();
    let y: Vec<f64> = clean
        .iter()
        .zip(noise(&mut rng, clean.len()))
        .map(|(c, n)| c + 0.1 * scale * n)
        .collect();
    let train = z.as_ref().subrows(0, 600);
    let test = z.as_ref().subrows(600, 400);
    let dec = fit_stimulus_decoder(train, &y[..600], 3).unwrap();
    let sc = stimulus_correlation(&dec, test, &y[600..]).unwrap();
    assert!(sc.value >= 0.9, "{}", sc.value);
}

#[test]
fn isc_matches_planted_correlation() {
    // z_k = sqrt(rho) s + sqrt(1 - rho) n_k has pairwise correlation rho in
    // expectation; the oracle averages direct pairwise correlations.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (k, t, rho) = (4, 2000, 0.3f64);
    let mut oracle = 0.0;
    let mut measured = 0.0;
    let draws = 20;
    for _ in 0..draws {
        let s = noise(&mut rng, t);
        let zs: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                noise(&mut rng, t)
                    .iter()
                    .zip(&s)
                    .map(|(n, s)| rho.sqrt() * s + (1.0 - rho).sqrt() * n)
                    .collect()
            })
            .collect();
        let mut pairs = 0.0;
        for a in 0..k {
            for b in a + 1..k {
                pairs += corr(&zs[a], &zs[b]);
            }
        }
        oracle += pairs / (k * (k - 1) / 2) as f64;
        measured += mean_pairwise(&zs).unwrap().value;
    }
    let (oracle, measured) = (oracle / draws as f64, measured / draws as f64);
    assert!((measured - rho).abs() < 0.05, "{measured}");
    assert!((measured - oracle).abs() < 1e-12, "{measured} vs {oracle}");
}
