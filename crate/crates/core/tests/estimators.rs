use gccakit::datamodel::{compute_correlations, CorrelationSet, LagMatrix, LagSpec, Trial};
use gccakit::estimators::{corrca_fit, gcca_fit, project, sicorrca_fit, sigcca_fit, GroupModel};
use gccakit::harness::{generate_synthetic, ledoit_wolf_mu, select_hyperparameters, default_gamma_grid, SynthSpec};
use gccakit::metrics::{evaluate_projection, fit_decoders, pearson, MetricTag, TestProjection};
use gccakit::{split_trials, Mat, Method};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn view(x: &DMatrix<f64>) -> LagMatrix {
    let m = Mat::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)]);
    LagMatrix::from_parts(m, LagSpec::new(0, 0).unwrap(), x.ncols()).unwrap()
}

fn correlations(xs: &[DMatrix<f64>], y: Option<&DMatrix<f64>>) -> CorrelationSet {
    let views: Vec<LagMatrix> = xs.iter().map(view).collect();
    compute_correlations(&views, y.map(view).as_ref()).unwrap()
}

fn stacked(model: &GroupModel) -> DMatrix<f64> {
    let (m, q) = (model.block_dim(), model.q());
    DMatrix::from_fn(model.n_subjects() * m, q, |i, j| model.decoders[i / m][(i % m, j)])
}

/// Sine of the largest principal angle between two column spaces.
fn max_principal_sine(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = a.clone().qr().q();
    let qb = b.clone().qr().q();
    let smallest_cos = (qa.transpose() * qb)
        .singular_values()
        .iter()
        .fold(f64::INFINITY, |m, v| m.min(*v));
    (1.0 - smallest_cos.min(1.0).powi(2)).sqrt()
}

#[test]
fn private_component_has_unit_eigenvalue() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (t, k, m) = (300, 4, 3);
    // all columns mutually orthogonal: nothing is shared between subjects
    let basis = randn(&mut rng, t, k * m).qr().q();
    let xs: Vec<DMatrix<f64>> = (0..k)
        .map(|s| basis.columns(s * m, m) * (randn(&mut rng, m, m) + DMatrix::identity(m, m) * 3.0))
        .collect();
    let model = gcca_fit(&correlations(&xs, None), 0.0, 2).unwrap();
    for lam in &model.eigenvalues {
        assert!((lam - 1.0).abs() < 1e-9, "{lam}");
    }
}

#[test]
fn two_subject_components_reach_the_canonical_correlation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (t, m) = (400, 5);
    let x1 = randn(&mut rng, t, m);
    let x2 = &x1 * randn(&mut rng, m, m) * 0.4 + randn(&mut rng, t, m);
    let rho1 = (x1.clone().qr().q().transpose() * x2.clone().qr().q())
        .singular_values()
        .max();
    let model = gcca_fit(&correlations(&[x1.clone(), x2.clone()], None), 0.0, 1).unwrap();
    assert!((model.eigenvalues[0] - 1.0 / (1.0 + rho1)).abs() < 1e-9);
    let p = project(&model, &[view(&x1), view(&x2)]).unwrap();
    let z1: Vec<f64> = (0..t).map(|i| p.per_subject[0][(i, 0)]).collect();
    let z2: Vec<f64> = (0..t).map(|i| p.per_subject[1][(i, 0)]).collect();
    assert!((pearson(&z1, &z2).unwrap().value - rho1).abs() < 1e-9);
}

#[test]
fn identical_subjects_agree_across_estimators() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (t, k, m, p) = (250, 4, 4, 3);
    let x = randn(&mut rng, t, m);
    let y = &x * randn(&mut rng, m, p) + randn(&mut rng, t, p);
    let xs = vec![x; k];
    let corr = correlations(&xs, Some(&y));
    let g = gcca_fit(&corr, 0.0, m).unwrap();
    let c = corrca_fit(&corr, 0.0, m).unwrap();
    for (a, b) in g.eigenvalues.iter().zip(&c.eigenvalues) {
        assert!((a - 1.0 / k as f64).abs() < 1e-9);
        assert!((a - b).abs() < 1e-9);
    }
    for gamma in [0.3, 2.0] {
        let s = sigcca_fit(&corr, 0.0, gamma, 3).unwrap();
        let sc = sicorrca_fit(&corr, 0.0, gamma, 3).unwrap();
        for (a, b) in s.eigenvalues.iter().zip(&sc.eigenvalues) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }
}

#[test]
fn tiny_gamma_stays_close_to_gcca() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (t, k, m, p, q) = (400, 4, 5, 3, 3);
    let latent = randn(&mut rng, t, 3);
    let xs: Vec<DMatrix<f64>> = (0..k)
        .map(|_| &latent * randn(&mut rng, 3, m) + randn(&mut rng, t, m))
        .collect();
    let y = latent.columns(0, 1) * randn(&mut rng, 1, p) + randn(&mut rng, t, p);
    let corr = correlations(&xs, Some(&y));
    let base = gcca_fit(&corr, 0.0, q).unwrap();
    let si = sigcca_fit(&corr, 0.0, 1e-8, q).unwrap();
    let sine = max_principal_sine(&stacked(&base), &stacked(&si));
    assert!(sine <= 1e-3, "largest principal angle sine {sine:e}");
}

#[test]
fn validated_gamma_raises_stimulus_correlation() {
    let rec = generate_synthetic(&SynthSpec {
        n_channels: 8,
        n_trials: 32,
        seed: 5,
        ..SynthSpec::default()
    })
    .unwrap();
    let trials: Vec<Trial> = (0..rec.n_trials())
        .map(|t| Trial::from_recording(&rec, t, LagSpec::centered(3).unwrap(), Some(LagSpec::past(11).unwrap())).unwrap())
        .collect();
    let (mut sc_sel, mut sc_zero) = (0.0, 0.0);
    for run in 0..4 {
        let split = split_trials(rec.n_trials(), 10, 0.25, 100 + run).unwrap();
        let pick = |idx: &[usize]| idx.iter().map(|&i| &trials[i]).collect::<Vec<_>>();
        let (train, val, test) = (pick(&split.train), pick(&split.val), pick(&split.test));
        let corr = CorrelationSet::sum(train.iter().map(|t| &t.corr)).unwrap();
        let mu = ledoit_wolf_mu(&train).unwrap();
        let sel = select_hyperparameters(&corr, &val, Method::SiGcca, &[], &default_gamma_grid(), 1, mu).unwrap();
        for (gamma, acc) in [(sel.gamma, &mut sc_sel), (0.0, &mut sc_zero)] {
            let model = sigcca_fit(&corr, mu, gamma, 1).unwrap();
            let dec = fit_decoders(&model, &train, 3).unwrap();
            let proj = TestProjection::new(&model, &dec, &test).unwrap();
            let report = evaluate_projection(&proj, rec.trial_len(0)).unwrap();
            let k = rec.n_subjects();
            *acc += (0..k).map(|s| report.mean(MetricTag::Sc(s))).sum::<f64>() / k as f64;
        }
    }
    assert!(sc_sel > sc_zero, "SC at validated gamma {sc_sel} vs gamma = 0 {sc_zero}");
}
