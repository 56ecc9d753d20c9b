use std::collections::BTreeSet;

use gccakit::harness::{generate_synthetic, run_sweep, MethodSpec, SweepConfig, SweepVariable, SynthSpec};
use gccakit::metrics::MetricTag;
use gccakit::{split_trials, LagSpec, Recording};

fn recording(channels: usize, trials: usize, seed: u64) -> Recording {
    generate_synthetic(&SynthSpec {
        n_subjects: 5,
        n_channels: channels,
        n_trials: trials,
        trial_length: 160,
        snr_db: -5.0,
        seed,
        ..SynthSpec::default()
    })
    .unwrap()
}

fn methods(labels: &[&str]) -> Vec<MethodSpec> {
    labels.iter().map(|l| MethodSpec::parse(l).unwrap()).collect()
}

fn small_config() -> SweepConfig {
    SweepConfig {
        grid: vec![6],
        train_trials: 6,
        n_runs: 3,
        methods: methods(&["gcca_reg", "sigcca"]),
        mu_grid: vec![0.0, 0.1],
        gamma_grid: vec![0.0, 1.0],
        q: 2,
        eeg_lags: LagSpec::centered(3).unwrap(),
        stim_lags: LagSpec::past(4).unwrap(),
        n_perms_per_run: 0,
        seed: 31,
        ..SweepConfig::default()
    }
}

#[test]
fn splits_partition_the_trials() {
    for seed in 0..20 {
        let s = split_trials(52, 40, 0.25, seed).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (40, 3, 9));
        let all: BTreeSet<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        assert_eq!(all, (0..52).collect());
    }
    assert_eq!(split_trials(52, 40, 0.25, 9).unwrap(), split_trials(52, 40, 0.25, 9).unwrap());
    assert!(split_trials(10, 9, 0.25, 0).is_err());
    assert!(split_trials(10, 4, 1.0, 0).is_err());
}

#[test]
fn method_list_does_not_change_the_draws() {
    let rec = recording(4, 14, 1);
    let both = run_sweep(&rec, &small_config()).unwrap();
    let one = run_sweep(
        &rec,
        &SweepConfig {
            methods: methods(&["sigcca"]),
            ..small_config()
        },
    )
    .unwrap();
    for (a, b) in both.runs.iter().zip(&one.runs) {
        assert_eq!(a.split, b.split);
        assert_eq!(a.subjects, b.subjects);
        assert_eq!(a.channels, b.channels);
        assert_eq!(
            format!("{:?}", a.method("sigcca").unwrap().report),
            format!("{:?}", b.method("sigcca").unwrap().report)
        );
    }
}

#[test]
fn single_point_sweep_has_one_row_set_per_method() {
    let rec = recording(4, 14, 2);
    let cfg = SweepConfig {
        n_runs: 1,
        ..small_config()
    };
    let res = run_sweep(&rec, &cfg).unwrap();
    assert_eq!(res.runs.len(), 1);
    let run = &res.runs[0];
    assert_eq!(run.methods.len(), 2);
    // 2 ISC components, 5 per-subject SCs and SC_avg per window, plus the
    // training ISC of each method
    let windows = run.split.test.len();
    let rows = res.rows();
    assert_eq!(rows.len(), 2 * (windows * (2 + 5 + 1) + 1));
    assert!(rows.iter().all(|r| r.grid_value == 6 && r.run == 0 && r.threshold.is_none()));
    for label in ["gcca_reg", "sigcca"] {
        assert_eq!(rows.iter().filter(|r| r.method == label).count(), windows * 8 + 1);
        let train: Vec<_> = rows.iter().filter(|r| r.method == label && r.window.is_none()).collect();
        assert_eq!(train.len(), 1);
        assert_eq!(train[0].metric, "isc_train");
    }
}

#[test]
fn sweep_is_identical_across_thread_counts() {
    let rec = recording(4, 14, 3);
    let cfg = SweepConfig {
        grid: vec![4, 6],
        n_perms_per_run: 40,
        ..small_config()
    };
    let in_pool = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let res = pool.install(|| run_sweep(&rec, &cfg)).unwrap();
        format!("{:?} {:?}", res.rows(), res.nulls)
    };
    assert_eq!(in_pool(1), in_pool(3));
}

#[test]
fn overfitting_gap_grows_with_channels() {
    let rec = generate_synthetic(&SynthSpec {
        n_subjects: 5,
        n_channels: 16,
        n_trials: 16,
        trial_length: 160,
        seed: 4,
        ..SynthSpec::default()
    })
    .unwrap();
    let cfg = SweepConfig {
        variable: SweepVariable::Channels,
        grid: vec![4, 8, 16],
        train_trials: 4,
        n_runs: 50,
        methods: methods(&["gcca_noreg"]),
        q: 1,
        eeg_lags: LagSpec::centered(3).unwrap(),
        stim_lags: LagSpec::past(4).unwrap(),
        n_perms_per_run: 0,
        seed: 5,
        ..SweepConfig::default()
    };
    let res = run_sweep(&rec, &cfg).unwrap();
    let gaps: Vec<f64> = (0..3)
        .map(|gi| {
            let gap: f64 = res
                .runs_at(gi)
                .map(|r| {
                    let m = &r.methods[0];
                    m.train_isc - m.report.mean(MetricTag::Isc(0))
                })
                .sum();
            gap / cfg.n_runs as f64
        })
        .collect();
    assert!(gaps[0] < gaps[1] && gaps[1] < gaps[2], "{gaps:?}");
}
