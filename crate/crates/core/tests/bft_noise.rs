mod common;

use covkernel::featuremap::{Axes, CouplingMap, FeatureMapSpec};
use covkernel::kernel::{average_diagonal, calibrate, CalibrationConfig, KernelConfig, KernelEstimator, Shots};
use covkernel::seed;
use covkernel::sim::NoiseModel;
use std::f64::consts::TAU;
use rand::Rng;

fn analytic_d(n: usize, p: f64, threshold: f64) -> usize {
    (0..=n).find(|&d| common::binomial_cdf(n, p, d) >= threshold).unwrap()
}

#[test]
fn diagonal_matches_binomial_cdf() {
    let noise = NoiseModel::readout(0.02, 0.0).unwrap();
    for n in [4, 8, 12] {
        let spec = FeatureMapSpec::on_coupling(&CouplingMap::line(n), n, Axes::ZYX, 1.0).unwrap();
        let mut rng = seed::rng(n as u64, &[]);
        let lambda: Vec<f64> = (0..spec.n_params()).map(|_| rng.random_range(0.0..TAU)).collect();
        let xs: Vec<Vec<f64>> = (0..4).map(|_| (0..n).map(|_| rng.random_range(0.0..TAU)).collect()).collect();
        let est = KernelEstimator::new(&spec, &lambda, noise).unwrap();
        for d in 0..=n {
            let exact = est.assemble_matrix(&xs, &KernelConfig::exact(d)).unwrap();
            let oracle = common::binomial_cdf(n, 0.02, d);
            assert!((average_diagonal(&exact.raw) - oracle).abs() < 1e-12, "n={n} d={d}");
        }
        for d in [0, 1] {
            let cfg = KernelConfig {
                tolerance: d,
                shots: Shots::Sampled(100_000),
                estimate_diagonal: true,
                master_seed: 9,
            };
            let sampled = est.assemble_matrix(&xs, &cfg).unwrap();
            assert!((average_diagonal(&sampled.raw) - common::binomial_cdf(n, 0.02, d)).abs() < 0.01);
        }
    }
}

#[test]
fn calibration_recommends_analytic_tolerance() {
    let report = calibrate(&CalibrationConfig {
        ns: vec![4, 8, 12],
        noise: NoiseModel::readout(0.02, 0.0).unwrap(),
        shots: Shots::Exact,
        thresholds: vec![0.9, 0.99],
        samples: 4,
        angle_scale: 1.0,
        master_seed: 1,
    })
    .unwrap();
    for n in [4, 8, 12] {
        for t in [0.9, 0.99] {
            let r = report.recommended(n, t).unwrap();
            assert!(r.reachable);
            assert_eq!(r.recommended_d, analytic_d(n, 0.02, t), "n={n} t={t}");
        }
    }
}

#[test]
fn tolerance_raises_noisy_off_diagonals_monotonically() {
    let n = 6;
    let spec = FeatureMapSpec::on_coupling(&CouplingMap::line(n), n, Axes::ZYX, 1.0).unwrap();
    let mut rng = seed::rng(77, &[]);
    let lambda: Vec<f64> = (0..spec.n_params()).map(|_| rng.random_range(0.0..TAU)).collect();
    let xs: Vec<Vec<f64>> = (0..5).map(|_| (0..n).map(|_| rng.random_range(0.0..TAU)).collect()).collect();
    let est = KernelEstimator::new(&spec, &lambda, NoiseModel::readout(0.05, 0.01).unwrap()).unwrap();
    let profiles = est.profile_matrix(&xs, &KernelConfig::exact(0)).unwrap();
    for d in 0..n {
        let lo = profiles.at(d);
        let hi = profiles.at(d + 1);
        assert!(lo.iter().zip(hi.iter()).all(|(a, b)| *a <= *b + 1e-15));
    }
    assert!(profiles.at(n).iter().all(|&v| v == 1.0));
}
