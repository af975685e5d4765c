//! Ridge and boosted-tree fitters.

use leakgain::models::{fit_gbt, fit_ridge, ridge_residual, Dataset, GbtParams};
use leakgain::rng::CounterRng;
use proptest::prelude::*;
use rand::Rng;

fn random_problem(n: usize, p: usize, seed: u64) -> Dataset {
    let mut rng = CounterRng::new(seed, &[n as u64, p as u64]);
    let x: Vec<f64> = (0..n * p).map(|_| rng.random_range(-3.0..3.0)).collect();
    let y = (0..n)
        .map(|r| {
            let signal: f64 = (0..p).map(|f| x[r * p + f] * (f as f64 - 1.5)).sum();
            signal + rng.random_range(-1.0..1.0) + 4.0
        })
        .collect();
    Dataset { x, y, n_features: p }
}

fn exact_params() -> GbtParams {
    GbtParams {
        subsample: 1.0,
        colsample_bytree: 1.0,
        ..GbtParams::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ridge_solves_its_normal_equations(n in 5usize..300, p in 1usize..10, alpha in 0.01f64..20.0, seed in any::<u64>()) {
        let data = random_problem(n, p, seed);
        let model = fit_ridge(&data, alpha).unwrap();
        prop_assert!(ridge_residual(&data, alpha, &model) < 1e-8);
    }
}

#[test]
fn gbt_recovers_a_noiseless_step() {
    let n = 1000;
    let mut rng = CounterRng::new(1, &[]);
    let mut x = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    for r in 0..n {
        let level = (r % 200) as f64 / 200.0;
        x.push(level);
        x.push(rng.random_range(-1.0..1.0));
        y.push(if level > 0.37 { 2.0 } else { -1.0 });
    }
    let data = Dataset { x, y, n_features: 2 };
    let model = fit_gbt(&data, &exact_params(), 3).unwrap();
    let mse = (0..n)
        .map(|r| (model.predict(data.row(r)) - data.y[r]).powi(2))
        .sum::<f64>()
        / n as f64;
    assert!(mse < 1e-3, "training mse {mse}");
}

#[test]
fn gbt_is_invariant_to_positive_feature_scaling() {
    let data = random_problem(600, 4, 8);
    let mut scaled = data.clone();
    for r in 0..600 {
        scaled.x[r * 4 + 1] *= 37.5;
        scaled.x[r * 4 + 3] *= 0.001;
    }
    let params = GbtParams {
        n_estimators: 40,
        ..GbtParams::default()
    };
    let a = fit_gbt(&data, &params, 5).unwrap();
    let b = fit_gbt(&scaled, &params, 5).unwrap();
    for r in 0..600 {
        assert_eq!(a.predict(data.row(r)).to_bits(), b.predict(scaled.row(r)).to_bits());
    }
}

#[test]
fn gbt_draws_depend_only_on_the_seed() {
    let data = random_problem(400, 5, 4);
    let params = GbtParams {
        n_estimators: 20,
        ..GbtParams::default()
    };
    let a = fit_gbt(&data, &params, 10).unwrap();
    assert_eq!(a, fit_gbt(&data, &params, 10).unwrap());
    assert_ne!(a, fit_gbt(&data, &params, 11).unwrap());
}

#[test]
fn gbt_beats_the_mean_on_a_smooth_target() {
    let data = random_problem(2000, 3, 21);
    let model = fit_gbt(&data, &GbtParams::default(), 1).unwrap();
    let mean = data.y.iter().sum::<f64>() / 2000.0;
    let (mut sse, mut sst) = (0.0, 0.0);
    for r in 0..2000 {
        sse += (model.predict(data.row(r)) - data.y[r]).powi(2);
        sst += (mean - data.y[r]).powi(2);
    }
    assert!(sse < 0.5 * sst, "r2 too low: {}", 1.0 - sse / sst);
}

#[test]
fn gbt_with_enough_bins_splits_on_exact_values() {
    // 1000 distinct values and a step that falls between two of them.
    let n = 1000;
    let x: Vec<f64> = (0..n).map(|r| (r as f64 * 0.7919).fract()).collect();
    let y: Vec<f64> = x.iter().map(|&v| if v > 0.4321 { 1.0 } else { 0.0 }).collect();
    let data = Dataset { x, y, n_features: 1 };
    let params = GbtParams {
        max_bin: n,
        ..exact_params()
    };
    let model = fit_gbt(&data, &params, 0).unwrap();
    let worst = (0..n)
        .map(|r| (model.predict(data.row(r)) - data.y[r]).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-3, "max training error {worst}");
}
