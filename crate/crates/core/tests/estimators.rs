mod common;

use common::{ks_standard_normal, mean, variance};
use kinestim::{
    double_increments, infill_constant_sigma, infill_qv, infinite_horizon, limit_integral, simulate_trajectory,
    window_count, DiffusionClass, DoubleIncrements, IncrementScheme, ModelSpec, ObservationGrid, SimConfig,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rayon::prelude::*;

fn even(grid: &ObservationGrid, count: usize) -> DoubleIncrements {
    double_increments(grid, IncrementScheme::EvenGrid, count).unwrap()
}

fn assert_symmetric_psd(m: &DMatrix<f64>) -> Result<(), TestCaseError> {
    let scale = 1.0 + m.abs().max();
    prop_assert!((m - m.transpose()).abs().max() <= 1e-12 * scale);
    prop_assert!(m.clone().symmetric_eigenvalues().min() >= -1e-10 * scale);
    Ok(())
}

fn grid_2d() -> impl Strategy<Value = (Vec<f64>, f64)> {
    (prop::collection::vec(-10.0..10.0f64, 2 * 24), 0.01..0.5f64)
}

proptest! {
    #[test]
    fn estimates_are_symmetric_psd((xs, h) in grid_2d()) {
        let grid = ObservationGrid::new(2, xs, None, h, 0, "t").unwrap();
        let incs = even(&grid, 11);
        let horizon = 2.0 * h * 12.0;
        assert_symmetric_psd(&infill_constant_sigma(&incs, horizon).unwrap().estimate)?;
        assert_symmetric_psd(&infill_qv(&incs, horizon).unwrap().estimate)?;
        for class in [DiffusionClass::Constant, DiffusionClass::General] {
            assert_symmetric_psd(&infinite_horizon(&incs, 12, class).unwrap().estimate)?;
        }
    }

    #[test]
    fn infill_and_qv_weight_the_same_sum(xs in prop::collection::vec(-10.0..10.0f64, 40), h in 0.01..0.5f64, windows in 1usize..19) {
        let grid = ObservationGrid::from_positions(xs, h).unwrap();
        let incs = even(&grid, 19);
        // a horizon whose window count is exactly `windows`
        let horizon = 2.0 * h * (windows as f64 + 1.5);
        let k = window_count(horizon, h);
        prop_assert_eq!(k, windows);
        let sum = incs.outer_sum(k)[0];
        let infill = infill_constant_sigma(&incs, horizon).unwrap().estimate[(0, 0)];
        let qv = infill_qv(&incs, horizon).unwrap().estimate[(0, 0)];
        let from_infill = infill * (k as f64 * 2.0 * h.powi(3) / 3.0);
        let from_qv = qv * h * h;
        prop_assert!((from_infill - sum).abs() <= 1e-12 * sum.abs().max(1e-300));
        prop_assert!((from_qv - sum).abs() <= 1e-12 * sum.abs().max(1e-300));
    }

    #[test]
    fn scaling_positions_scales_estimates_quadratically(xs in prop::collection::vec(-10.0..10.0f64, 30), exp in -3i32..4) {
        // powers of two keep the scaling exact in floating point
        let lambda = 2f64.powi(exp);
        let h = 0.1;
        let g0 = ObservationGrid::from_positions(xs.clone(), h).unwrap();
        let g1 = ObservationGrid::from_positions(xs.iter().map(|x| lambda * x).collect(), h).unwrap();
        let (i0, i1) = (even(&g0, 14), even(&g1, 14));
        let l2 = lambda * lambda;
        prop_assert_eq!(infill_constant_sigma(&i0, 3.0).unwrap().estimate * l2, infill_constant_sigma(&i1, 3.0).unwrap().estimate);
        prop_assert_eq!(infill_qv(&i0, 3.0).unwrap().estimate * l2, infill_qv(&i1, 3.0).unwrap().estimate);
        prop_assert_eq!(
            infinite_horizon(&i0, 15, DiffusionClass::Constant).unwrap().estimate * l2,
            infinite_horizon(&i1, 15, DiffusionClass::Constant).unwrap().estimate
        );
    }

    #[test]
    fn scaling_by_arbitrary_lambda(xs in prop::collection::vec(-10.0..10.0f64, 30), lambda in 0.01..100.0f64) {
        let h = 0.1;
        let g0 = ObservationGrid::from_positions(xs.clone(), h).unwrap();
        let g1 = ObservationGrid::from_positions(xs.iter().map(|x| lambda * x).collect(), h).unwrap();
        let a = infill_constant_sigma(&even(&g0, 14), 3.0).unwrap().estimate[(0, 0)] * lambda * lambda;
        let b = infill_constant_sigma(&even(&g1, 14), 3.0).unwrap().estimate[(0, 0)];
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300) * 10.0);
    }
}

/// `√(T/2h)(σ̂² − 1)` over 10⁴ replicates: variance 2, Gaussian. The Euler
/// bias of the increment variance is `1/(2m²)` relative, so the normality
/// check uses a finer internal step than the default.
#[test]
fn clt_pivot_variance_and_normality() {
    let (h, horizon, reps, m) = (1e-3, 1.0, 10_000u64, 50);
    let spec = ModelSpec::integrated_brownian(1.0).unwrap();
    let k = window_count(horizon, h);
    let rate = (horizon / (2.0 * h)).sqrt();
    let pivots: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|seed| {
            let cfg = SimConfig::new(2 * k + 1, h, seed).with_substeps(m).positions_only();
            let grid = simulate_trajectory(&spec, &cfg).unwrap();
            rate * (infill_constant_sigma(&even(&grid, k), horizon).unwrap().estimate[(0, 0)] - 1.0)
        })
        .collect();
    let var = variance(&pivots);
    assert!((var / 2.0 - 1.0).abs() < 0.05, "variance {var}");
    let z: Vec<f64> = pivots.iter().map(|p| p / 2f64.sqrt()).collect();
    let (d, p) = ks_standard_normal(&z);
    assert!(p > 0.01, "KS D = {d}, p = {p}");
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median over seeds of `|QV(1) − L(1)|/L(1)` for the thermostat.
pub fn qv_median_relative_error(n: usize, seeds: u64) -> f64 {
    let spec = ModelSpec::boundary_thermostat(2.0).unwrap();
    let h = (n as f64).powf(-0.7);
    let k = window_count(1.0, h);
    let points = (2 * k + 2).max((1.0 / h).floor() as usize);
    let errs: Vec<f64> = (0..seeds)
        .into_par_iter()
        .map(|seed| {
            let grid = simulate_trajectory(&spec, &SimConfig::new(points - 1, h, seed)).unwrap();
            let qv = infill_qv(&even(&grid, k), 1.0).unwrap().estimate[(0, 0)];
            let l = limit_integral(&grid, &spec, 1.0).unwrap()[(0, 0)];
            ((qv - l) / l).abs()
        })
        .collect();
    median(errs)
}

#[test]
fn qv_consistency_trend() {
    let e: Vec<f64> = [1_000, 10_000, 100_000]
        .iter()
        .map(|&n| qv_median_relative_error(n, 50))
        .collect();
    assert!(e[0] > e[1] && e[1] > e[2], "medians {e:?}");
}

#[test]
fn limit_integral_matches_independent_rectangle_sum() {
    let beta = 2.0;
    let spec = ModelSpec::boundary_thermostat(beta).unwrap();
    let h = 0.01;
    let xs: Vec<f64> = (0..=150).map(|k| (0.7 * k as f64 * h).sin() * 2.0).collect();
    let grid = ObservationGrid::from_positions(xs.clone(), h).unwrap();
    let t = 1.234;
    let cells = 123;
    let oracle: f64 = xs[..cells]
        .iter()
        .map(|x| 2.0 / beta * (-2.0 / (x * x + 1.0)).exp() * h / 3.0)
        .sum();
    let got = limit_integral(&grid, &spec, t).unwrap()[(0, 0)];
    assert!((got - oracle).abs() <= 1e-12, "{got} vs {oracle}");
}

#[test]
fn limit_integral_converges_to_the_exact_integral() {
    // x(s) = s on [0, 1]: (1/3)∫ exp(−2/(s²+1)) ds, reference by composite Simpson.
    let spec = ModelSpec::boundary_thermostat(2.0).unwrap();
    let f = |s: f64| (-2.0 / (s * s + 1.0)).exp() / 3.0;
    let m = 2000;
    let exact: f64 = (0..=m)
        .map(|i| {
            let w = if i == 0 || i == m {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * f(i as f64 / m as f64)
        })
        .sum::<f64>()
        / (3.0 * m as f64);
    let err = |h: f64| {
        let n = (1.0 / h).round() as usize;
        let grid = ObservationGrid::from_positions((0..=n).map(|k| k as f64 * h).collect(), h).unwrap();
        (limit_integral(&grid, &spec, 1.0).unwrap()[(0, 0)] - exact).abs()
    };
    let (e1, e2) = (err(0.01), err(0.005));
    assert!(
        (e1 / e2 - 2.0).abs() < 0.1,
        "left-endpoint rule should be first order: {e1}, {e2}"
    );
}

#[test]
fn qv_and_limit_agree_for_constant_sigma() {
    let spec = ModelSpec::harmonic_oscillator(1.0, 1.0, 1.0).unwrap();
    let h = 1e-3;
    let k = window_count(1.0, h);
    let diffs: Vec<f64> = (0..200u64)
        .map(|seed| {
            let grid = simulate_trajectory(&spec, &SimConfig::new(2 * k + 1, h, seed)).unwrap();
            let qv = infill_qv(&even(&grid, k), 1.0).unwrap().estimate[(0, 0)];
            let l = limit_integral(&grid, &spec, 1.0).unwrap()[(0, 0)];
            assert!((l - 1.0 / 3.0).abs() < 1e-12);
            qv - l
        })
        .collect();
    let se = (variance(&diffs) / diffs.len() as f64).sqrt();
    // QV(1) sums ⌊1/2h⌋−1 windows of length 2h, so its mean is (1/3)(1 − 2h) up to Euler bias
    let expected = (1.0 - 2.0 * h) / 3.0 * (1.0 + 1.0 / (2.0 * 100.0)) - 1.0 / 3.0;
    assert!(
        (mean(&diffs) - expected).abs() < 3.0 * se,
        "{} vs {expected} ± {se}",
        mean(&diffs)
    );
}
