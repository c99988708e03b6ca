use kinestim::{qv_vs_integral, run_monte_carlo, ExperimentPlan, ExperimentRegime, ModelConfig};

fn oscillator(sigma: f64) -> ModelConfig {
    ModelConfig::HarmonicOscillator {
        sigma,
        kappa: 1.0,
        stiffness: 1.0,
    }
}

#[test]
fn report_independent_of_worker_count() {
    let plan = ExperimentPlan::new(oscillator(1.0), ExperimentRegime::InfiniteHorizon, 0.5, 200, 64).with_seed(9);
    let on = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_monte_carlo(&plan).unwrap())
    };
    let (a, b) = (on(1), on(4));
    assert_eq!(a, b);
    assert_eq!(a.histogram.estimator_counts.iter().sum::<usize>(), 64);
}

#[test]
fn replicates_match_their_seeds() {
    // replicate j of a plan seeded at s equals replicate 0 of a plan seeded at s + j
    let plan = ExperimentPlan::new(oscillator(1.0), ExperimentRegime::InfillConstant, 0.5, 400, 5).with_seed(100);
    let full = run_monte_carlo(&plan).unwrap();
    for j in 0..5 {
        let single = ExperimentPlan {
            replicates: 1,
            ..plan.clone()
        }
        .with_seed(100 + j as u64);
        assert_eq!(run_monte_carlo(&single).unwrap().estimates[0], full.estimates[j]);
    }
}

#[test]
fn constant_sigma_qv_and_limit_concentrate_together() {
    let mut plan = ExperimentPlan::new(oscillator(1.0), ExperimentRegime::QvVsIntegral, 0.7, 100_000, 200);
    plan.base_seed = 3;
    let report = qv_vs_integral(&plan).unwrap();
    let h = plan.h();
    let exact = (1.0 / h).floor() * h / 3.0;
    assert!(report.limits.iter().all(|l| (l - exact).abs() < 1e-12));
    let diffs: Vec<f64> = report
        .estimates
        .iter()
        .zip(&report.limits)
        .map(|(q, l)| q - l)
        .collect();
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64).sqrt();
    // the window truncation (1/3)·2h and the Euler bias are below 1e-3 here
    assert!(
        mean.abs() < 3.0 * sd / (diffs.len() as f64).sqrt() + 1e-3,
        "paired mean {mean} (sd {sd})"
    );
    assert_eq!(
        report.histogram.integral_counts.as_ref().unwrap().iter().sum::<usize>(),
        200
    );
}

#[test]
fn rmse_scales_out_sigma() {
    // the same Brownian path scaled by σ gives the same relative errors
    let a = run_monte_carlo(&ExperimentPlan::new(
        oscillator(1.0),
        ExperimentRegime::InfiniteHorizon,
        0.7,
        300,
        20,
    ))
    .unwrap();
    let b = run_monte_carlo(&ExperimentPlan::new(
        oscillator(2.0),
        ExperimentRegime::InfiniteHorizon,
        0.7,
        300,
        20,
    ))
    .unwrap();
    assert!((a.rmse - b.rmse).abs() <= 1e-9 * a.rmse);
    assert_eq!(a.ecov, b.ecov);
}
