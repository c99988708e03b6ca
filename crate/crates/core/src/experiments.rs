//! Monte Carlo harness: RMSE and coverage of the constant-σ estimators, and
//! the quadratic-variation vs limit-integral comparison.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::estimators::{
    ci_infill_constant, ci_infinite_constant, infill_constant_sigma, infill_qv, infinite_horizon, limit_integral,
    robust_floor, window_count, DiffusionClass,
};
use crate::increments::{double_increments, IncrementScheme};
use crate::models::{ModelConfig, ModelKind, ModelSpec};
use crate::simulate::{simulate_trajectory, InitSpec, SimConfig, StepSize, DEFAULT_BURN_IN, DEFAULT_SUBSTEPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentRegime {
    InfillConstant,
    InfiniteHorizon,
    QvVsIntegral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub model: ModelConfig,
    pub regime: ExperimentRegime,
    /// `h = n^(−γ)`.
    pub gamma: f64,
    pub n: usize,
    pub replicates: usize,
    pub level: f64,
    pub base_seed: u64,
    /// `T` for the infill estimator, `t` for the QV comparison.
    pub horizon: f64,
    pub substeps: usize,
    /// `None` picks the regime default: origin for infill and QV,
    /// stationary (exact or burn-in) for the infinite horizon.
    pub init: Option<InitSpec>,
}

impl ExperimentPlan {
    pub fn new(model: ModelConfig, regime: ExperimentRegime, gamma: f64, n: usize, replicates: usize) -> Self {
        Self {
            model,
            regime,
            gamma,
            n,
            replicates,
            level: 0.95,
            base_seed: 1,
            horizon: 1.0,
            substeps: DEFAULT_SUBSTEPS,
            init: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.base_seed = seed;
        self
    }

    pub fn h(&self) -> f64 {
        (self.n as f64).powf(-self.gamma)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("plan serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn replicate_seed(&self, j: usize) -> u64 {
        self.base_seed.wrapping_add(j as u64)
    }

    fn validate(&self) -> Result<()> {
        if self.replicates < 1 {
            return Err(invalid("replicates", "must be >= 1"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(invalid("gamma", format!("must be > 0, got {}", self.gamma)));
        }
        if self.n < 2 {
            return Err(invalid("n", "must be >= 2"));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(invalid("level", "must lie in (0, 1)"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid("horizon", "must be finite and > 0"));
        }
        if self.substeps < 1 {
            return Err(invalid("substeps", "must be >= 1"));
        }
        Ok(())
    }

    fn init_for(&self, spec: &ModelSpec) -> InitSpec {
        if let Some(init) = &self.init {
            return init.clone();
        }
        match self.regime {
            ExperimentRegime::InfillConstant | ExperimentRegime::QvVsIntegral => InitSpec::origin(spec.dim()),
            ExperimentRegime::InfiniteHorizon => match spec.kind() {
                ModelKind::HarmonicOscillator { .. } => InitSpec::StationaryExact,
                _ => InitSpec::BurnIn {
                    duration: DEFAULT_BURN_IN,
                },
            },
        }
    }
}

/// Common bin edges for the estimator sample and, when present, the
/// limit-integral sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub estimator_counts: Vec<usize>,
    pub integral_counts: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub plan: ExperimentPlan,
    pub config_hash: String,
    /// True `σ²` for constant-σ models.
    pub sigma_squared: Option<f64>,
    pub seeds: Vec<u64>,
    pub estimates: Vec<f64>,
    pub intervals: Vec<(f64, f64)>,
    /// Limit integral per replicate (QV comparison only).
    pub limits: Vec<f64>,
    /// Relative MSE of the estimator. For the QV comparison the reference
    /// is the mean of the limit-integral sample.
    pub rmse: f64,
    pub ecov: Option<f64>,
    /// Relative MSE of the limit integral around its own mean.
    pub rmse_limit: Option<f64>,
    /// `(1/M)·Σ(est − σ²)² / σ²`, the un-squared normalisation.
    pub mse_over_sigma2: Option<f64>,
    /// Median of `|QV − L|/L` across replicates.
    pub median_relative_error: Option<f64>,
    pub histogram: Histogram,
    pub notes: Vec<String>,
}

struct Replicate {
    estimate: f64,
    interval: Option<(f64, f64)>,
    limit: Option<f64>,
}

fn scalar_sigma_squared(spec: &ModelSpec) -> Option<f64> {
    (spec.constant_sigma() && spec.dim() == 1).then(|| spec.sigma_squared(&[0.0], &[0.0])[(0, 0)])
}

fn simulate_replicate(
    plan: &ExperimentPlan,
    spec: &ModelSpec,
    steps: usize,
    seed: u64,
    velocities: bool,
) -> Result<crate::simulate::ObservationGrid> {
    let cfg = SimConfig {
        n: steps,
        step: StepSize::Fixed { h: plan.h() },
        substeps: plan.substeps,
        init: plan.init_for(spec),
        seed,
        record_velocities: velocities,
    };
    simulate_trajectory(spec, &cfg)
}

fn run_replicates(plan: &ExperimentPlan, f: impl Fn(u64) -> Result<Replicate> + Sync) -> Result<Vec<Replicate>> {
    let outcomes: Vec<Result<Replicate>> = (0..plan.replicates)
        .into_par_iter()
        .map(|j| {
            f(plan.replicate_seed(j)).map_err(|e| Error::Replicate {
                replicate: j,
                source: Box::new(e),
            })
        })
        .collect();
    outcomes.into_iter().collect()
}

/// RMSE `(1/M)Σ((est − σ²)/σ²)²` and ECOV `(1/M)Σ 1{σ² ∈ CI}`, summed in
/// replicate order.
pub fn coverage_summary(estimates: &[f64], intervals: &[(f64, f64)], sigma_squared: f64) -> (f64, f64) {
    let m = estimates.len() as f64;
    let rmse = estimates
        .iter()
        .map(|e| ((e - sigma_squared) / sigma_squared).powi(2))
        .sum::<f64>()
        / m;
    let hits = intervals
        .iter()
        .filter(|(lo, hi)| *lo <= sigma_squared && sigma_squared <= *hi)
        .count();
    (rmse, hits as f64 / intervals.len() as f64)
}

/// Relative MSE of `values` around `reference`.
pub fn relative_mse(values: &[f64], reference: f64) -> f64 {
    values
        .iter()
        .map(|v| ((v - reference) / reference).powi(2))
        .sum::<f64>()
        / values.len() as f64
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Linear-interpolation sample quantile.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

const MAX_BINS: usize = 10_000;

/// Freedman–Diaconis bins over the pooled samples.
pub fn freedman_diaconis(estimates: &[f64], integrals: Option<&[f64]>) -> Histogram {
    let mut pooled: Vec<f64> = estimates
        .iter()
        .chain(integrals.into_iter().flatten())
        .copied()
        .collect();
    pooled.sort_by(f64::total_cmp);
    let (lo, hi) = (pooled[0], pooled[pooled.len() - 1]);
    let iqr = quantile(&pooled, 0.75) - quantile(&pooled, 0.25);
    let width = 2.0 * iqr / (pooled.len() as f64).cbrt();
    let (lo, hi, bins) = if hi > lo && width > 0.0 {
        (lo, hi, (((hi - lo) / width).ceil() as usize).clamp(1, MAX_BINS))
    } else if hi > lo {
        (lo, hi, 1)
    } else {
        (lo - 0.5, hi + 0.5, 1)
    };
    let step = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| lo + step * i as f64).collect();
    let count = |xs: &[f64]| {
        let mut c = vec![0usize; bins];
        for &x in xs {
            let k = (((x - lo) / step).floor() as usize).min(bins - 1);
            c[k] += 1;
        }
        c
    };
    Histogram {
        edges,
        estimator_counts: count(estimates),
        integral_counts: integrals.map(count),
    }
}

/// Simulates `M` replicates with seeds `base_seed + j` and aggregates RMSE
/// and coverage for the constant-σ infill or infinite-horizon estimator.
pub fn run_monte_carlo(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    plan.validate()?;
    let spec = plan.model.build()?;
    let sigma2 = scalar_sigma_squared(&spec).ok_or_else(|| {
        Error::Regime(format!(
            "coverage experiments need a scalar constant-sigma model, `{}` is not",
            spec.name()
        ))
    })?;
    let h = plan.h();
    let level = plan.level;
    let replicates = match plan.regime {
        ExperimentRegime::InfillConstant => {
            let k = window_count(plan.horizon, h);
            if k < 1 {
                return Err(Error::Regime(format!(
                    "T too small for h: T = {}, h = {h}",
                    plan.horizon
                )));
            }
            run_replicates(plan, |seed| {
                let grid = simulate_replicate(plan, &spec, 2 * k + 1, seed, false)?;
                let incs = double_increments(&grid, IncrementScheme::EvenGrid, k)?;
                let r = infill_constant_sigma(&incs, plan.horizon)?;
                let ci = ci_infill_constant(&r, level)?;
                Ok(Replicate {
                    estimate: r.estimate[(0, 0)],
                    interval: Some((ci.lower[0], ci.upper[0])),
                    limit: None,
                })
            })?
        }
        ExperimentRegime::InfiniteHorizon => run_replicates(plan, |seed| {
            let n = plan.n;
            let grid = simulate_replicate(plan, &spec, 2 * n - 1, seed, false)?;
            let incs = double_increments(&grid, IncrementScheme::EvenGrid, n - 1)?;
            let r = infinite_horizon(&incs, n, DiffusionClass::Constant)?;
            let ci = ci_infinite_constant(&r, level)?;
            Ok(Replicate {
                estimate: r.estimate[(0, 0)],
                interval: Some((ci.lower[0], ci.upper[0])),
                limit: None,
            })
        })?,
        ExperimentRegime::QvVsIntegral => {
            return Err(Error::Regime(
                "qv_vs_integral plans run through qv_vs_integral, not run_monte_carlo".into(),
            ))
        }
    };
    let estimates: Vec<f64> = replicates.iter().map(|r| r.estimate).collect();
    let intervals: Vec<(f64, f64)> = replicates.iter().filter_map(|r| r.interval).collect();
    let (rmse, ecov) = coverage_summary(&estimates, &intervals, sigma2);
    let mse_over_sigma2 = estimates.iter().map(|e| (e - sigma2).powi(2)).sum::<f64>() / estimates.len() as f64 / sigma2;
    Ok(ExperimentReport {
        plan: plan.clone(),
        config_hash: plan.config_hash(),
        sigma_squared: Some(sigma2),
        seeds: (0..plan.replicates).map(|j| plan.replicate_seed(j)).collect(),
        histogram: freedman_diaconis(&estimates, None),
        estimates,
        intervals,
        limits: Vec::new(),
        rmse,
        ecov: Some(ecov),
        rmse_limit: None,
        mse_over_sigma2: Some(mse_over_sigma2),
        median_relative_error: None,
        notes: vec![
            format!("h = n^-gamma = {h}"),
            "rmse = mean(((est - sigma^2)/sigma^2)^2)".into(),
        ],
    })
}

/// Per replicate: `QV(t)` and the rectangle-rule limit `(1/3)∫₀ᵗσ²` on the
/// same path. Both relative MSEs use the mean of the limit sample as the
/// reference.
pub fn qv_vs_integral(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    plan.validate()?;
    if plan.regime != ExperimentRegime::QvVsIntegral {
        return Err(Error::Regime(format!(
            "qv_vs_integral called with a {:?} plan",
            plan.regime
        )));
    }
    let spec = plan.model.build()?;
    if spec.dim() != 1 {
        return Err(Error::Unsupported(
            "qv_vs_integral reports scalar statistics only".into(),
        ));
    }
    let h = plan.h();
    let t = plan.horizon;
    let k = window_count(t, h);
    if k < 1 {
        return Err(Error::Regime(format!("t too small for h: t = {t}, h = {h}")));
    }
    let cells = robust_floor(t / h) as usize;
    let points = (2 * k + 2).max(cells);
    let velocities = spec.sigma_depends_on_velocity();
    let replicates = run_replicates(plan, |seed| {
        let grid = simulate_replicate(plan, &spec, points - 1, seed, velocities)?;
        let incs = double_increments(&grid, IncrementScheme::EvenGrid, k)?;
        let qv = infill_qv(&incs, t)?;
        let limit = limit_integral(&grid, &spec, t)?;
        Ok(Replicate {
            estimate: qv.estimate[(0, 0)],
            interval: None,
            limit: Some(limit[(0, 0)]),
        })
    })?;
    let estimates: Vec<f64> = replicates.iter().map(|r| r.estimate).collect();
    let limits: Vec<f64> = replicates.iter().filter_map(|r| r.limit).collect();
    let reference = mean(&limits);
    let rel_errors: Vec<f64> = estimates
        .iter()
        .zip(&limits)
        .map(|(q, l)| ((q - l) / l).abs())
        .collect();
    Ok(ExperimentReport {
        plan: plan.clone(),
        config_hash: plan.config_hash(),
        sigma_squared: scalar_sigma_squared(&spec),
        seeds: (0..plan.replicates).map(|j| plan.replicate_seed(j)).collect(),
        histogram: freedman_diaconis(&estimates, Some(&limits)),
        rmse: relative_mse(&estimates, reference),
        rmse_limit: Some(relative_mse(&limits, reference)),
        median_relative_error: Some(median(&rel_errors)),
        estimates,
        intervals: Vec::new(),
        limits,
        ecov: None,
        mse_over_sigma2: None,
        notes: vec![
            format!("h = n^-gamma = {h}"),
            format!("reference = mean of limit-integral sample = {reference}"),
            "rmse = mean(((QV - reference)/reference)^2); rmse_limit = mean(((L - reference)/reference)^2)".into(),
        ],
    })
}

/// Dispatches on the plan's regime.
pub fn run_plan(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    match plan.regime {
        ExperimentRegime::QvVsIntegral => qv_vs_integral(plan),
        _ => run_monte_carlo(plan),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oscillator(sigma: f64) -> ModelConfig {
        ModelConfig::HarmonicOscillator {
            sigma,
            kappa: 2.0,
            stiffness: 2.0,
        }
    }

    #[test]
    fn exact_estimate_has_zero_rmse_and_full_coverage() {
        let (rmse, ecov) = coverage_summary(&[4.0], &[(4.0, 4.0)], 4.0);
        assert_eq!(rmse, 0.0);
        assert_eq!(ecov, 1.0);
    }

    #[test]
    fn coverage_counts_closed_interval() {
        let (rmse, ecov) = coverage_summary(&[1.5, 0.5], &[(1.0, 2.0), (0.0, 0.9)], 1.0);
        assert_eq!(rmse, 0.25);
        assert_eq!(ecov, 0.5);
    }

    #[test]
    fn histogram_totals_match_sample_size() {
        let est: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1000) as f64 / 1000.0).collect();
        let lim: Vec<f64> = est.iter().map(|v| v * 0.9 + 0.05).collect();
        let hist = freedman_diaconis(&est, Some(&lim));
        assert_eq!(hist.estimator_counts.iter().sum::<usize>(), 1000);
        assert_eq!(hist.integral_counts.as_ref().unwrap().iter().sum::<usize>(), 1000);
        assert_eq!(hist.edges.len(), hist.estimator_counts.len() + 1);
        let single = freedman_diaconis(&[2.0], None);
        assert_eq!(single.estimator_counts, vec![1]);
    }

    #[test]
    fn rmse_invariant_to_replicate_order() {
        let est = [0.9, 1.2, 1.05, 0.7];
        let rev: Vec<f64> = est.iter().rev().copied().collect();
        assert_eq!(relative_mse(&est, 1.0), relative_mse(&rev, 1.0));
    }

    #[test]
    fn small_infill_run_is_reproducible() {
        let plan = ExperimentPlan::new(oscillator(1.0), ExperimentRegime::InfillConstant, 0.5, 400, 8).with_seed(7);
        let a = run_monte_carlo(&plan).unwrap();
        let b = run_monte_carlo(&plan).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.seeds, (7..15).collect::<Vec<u64>>());
        assert!(a.ecov.unwrap() >= 0.0 && a.ecov.unwrap() <= 1.0);
        assert!(a.rmse >= 0.0);
    }

    #[test]
    fn regime_mismatch_is_reported() {
        let plan = ExperimentPlan::new(
            ModelConfig::BoundaryThermostat { beta: 2.0 },
            ExperimentRegime::InfillConstant,
            0.5,
            100,
            2,
        );
        assert!(matches!(run_monte_carlo(&plan), Err(Error::Regime(_))));
        let qv = ExperimentPlan::new(oscillator(1.0), ExperimentRegime::QvVsIntegral, 0.5, 100, 2);
        assert!(matches!(run_monte_carlo(&qv), Err(Error::Regime(_))));
        let infill = ExperimentPlan::new(oscillator(1.0), ExperimentRegime::InfillConstant, 0.5, 100, 2);
        assert!(matches!(qv_vs_integral(&infill), Err(Error::Regime(_))));
    }

    #[test]
    fn validation_rejects_empty_plans() {
        let mut plan = ExperimentPlan::new(oscillator(1.0), ExperimentRegime::InfiniteHorizon, 0.5, 100, 0);
        assert!(run_monte_carlo(&plan).is_err());
        plan.replicates = 1;
        plan.gamma = 0.0;
        assert!(run_monte_carlo(&plan).is_err());
    }

    #[test]
    fn config_hash_tracks_plan() {
        let a = ExperimentPlan::new(oscillator(1.0), ExperimentRegime::InfiniteHorizon, 0.5, 100, 10);
        let b = a.clone().with_seed(2);
        assert_eq!(a.config_hash(), a.clone().config_hash());
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 64);
    }
}
