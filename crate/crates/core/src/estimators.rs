//! Diffusion estimators built on even-grid double increments, with their
//! asymptotic laws and the scalar confidence intervals they induce.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};
use crate::increments::{DoubleIncrements, IncrementScheme};
use crate::models::ModelSpec;
use crate::simulate::ObservationGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    InfillConstant,
    InfillQv,
    InfiniteHorizon,
    InfiniteHorizonConstant,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::InfillConstant => "infill_constant",
            Regime::InfillQv => "infill_qv",
            Regime::InfiniteHorizon => "infinite_horizon",
            Regime::InfiniteHorizonConstant => "infinite_horizon_constant",
        })
    }
}

/// Whether `σ` is known to be constant; selects which infinite-horizon CLT
/// applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffusionClass {
    Constant,
    General,
}

impl DiffusionClass {
    pub fn of(spec: &ModelSpec) -> Self {
        if spec.constant_sigma() {
            DiffusionClass::Constant
        } else {
            DiffusionClass::General
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LawKind {
    /// `σ⁻¹ σ̂² σ⁻¹ − Id` scaled by the rate: symmetric Gaussian matrix with
    /// `Var(N_ij) = 1 + δ_ij`.
    NormalizedSymmetricGaussian,
    /// `σ N σ` with `N` as above. Entry variances use the plug-in `σ²`.
    ConjugatedSymmetricGaussian { sigma_squared: DMatrix<f64> },
    /// `(2/3)∫ σ dW̃ σ`: mixed normal, conditional variance is path dependent.
    MixedStochasticIntegral,
    /// Covariance given by a mixing integral under the invariant law; no
    /// closed form.
    MixingIntegral,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticLaw {
    pub rate: f64,
    pub kind: LawKind,
    pub description: String,
}

impl AsymptoticLaw {
    /// Variance of entry `(i, j)` of the limit, when it has a closed form.
    pub fn entry_variance(&self, i: usize, j: usize) -> Option<f64> {
        match &self.kind {
            LawKind::NormalizedSymmetricGaussian => Some(if i == j { 2.0 } else { 1.0 }),
            LawKind::ConjugatedSymmetricGaussian { sigma_squared: s } => {
                Some(s[(i, i)] * s[(j, j)] + s[(i, j)] * s[(i, j)])
            }
            LawKind::MixedStochasticIntegral | LawKind::MixingIntegral => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorResult {
    pub estimate: DMatrix<f64>,
    pub law: AsymptoticLaw,
    pub regime: Regime,
    /// Number of increments that entered the sum.
    pub n: usize,
    pub h: f64,
    /// Set when the window held no increment and the estimate is the empty
    /// sum.
    pub degenerate_window: bool,
}

impl EstimatorResult {
    pub fn dim(&self) -> usize {
        self.estimate.nrows()
    }

    /// Scalar estimate for `d = 1`.
    pub fn scalar(&self) -> Option<f64> {
        (self.dim() == 1).then(|| self.estimate[(0, 0)])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceInterval {
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
    pub level: f64,
}

impl ConfidenceInterval {
    pub fn contains(&self, value: &DMatrix<f64>) -> bool {
        value
            .iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .all(|(v, (lo, hi))| lo <= v && v <= hi)
    }

    pub fn contains_scalar(&self, value: f64) -> bool {
        self.lower.len() == 1 && self.lower[0] <= value && value <= self.upper[0]
    }
}

/// `⌊x⌋` that does not lose a unit to representation error when `x` is an
/// integer up to rounding (e.g. `1 / (2 · 0.25)`).
pub(crate) fn robust_floor(x: f64) -> f64 {
    (x * (1.0 + 1e-12)).floor()
}

/// `⌊T/(2h)⌋ − 1`, the number of even-grid windows inside `[0, T]`.
/// Negative values clamp to zero.
pub fn window_count(horizon: f64, h: f64) -> usize {
    let k = robust_floor(horizon / (2.0 * h)) - 1.0;
    if k > 0.0 {
        k as usize
    } else {
        0
    }
}

fn require_even(incs: &DoubleIncrements) -> Result<()> {
    if incs.scheme() != IncrementScheme::EvenGrid {
        return Err(Error::Regime(
            "diffusion estimators are defined on even-grid increments".into(),
        ));
    }
    Ok(())
}

fn require_available(incs: &DoubleIncrements, needed: usize) -> Result<()> {
    if incs.count() < needed {
        return Err(Error::Sizing {
            what: "estimator window",
            required: needed,
            available: incs.count(),
        });
    }
    Ok(())
}

fn scaled_outer_sum(incs: &DoubleIncrements, upto: usize, scale: f64) -> DMatrix<f64> {
    let d = incs.dim();
    DMatrix::from_row_slice(d, d, &incs.outer_sum(upto)) * scale
}

/// Fixed-horizon estimator of a constant `σ²` on `[0, T]`:
/// `(1/K)·(3/(2h³))·Σ_{p≤K} Δ₂X(p)⊗Δ₂X(p)` with `K = ⌊T/(2h)⌋ − 1`.
pub fn infill_constant_sigma(incs: &DoubleIncrements, horizon: f64) -> Result<EstimatorResult> {
    require_even(incs)?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid("horizon", "must be finite and > 0"));
    }
    let h = incs.h();
    let k = window_count(horizon, h);
    if k < 1 {
        return Err(Error::Regime(format!(
            "T too small for h: T = {horizon}, h = {h} leaves no even-grid window"
        )));
    }
    require_available(incs, k)?;
    let scale = 3.0 / (2.0 * h.powi(3) * k as f64);
    Ok(EstimatorResult {
        estimate: scaled_outer_sum(incs, k, scale),
        law: AsymptoticLaw {
            rate: (horizon / (2.0 * h)).sqrt(),
            kind: LawKind::NormalizedSymmetricGaussian,
            description: "sqrt(T/2h)(σ⁻¹σ̂²σ⁻¹ − Id) → symmetric Gaussian N, Var N_ij = 1 + δ_ij (stable)".into(),
        },
        regime: Regime::InfillConstant,
        n: k,
        h,
        degenerate_window: false,
    })
}

/// Quadratic-variation process `(1/h²)·Σ_{p≤⌊t/(2h)⌋−1} Δ₂X(p)⊗Δ₂X(p)`,
/// consistent for `(1/3)∫₀ᵗ σ²(X_s, Y_s) ds`. An empty window gives the
/// zero matrix with `degenerate_window` set.
pub fn infill_qv(incs: &DoubleIncrements, t: f64) -> Result<EstimatorResult> {
    require_even(incs)?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(invalid("t", "must be finite and >= 0"));
    }
    let h = incs.h();
    let k = window_count(t, h);
    let degenerate = k == 0;
    if !degenerate {
        require_available(incs, k)?;
    }
    Ok(EstimatorResult {
        estimate: scaled_outer_sum(incs, k, 1.0 / (h * h)),
        law: AsymptoticLaw {
            rate: (1.0 / h).sqrt(),
            kind: LawKind::MixedStochasticIntegral,
            description: "sqrt(1/h)(QV(t) − (1/3)∫σ²) → (2/3)∫σ dW̃ σ, W̃ independent symmetric matrix BM (stable)"
                .into(),
        },
        regime: Regime::InfillQv,
        n: k,
        h,
        degenerate_window: degenerate,
    })
}

/// Long-horizon estimator of `E_μ σ²`:
/// `(3/2)·(1/((n−1)h³))·Σ_{p=1}^{n−1} Δ₂X(p)⊗Δ₂X(p)`.
pub fn infinite_horizon(incs: &DoubleIncrements, n: usize, class: DiffusionClass) -> Result<EstimatorResult> {
    require_even(incs)?;
    if n < 2 {
        return Err(invalid("n", format!("must be >= 2, got {n}")));
    }
    require_available(incs, n - 1)?;
    let h = incs.h();
    let estimate = scaled_outer_sum(incs, n - 1, 1.5 / ((n - 1) as f64 * h.powi(3)));
    let (regime, law) = match class {
        DiffusionClass::Constant => (
            Regime::InfiniteHorizonConstant,
            AsymptoticLaw {
                rate: (n as f64).sqrt(),
                kind: LawKind::ConjugatedSymmetricGaussian {
                    sigma_squared: estimate.clone(),
                },
                description: "sqrt(n)(K_n − σ²) → σNσ, Var N_ij = 1 + δ_ij (needs nh² → 0)".into(),
            },
        ),
        DiffusionClass::General => (
            Regime::InfiniteHorizon,
            AsymptoticLaw {
                rate: (2.0 * n as f64 * h).sqrt(),
                kind: LawKind::MixingIntegral,
                description: "sqrt(2nh)(K_n − E_μσ²) → N, Cov from ∫E_μ(σ̄²(Z₀)σ̄²(Z_s))ds (needs nh³ → 0)".into(),
            },
        ),
    };
    Ok(EstimatorResult {
        estimate,
        law,
        regime,
        n: n - 1,
        h,
        degenerate_window: false,
    })
}

fn normal_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(invalid("level", format!("must lie in (0, 1), got {level}")));
    }
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(std.inverse_cdf((1.0 + level) / 2.0))
}

fn scalar_interval(centre: f64, margin: f64, level: f64) -> ConfidenceInterval {
    ConfidenceInterval {
        lower: DMatrix::from_element(1, 1, centre - margin),
        upper: DMatrix::from_element(1, 1, centre + margin),
        level,
    }
}

fn scalar_estimate(result: &EstimatorResult, expected: Regime) -> Result<f64> {
    if result.regime != expected {
        return Err(Error::Regime(format!(
            "interval for {expected} applied to a {} result",
            result.regime
        )));
    }
    result.scalar().ok_or_else(|| {
        Error::Unsupported(format!(
            "confidence intervals are scalar only; got dimension {}",
            result.dim()
        ))
    })
}

/// `σ̂² ± z·√2·σ̂²·√(2h)`.
pub fn ci_infill_constant(result: &EstimatorResult, level: f64) -> Result<ConfidenceInterval> {
    let est = scalar_estimate(result, Regime::InfillConstant)?;
    let z = normal_quantile(level)?;
    Ok(scalar_interval(
        est,
        z * 2f64.sqrt() * est * (2.0 * result.h).sqrt(),
        level,
    ))
}

/// `K_n ± z·√2·K_n/√n`, with `n` the sample size (one more than the
/// number of increments).
pub fn ci_infinite_constant(result: &EstimatorResult, level: f64) -> Result<ConfidenceInterval> {
    let est = scalar_estimate(result, Regime::InfiniteHorizonConstant)?;
    let z = normal_quantile(level)?;
    let n = (result.n + 1) as f64;
    Ok(scalar_interval(est, z * 2f64.sqrt() * est / n.sqrt(), level))
}

/// Left-endpoint rectangle rule for `(1/3)∫₀ᵗ σ²(X_s, Y_s) ds` on the
/// observation grid. The last partial cell is dropped.
pub fn limit_integral(grid: &ObservationGrid, spec: &ModelSpec, t: f64) -> Result<DMatrix<f64>> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(invalid("t", "must be finite and >= 0"));
    }
    if spec.sigma_depends_on_velocity() && !grid.has_velocities() {
        return Err(Error::MissingVelocities("a velocity-dependent sigma"));
    }
    let d = spec.dim();
    if grid.dim() != d {
        return Err(invalid(
            "grid",
            format!("dimension {} does not match model dimension {d}", grid.dim()),
        ));
    }
    let h = grid.h();
    let cells = robust_floor(t / h) as usize;
    if grid.len() < cells {
        return Err(Error::Sizing {
            what: "limit integral",
            required: cells,
            available: grid.len(),
        });
    }
    let zeros = vec![0.0; d];
    let mut sig = vec![0.0; d * d];
    let mut acc = vec![0.0; d * d];
    for k in 0..cells {
        let y = grid.velocity(k).unwrap_or(&zeros);
        spec.sigma_into(grid.position(k), y, &mut sig);
        for i in 0..d {
            for j in 0..d {
                acc[i * d + j] += (0..d).map(|l| sig[i * d + l] * sig[j * d + l]).sum::<f64>();
            }
        }
    }
    Ok(DMatrix::from_row_slice(d, d, &acc) * (h / 3.0))
}
