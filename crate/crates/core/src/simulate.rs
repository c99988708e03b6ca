//! Explicit Euler–Maruyama simulation of the kinetic system, recorded on the
//! observation grid `p·h`, `p = 0..=n`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::models::{ModelKind, ModelSpec};

pub const DEFAULT_SUBSTEPS: usize = 10;
pub const DEFAULT_BURN_IN: f64 = 50.0;

/// Positions (and optionally velocities) at times `p·h`. Storage is flat:
/// point `p` occupies `[p*d, (p+1)*d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationGrid {
    dim: usize,
    positions: Vec<f64>,
    velocities: Option<Vec<f64>>,
    h: f64,
    seed: u64,
    model_name: String,
}

impl ObservationGrid {
    pub fn new(
        dim: usize,
        positions: Vec<f64>,
        velocities: Option<Vec<f64>>,
        h: f64,
        seed: u64,
        model_name: impl Into<String>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dim", "must be >= 1"));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(invalid("h", format!("must be finite and > 0, got {h}")));
        }
        if positions.is_empty() || !positions.len().is_multiple_of(dim) {
            return Err(invalid("positions", "length must be a positive multiple of dim"));
        }
        if let Some(v) = &velocities {
            if v.len() != positions.len() {
                return Err(invalid("velocities", "must have the same length as positions"));
            }
        }
        let all = positions.iter().chain(velocities.iter().flatten());
        if all.clone().any(|v| !v.is_finite()) {
            return Err(invalid("positions", "all entries must be finite"));
        }
        Ok(Self {
            dim,
            positions,
            velocities,
            h,
            seed,
            model_name: model_name.into(),
        })
    }

    /// Grid of scalar positions, no velocities.
    pub fn from_positions(positions: Vec<f64>, h: f64) -> Result<Self> {
        Self::new(1, positions, None, h, 0, "observed")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of grid points (`n + 1` for a path of `n` steps).
    pub fn len(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn model_name(&self) -> &str {
        &self.model_name
    }

    pub fn position(&self, p: usize) -> &[f64] {
        &self.positions[p * self.dim..(p + 1) * self.dim]
    }

    pub fn velocity(&self, p: usize) -> Option<&[f64]> {
        self.velocities.as_ref().map(|v| &v[p * self.dim..(p + 1) * self.dim])
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn velocities(&self) -> Option<&[f64]> {
        self.velocities.as_deref()
    }

    pub fn has_velocities(&self) -> bool {
        self.velocities.is_some()
    }

    /// Copy of the first `len` points.
    pub fn truncated(&self, len: usize) -> Self {
        let len = len.min(self.len());
        let cut = len * self.dim;
        Self {
            dim: self.dim,
            positions: self.positions[..cut].to_vec(),
            velocities: self.velocities.as_ref().map(|v| v[..cut].to_vec()),
            h: self.h,
            seed: self.seed,
            model_name: self.model_name.clone(),
        }
    }

    /// Same grid with velocities dropped, as seen by a position-only observer.
    pub fn positions_only(&self) -> Self {
        Self {
            velocities: None,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSize {
    /// `h = n^(−γ)` with `n` the configured sample count.
    PowerLaw {
        gamma: f64,
    },
    Fixed {
        h: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    Point {
        x0: Vec<f64>,
        y0: Vec<f64>,
    },
    /// Exact Gaussian draw; harmonic oscillator only.
    StationaryExact,
    /// Run from the origin for `duration` time units and discard.
    BurnIn {
        duration: f64,
    },
}

impl InitSpec {
    pub fn origin(dim: usize) -> Self {
        InitSpec::Point {
            x0: vec![0.0; dim],
            y0: vec![0.0; dim],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Number of observation steps; the grid has `n + 1` points.
    pub n: usize,
    pub step: StepSize,
    /// Internal Euler steps per observation step.
    pub substeps: usize,
    pub init: InitSpec,
    pub seed: u64,
    pub record_velocities: bool,
}

impl SimConfig {
    pub fn new(n: usize, h: f64, seed: u64) -> Self {
        Self {
            n,
            step: StepSize::Fixed { h },
            substeps: DEFAULT_SUBSTEPS,
            init: InitSpec::origin(1),
            seed,
            record_velocities: true,
        }
    }

    pub fn with_substeps(mut self, substeps: usize) -> Self {
        self.substeps = substeps;
        self
    }

    pub fn with_init(mut self, init: InitSpec) -> Self {
        self.init = init;
        self
    }

    pub fn positions_only(mut self) -> Self {
        self.record_velocities = false;
        self
    }

    pub fn h(&self) -> Result<f64> {
        let h = match self.step {
            StepSize::Fixed { h } => h,
            StepSize::PowerLaw { gamma } => {
                if !(gamma > 0.0 && gamma.is_finite()) {
                    return Err(invalid("gamma", format!("must be > 0, got {gamma}")));
                }
                (self.n as f64).powf(-gamma)
            }
        };
        if !(h > 0.0 && h.is_finite()) {
            return Err(invalid("h", format!("must be finite and > 0, got {h}")));
        }
        Ok(h)
    }

    fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(invalid("n", "must be >= 1"));
        }
        if self.substeps < 1 {
            return Err(invalid("substeps", "must be >= 1"));
        }
        if let InitSpec::BurnIn { duration } = self.init {
            if !(duration >= 0.0 && duration.is_finite()) {
                return Err(invalid("burn_in", "duration must be finite and >= 0"));
            }
        }
        self.h().map(|_| ())
    }
}

/// `(x₀, y₀) ~ N(0, σ²/(2κD)) ⊗ N(0, σ²/(2κ))`, the stationary law of the
/// linear oscillator.
pub fn sample_stationary_oa(sigma: f64, kappa: f64, stiffness: f64, seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    stationary_oa_draw(sigma, kappa, stiffness, &mut rng)
}

pub(crate) fn stationary_oa_draw(sigma: f64, kappa: f64, stiffness: f64, rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
    for (name, v) in [("sigma", sigma), ("kappa", kappa), ("D", stiffness)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(invalid(name, format!("must be finite and > 0, got {v}")));
        }
    }
    let var_y = sigma * sigma / (2.0 * kappa);
    let var_x = var_y / stiffness;
    let zx: f64 = StandardNormal.sample(rng);
    let zy: f64 = StandardNormal.sample(rng);
    Ok((var_x.sqrt() * zx, var_y.sqrt() * zy))
}

struct Stepper<'a> {
    spec: &'a ModelSpec,
    delta: f64,
    sqrt_delta: f64,
    sig: Vec<f64>,
    damp: Vec<f64>,
    drift: Vec<f64>,
    noise: Vec<f64>,
    x_prev: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(spec: &'a ModelSpec, delta: f64) -> Self {
        let d = spec.dim();
        Self {
            spec,
            delta,
            sqrt_delta: delta.sqrt(),
            sig: vec![0.0; d * d],
            damp: vec![0.0; d * d],
            drift: vec![0.0; d],
            noise: vec![0.0; d],
            x_prev: vec![0.0; d],
        }
    }

    /// `X ← X + Yδ`, `Y ← Y + σ(X,Y)√δ ξ + b(X,Y)δ`, all coefficients at
    /// the pre-step state.
    #[allow(clippy::needless_range_loop)]
    fn step(&mut self, x: &mut [f64], y: &mut [f64], rng: &mut ChaCha8Rng) -> bool {
        let d = x.len();
        self.x_prev.copy_from_slice(x);
        self.spec.sigma_into(&self.x_prev, y, &mut self.sig);
        self.spec.drift_into(&self.x_prev, y, &mut self.damp, &mut self.drift);
        for v in self.noise.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        for i in 0..d {
            x[i] += y[i] * self.delta;
        }
        for i in 0..d {
            let shock: f64 = (0..d).map(|j| self.sig[i * d + j] * self.noise[j]).sum();
            y[i] += shock * self.sqrt_delta + self.drift[i] * self.delta;
        }
        x.iter().chain(y.iter()).all(|v| v.is_finite())
    }
}

/// Deterministic given `(spec, cfg)`. Aborts on the first non-finite state.
pub fn simulate_trajectory(spec: &ModelSpec, cfg: &SimConfig) -> Result<ObservationGrid> {
    cfg.validate()?;
    let d = spec.dim();
    let h = cfg.h()?;
    let delta = h / cfg.substeps as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stepper = Stepper::new(spec, delta);

    let (mut x, mut y) = match &cfg.init {
        InitSpec::Point { x0, y0 } => {
            if x0.len() != d || y0.len() != d {
                return Err(invalid("init", format!("x0 and y0 must have dimension {d}")));
            }
            (x0.clone(), y0.clone())
        }
        InitSpec::StationaryExact => match spec.kind() {
            ModelKind::HarmonicOscillator {
                sigma,
                kappa,
                stiffness,
            } => {
                let (x0, y0) = stationary_oa_draw(sigma, kappa, stiffness, &mut rng)?;
                (vec![x0], vec![y0])
            }
            _ => {
                return Err(Error::Unsupported(format!(
                    "exact stationary initialisation is only available for the harmonic oscillator, not `{}`",
                    spec.name()
                )))
            }
        },
        InitSpec::BurnIn { duration } => {
            let mut x = vec![0.0; d];
            let mut y = vec![0.0; d];
            let steps = (duration / delta).ceil() as usize;
            for k in 0..steps {
                if !stepper.step(&mut x, &mut y, &mut rng) {
                    return Err(Error::BlowUp {
                        step: k,
                        observation: 0,
                    });
                }
            }
            (x, y)
        }
    };

    let points = cfg.n + 1;
    let mut positions = Vec::with_capacity(points * d);
    let mut velocities = cfg.record_velocities.then(|| Vec::with_capacity(points * d));
    positions.extend_from_slice(&x);
    if let Some(v) = velocities.as_mut() {
        v.extend_from_slice(&y);
    }
    for p in 0..cfg.n {
        for s in 0..cfg.substeps {
            if !stepper.step(&mut x, &mut y, &mut rng) {
                return Err(Error::BlowUp {
                    step: p * cfg.substeps + s,
                    observation: p + 1,
                });
            }
        }
        positions.extend_from_slice(&x);
        if let Some(v) = velocities.as_mut() {
            v.extend_from_slice(&y);
        }
    }
    ObservationGrid::new(d, positions, velocities, h, cfg.seed, spec.name())
}
