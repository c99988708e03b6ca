//! Coefficients of the stochastic damping Hamiltonian system
//!
//! ```text
//! dX = Y dt
//! dY = σ(X, Y) dW − (c(X, Y) Y + ∇V(X)) dt
//! ```
//!
//! plus the benchmark models used by the experiments. Matrices are stored
//! row-major in `d * d` slices so the simulation loop never allocates.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// `(x, y, out)` with `out` a row-major `d * d` matrix.
pub type MatrixFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
/// `(x, out)` with `out` a length-`d` vector.
pub type VectorFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

const SYMMETRY_TOL: f64 = 1e-12;
const FLUCTUATION_DISSIPATION_TOL: f64 = 1e-12;

/// Which closed-form family a spec came from. Simulation uses this to pick
/// exact stationary initialisation when one exists.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelKind {
    HarmonicOscillator { sigma: f64, kappa: f64, stiffness: f64 },
    BoundaryThermostat { beta: f64 },
    IntegratedBrownian { sigma: f64 },
    Custom,
}

/// Box of `(x, y)` values on which coefficient assumptions are sampled.
/// Every coordinate of `x` ranges over `x_range`, every coordinate of `y`
/// over `y_range`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationBox {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub points_per_axis: usize,
}

impl Default for ValidationBox {
    fn default() -> Self {
        Self {
            x_range: (-5.0, 5.0),
            y_range: (-5.0, 5.0),
            points_per_axis: 21,
        }
    }
}

impl ValidationBox {
    /// Lattice for `d = 1`; a fixed-seed uniform cloud of the same size
    /// otherwise. Corners are always included.
    pub fn points(&self, dim: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
        let k = self.points_per_axis.max(2);
        let lerp = |(lo, hi): (f64, f64), i: usize| lo + (hi - lo) * i as f64 / (k - 1) as f64;
        let mut out = Vec::with_capacity(k * k);
        if dim == 1 {
            for i in 0..k {
                for j in 0..k {
                    out.push((vec![lerp(self.x_range, i)], vec![lerp(self.y_range, j)]));
                }
            }
            return out;
        }
        for cx in [self.x_range.0, self.x_range.1] {
            for cy in [self.y_range.0, self.y_range.1] {
                out.push((vec![cx; dim], vec![cy; dim]));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_ba5e);
        for _ in 0..k * k {
            let x = (0..dim)
                .map(|_| rng.random_range(self.x_range.0..=self.x_range.1))
                .collect();
            let y = (0..dim)
                .map(|_| rng.random_range(self.y_range.0..=self.y_range.1))
                .collect();
            out.push((x, y));
        }
        out
    }
}

/// User-supplied coefficients. `sigma` must be the symmetric square root of
/// the diffusion matrix.
#[derive(Clone)]
pub struct CustomModel {
    pub name: String,
    pub dim: usize,
    pub sigma: MatrixFn,
    pub damping: MatrixFn,
    pub grad_potential: VectorFn,
    pub beta: Option<f64>,
    pub constant_sigma: bool,
    pub sigma_depends_on_velocity: bool,
    /// Lower bound `σ₀` with `σ − σ₀·Id ⪰ 0` on the validation box.
    /// Zero admits degenerate, noise-free models.
    pub ellipticity_floor: f64,
    pub validation: ValidationBox,
}

/// Validated, immutable model. Cheap to clone; closures are shared.
#[derive(Clone)]
pub struct ModelSpec {
    name: String,
    dim: usize,
    sigma: MatrixFn,
    damping: MatrixFn,
    grad_potential: VectorFn,
    beta: Option<f64>,
    constant_sigma: bool,
    sigma_depends_on_velocity: bool,
    ellipticity_floor: f64,
    kind: ModelKind,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("beta", &self.beta)
            .field("constant_sigma", &self.constant_sigma)
            .field("kind", &self.kind)
            .finish_non_exhaustive()
    }
}

/// Drift `b(x, y) = −(c(x, y)·y + ∇V(x))` at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftEval {
    pub b: Vec<f64>,
}

/// Serializable description of a model; what config files carry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    HarmonicOscillator {
        sigma: f64,
        kappa: f64,
        #[serde(alias = "D")]
        stiffness: f64,
    },
    BoundaryThermostat {
        beta: f64,
    },
    /// `c = 0`, `V = 0`, constant scalar `σ`: velocity is a Brownian motion.
    IntegratedBrownian {
        sigma: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinModel {
    HarmonicOscillator,
    BoundaryThermostat,
    IntegratedBrownian,
}

impl std::str::FromStr for BuiltinModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "harmonic_oscillator" => Ok(Self::HarmonicOscillator),
            "boundary_thermostat" => Ok(Self::BoundaryThermostat),
            "integrated_brownian" => Ok(Self::IntegratedBrownian),
            other => Err(invalid("model", format!("unknown builtin model `{other}`"))),
        }
    }
}

fn param(params: &BTreeMap<String, f64>, keys: &[&str]) -> Result<f64> {
    keys.iter()
        .find_map(|k| params.get(*k).copied())
        .ok_or_else(|| invalid(keys[0], "missing"))
}

/// Builds one of the shipped models from a name and a parameter map.
/// Custom models go through [`ModelSpec::custom`] since they need closures.
pub fn builtin_model(name: BuiltinModel, params: &BTreeMap<String, f64>) -> Result<ModelSpec> {
    let config = match name {
        BuiltinModel::HarmonicOscillator => ModelConfig::HarmonicOscillator {
            sigma: param(params, &["sigma"])?,
            kappa: param(params, &["kappa"])?,
            stiffness: param(params, &["D", "stiffness"])?,
        },
        BuiltinModel::BoundaryThermostat => ModelConfig::BoundaryThermostat {
            beta: param(params, &["beta"])?,
        },
        BuiltinModel::IntegratedBrownian => ModelConfig::IntegratedBrownian {
            sigma: param(params, &["sigma"])?,
        },
    };
    config.build()
}

fn require_positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(invalid(name, format!("must be a finite value > 0, got {value}")))
    }
}

impl ModelConfig {
    pub fn build(&self) -> Result<ModelSpec> {
        match *self {
            ModelConfig::HarmonicOscillator {
                sigma,
                kappa,
                stiffness,
            } => ModelSpec::harmonic_oscillator(sigma, kappa, stiffness),
            ModelConfig::BoundaryThermostat { beta } => ModelSpec::boundary_thermostat(beta),
            ModelConfig::IntegratedBrownian { sigma } => ModelSpec::integrated_brownian(sigma),
        }
    }
}

impl ModelSpec {
    /// Linear oscillator with white-noise forcing: `σ` constant, `c ≡ κ`,
    /// `∇V(x) = D·x`.
    pub fn harmonic_oscillator(sigma: f64, kappa: f64, stiffness: f64) -> Result<Self> {
        require_positive("sigma", sigma)?;
        require_positive("kappa", kappa)?;
        require_positive("D", stiffness)?;
        ModelSpec::custom(CustomModel {
            name: "harmonic_oscillator".into(),
            dim: 1,
            sigma: Arc::new(move |_, _, out| out[0] = sigma),
            damping: Arc::new(move |_, _, out| out[0] = kappa),
            grad_potential: Arc::new(move |x, out| out[0] = stiffness * x[0]),
            beta: None,
            constant_sigma: true,
            sigma_depends_on_velocity: false,
            ellipticity_floor: sigma,
            validation: ValidationBox::default(),
        })
        .map(|spec| {
            spec.with_kind(ModelKind::HarmonicOscillator {
                sigma,
                kappa,
                stiffness,
            })
        })
    }

    /// Thermostat acting mostly away from the origin, in Langevin form with
    /// `V(x) = −cos x`, `s²(x) = exp(−2/(x²+1))`, `σ = √(2/β)·s`, `c = s²`.
    pub fn boundary_thermostat(beta: f64) -> Result<Self> {
        require_positive("beta", beta)?;
        let amplitude = (2.0 / beta).sqrt();
        ModelSpec::custom(CustomModel {
            name: "boundary_thermostat".into(),
            dim: 1,
            sigma: Arc::new(move |x, _, out| out[0] = amplitude * (-1.0 / (x[0] * x[0] + 1.0)).exp()),
            damping: Arc::new(|x, _, out| out[0] = (-2.0 / (x[0] * x[0] + 1.0)).exp()),
            grad_potential: Arc::new(|x, out| out[0] = x[0].sin()),
            beta: Some(beta),
            constant_sigma: false,
            sigma_depends_on_velocity: false,
            ellipticity_floor: amplitude * (-1.0f64).exp(),
            validation: ValidationBox::default(),
        })
        .map(|spec| spec.with_kind(ModelKind::BoundaryThermostat { beta }))
    }

    /// No damping, no force: the velocity is `σ·W`.
    pub fn integrated_brownian(sigma: f64) -> Result<Self> {
        require_positive("sigma", sigma)?;
        ModelSpec::custom(CustomModel {
            name: "integrated_brownian".into(),
            dim: 1,
            sigma: Arc::new(move |_, _, out| out[0] = sigma),
            damping: Arc::new(|_, _, out| out[0] = 0.0),
            grad_potential: Arc::new(|_, out| out[0] = 0.0),
            beta: None,
            constant_sigma: true,
            sigma_depends_on_velocity: false,
            ellipticity_floor: sigma,
            validation: ValidationBox::default(),
        })
        .map(|spec| spec.with_kind(ModelKind::IntegratedBrownian { sigma }))
    }

    /// Validates symmetry, ellipticity and (when `beta` is set) the
    /// fluctuation-dissipation relation on the declared box.
    pub fn custom(model: CustomModel) -> Result<Self> {
        let fail = |reason: String| Error::ModelValidation {
            model: model.name.clone(),
            reason,
        };
        if model.dim == 0 {
            return Err(invalid("dim", "must be >= 1"));
        }
        if !(model.ellipticity_floor >= 0.0 && model.ellipticity_floor.is_finite()) {
            return Err(invalid("ellipticity_floor", "must be finite and >= 0"));
        }
        if let Some(beta) = model.beta {
            require_positive("beta", beta)?;
        }
        let d = model.dim;
        let mut sig = vec![0.0; d * d];
        let mut damp = vec![0.0; d * d];
        let mut grad = vec![0.0; d];
        for (x, y) in model.validation.points(d) {
            (model.sigma)(&x, &y, &mut sig);
            (model.damping)(&x, &y, &mut damp);
            (model.grad_potential)(&x, &mut grad);
            if sig.iter().chain(&damp).chain(&grad).any(|v| !v.is_finite()) {
                return Err(fail(format!("non-finite coefficient at x={x:?}, y={y:?}")));
            }
            for i in 0..d {
                for j in 0..i {
                    let (a, b) = (sig[i * d + j], sig[j * d + i]);
                    if (a - b).abs() > SYMMETRY_TOL * a.abs().max(b.abs()).max(1.0) {
                        return Err(fail(format!("sigma not symmetric at x={x:?}, y={y:?}")));
                    }
                }
            }
            let min_eig = min_eigenvalue(&sig, d);
            if min_eig < model.ellipticity_floor - SYMMETRY_TOL {
                return Err(fail(format!(
                    "sigma - {}·Id not positive semidefinite at x={x:?}, y={y:?} (min eigenvalue {min_eig})",
                    model.ellipticity_floor
                )));
            }
            if let Some(beta) = model.beta {
                let sq = square(&sig, d);
                for k in 0..d * d {
                    if (sq[k] - 2.0 / beta * damp[k]).abs() > FLUCTUATION_DISSIPATION_TOL {
                        return Err(fail(format!(
                            "fluctuation-dissipation σσ* = (2/β)c violated at x={x:?}, y={y:?}"
                        )));
                    }
                }
            }
        }
        Ok(ModelSpec {
            name: model.name,
            dim: d,
            sigma: model.sigma,
            damping: model.damping,
            grad_potential: model.grad_potential,
            beta: model.beta,
            constant_sigma: model.constant_sigma,
            sigma_depends_on_velocity: model.sigma_depends_on_velocity,
            ellipticity_floor: model.ellipticity_floor,
            kind: ModelKind::Custom,
        })
    }

    fn with_kind(mut self, kind: ModelKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn beta(&self) -> Option<f64> {
        self.beta
    }

    pub fn constant_sigma(&self) -> bool {
        self.constant_sigma
    }

    pub fn sigma_depends_on_velocity(&self) -> bool {
        self.sigma_depends_on_velocity
    }

    pub fn ellipticity_floor(&self) -> f64 {
        self.ellipticity_floor
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn sigma_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.sigma)(x, y, out)
    }

    pub fn damping_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.damping)(x, y, out)
    }

    pub fn grad_potential_into(&self, x: &[f64], out: &mut [f64]) {
        (self.grad_potential)(x, out)
    }

    pub fn sigma(&self, x: &[f64], y: &[f64]) -> DMatrix<f64> {
        let mut buf = vec![0.0; self.dim * self.dim];
        self.sigma_into(x, y, &mut buf);
        DMatrix::from_row_slice(self.dim, self.dim, &buf)
    }

    /// `σσ*` at a point; the quantity every estimator targets.
    pub fn sigma_squared(&self, x: &[f64], y: &[f64]) -> DMatrix<f64> {
        let s = self.sigma(x, y);
        &s * s.transpose()
    }

    pub fn damping(&self, x: &[f64], y: &[f64]) -> DMatrix<f64> {
        let mut buf = vec![0.0; self.dim * self.dim];
        self.damping_into(x, y, &mut buf);
        DMatrix::from_row_slice(self.dim, self.dim, &buf)
    }

    pub fn grad_potential(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.grad_potential_into(x, &mut out);
        out
    }

    /// Writes `b(x, y)` into `out`; `damp` is a `d * d` scratch buffer.
    pub(crate) fn drift_into(&self, x: &[f64], y: &[f64], damp: &mut [f64], out: &mut [f64]) {
        let d = self.dim;
        self.damping_into(x, y, damp);
        self.grad_potential_into(x, out);
        for i in 0..d {
            let cy: f64 = (0..d).map(|j| damp[i * d + j] * y[j]).sum();
            out[i] = -(cy + out[i]);
        }
    }
}

pub fn eval_drift(spec: &ModelSpec, x: &[f64], y: &[f64]) -> DriftEval {
    let d = spec.dim();
    let mut damp = vec![0.0; d * d];
    let mut b = vec![0.0; d];
    spec.drift_into(x, y, &mut damp, &mut b);
    DriftEval { b }
}

fn square(m: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = (0..d).map(|k| m[i * d + k] * m[j * d + k]).sum();
        }
    }
    out
}

fn min_eigenvalue(m: &[f64], d: usize) -> f64 {
    if d == 1 {
        return m[0];
    }
    let mat = DMatrix::from_row_slice(d, d, m);
    let sym = (&mat + mat.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}
