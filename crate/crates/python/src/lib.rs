//! Python bindings. Matrices cross the boundary as nested lists, grids as
//! flat row-major position/velocity lists.

use core::{
    DiffusionClass, EvalPoint, ExperimentPlan, ExperimentRegime, FieldEstimate, IncrementScheme, InitSpec,
    KernelConfig, ModelConfig, ModelSpec, ObservationGrid, SimConfig,
};
use kinestim_core as core;
use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(err: core::Error) -> PyErr {
    use core::Error::*;
    match err {
        BlowUp { .. } | Io { .. } | Replicate { .. } => PyRuntimeError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

#[pyclass(name = "Model", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    spec: ModelSpec,
    config: ModelConfig,
}

impl PyModel {
    fn from_config(config: ModelConfig) -> PyResult<Self> {
        Ok(Self {
            spec: config.build().map_err(to_py)?,
            config,
        })
    }
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (sigma, kappa, stiffness))]
    fn harmonic_oscillator(sigma: f64, kappa: f64, stiffness: f64) -> PyResult<Self> {
        Self::from_config(ModelConfig::HarmonicOscillator {
            sigma,
            kappa,
            stiffness,
        })
    }

    #[staticmethod]
    fn boundary_thermostat(beta: f64) -> PyResult<Self> {
        Self::from_config(ModelConfig::BoundaryThermostat { beta })
    }

    #[staticmethod]
    fn integrated_brownian(sigma: f64) -> PyResult<Self> {
        Self::from_config(ModelConfig::IntegratedBrownian { sigma })
    }

    #[getter]
    fn name(&self) -> &str {
        self.spec.name()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    /// `b(x, y) = −c(x, y)y − ∇V(x)`.
    fn eval_drift(&self, x: Vec<f64>, y: Vec<f64>) -> PyResult<Vec<f64>> {
        let d = self.spec.dim();
        if x.len() != d || y.len() != d {
            return Err(PyValueError::new_err(format!("x and y must have length {d}")));
        }
        Ok(core::eval_drift(&self.spec, &x, &y).b)
    }

    fn sigma(&self, x: Vec<f64>, y: Vec<f64>) -> Vec<Vec<f64>> {
        rows(&self.spec.sigma(&x, &y))
    }

    fn __repr__(&self) -> String {
        format!("Model({:?})", self.config)
    }
}

#[pyclass(name = "Grid", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGrid {
    grid: ObservationGrid,
}

#[pymethods]
impl PyGrid {
    #[new]
    #[pyo3(signature = (positions, h, velocities = None, dim = 1))]
    fn new(positions: Vec<f64>, h: f64, velocities: Option<Vec<f64>>, dim: usize) -> PyResult<Self> {
        let grid = ObservationGrid::new(dim, positions, velocities, h, 0, "observed").map_err(to_py)?;
        Ok(Self { grid })
    }

    #[getter]
    fn h(&self) -> f64 {
        self.grid.h()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.grid.dim()
    }

    #[getter]
    fn positions(&self) -> Vec<f64> {
        self.grid.positions().to_vec()
    }

    #[getter]
    fn velocities(&self) -> Option<Vec<f64>> {
        self.grid.velocities().map(<[f64]>::to_vec)
    }

    fn __len__(&self) -> usize {
        self.grid.len()
    }
}

#[pyclass(name = "Increments", frozen, skip_from_py_object)]
struct PyIncrements {
    incs: core::DoubleIncrements,
}

#[pymethods]
impl PyIncrements {
    #[getter]
    fn values(&self) -> Vec<f64> {
        self.incs.values().to_vec()
    }

    #[getter]
    fn h(&self) -> f64 {
        self.incs.h()
    }

    fn __len__(&self) -> usize {
        self.incs.count()
    }
}

#[pyclass(name = "Estimate", frozen, skip_from_py_object)]
struct PyEstimate {
    result: core::EstimatorResult,
}

#[pymethods]
impl PyEstimate {
    #[getter]
    fn estimate(&self) -> Vec<Vec<f64>> {
        rows(&self.result.estimate)
    }

    #[getter]
    fn scalar(&self) -> Option<f64> {
        self.result.scalar()
    }

    #[getter]
    fn regime(&self) -> String {
        self.result.regime.to_string()
    }

    #[getter]
    fn n(&self) -> usize {
        self.result.n
    }

    #[getter]
    fn h(&self) -> f64 {
        self.result.h
    }

    /// Asymptotic confidence interval `(lower, upper)`; scalar constant-σ only.
    #[pyo3(signature = (level = 0.95))]
    fn confidence_interval(&self, level: f64) -> PyResult<(f64, f64)> {
        let ci = match self.result.regime {
            core::Regime::InfillConstant => core::ci_infill_constant(&self.result, level),
            _ => core::ci_infinite_constant(&self.result, level),
        }
        .map_err(to_py)?;
        Ok((ci.lower[(0, 0)], ci.upper[(0, 0)]))
    }

    fn __repr__(&self) -> String {
        format!("Estimate({}, {:?})", self.result.regime, rows(&self.result.estimate))
    }
}

fn parse_init(init: &str) -> PyResult<Option<InitSpec>> {
    match init {
        "origin" => Ok(None),
        "stationary" => Ok(Some(InitSpec::StationaryExact)),
        other => Err(PyValueError::new_err(format!(
            "init must be `origin` or `stationary`, got `{other}`"
        ))),
    }
}

/// Euler simulation observed every `h`.
#[pyfunction]
#[pyo3(signature = (model, n, h, seed, substeps = None, init = "origin", record_velocities = true))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    model: &PyModel,
    n: usize,
    h: f64,
    seed: u64,
    substeps: Option<usize>,
    init: &str,
    record_velocities: bool,
) -> PyResult<PyGrid> {
    let mut cfg = SimConfig::new(n, h, seed);
    if let Some(m) = substeps {
        cfg = cfg.with_substeps(m);
    }
    if let Some(i) = parse_init(init)? {
        cfg = cfg.with_init(i);
    }
    if !record_velocities {
        cfg = cfg.positions_only();
    }
    let spec = model.spec.clone();
    let grid = py.detach(|| core::simulate_trajectory(&spec, &cfg)).map_err(to_py)?;
    Ok(PyGrid { grid })
}

#[pyfunction]
#[pyo3(signature = (grid, count, scheme = "even_grid"))]
fn double_increments(grid: &PyGrid, count: usize, scheme: &str) -> PyResult<PyIncrements> {
    let scheme = match scheme {
        "even_grid" => IncrementScheme::EvenGrid,
        "consecutive" => IncrementScheme::Consecutive,
        other => return Err(PyValueError::new_err(format!("unknown scheme `{other}`"))),
    };
    let incs = core::double_increments(&grid.grid, scheme, count).map_err(to_py)?;
    Ok(PyIncrements { incs })
}

#[pyfunction]
fn window_count(horizon: f64, h: f64) -> usize {
    core::window_count(horizon, h)
}

#[pyfunction]
fn infill_constant_sigma(incs: &PyIncrements, horizon: f64) -> PyResult<PyEstimate> {
    let result = core::infill_constant_sigma(&incs.incs, horizon).map_err(to_py)?;
    Ok(PyEstimate { result })
}

#[pyfunction]
fn infill_qv(incs: &PyIncrements, t: f64) -> PyResult<PyEstimate> {
    let result = core::infill_qv(&incs.incs, t).map_err(to_py)?;
    Ok(PyEstimate { result })
}

#[pyfunction]
#[pyo3(signature = (incs, n, constant_sigma = true))]
fn infinite_horizon(incs: &PyIncrements, n: usize, constant_sigma: bool) -> PyResult<PyEstimate> {
    let class = if constant_sigma {
        DiffusionClass::Constant
    } else {
        DiffusionClass::General
    };
    let result = core::infinite_horizon(&incs.incs, n, class).map_err(to_py)?;
    Ok(PyEstimate { result })
}

#[pyfunction]
fn limit_integral(grid: &PyGrid, model: &PyModel, t: f64) -> PyResult<Vec<Vec<f64>>> {
    core::limit_integral(&grid.grid, &model.spec, t)
        .map(|m| rows(&m))
        .map_err(to_py)
}

fn kernel_config(b1: f64, b2: f64, points: Vec<(f64, f64)>, period: Option<f64>) -> KernelConfig {
    let pts = points.into_iter().map(|(x, y)| EvalPoint::scalar(x, y)).collect();
    let cfg = KernelConfig::new(b1, b2, pts);
    match period {
        Some(p) => cfg.with_period(p),
        None => cfg,
    }
}

/// Per point: `(density, value or None)`; `None` marks a point below the floor.
fn field_values(field: &FieldEstimate) -> Vec<(f64, Option<f64>)> {
    field
        .points
        .iter()
        .map(|p| (p.density, p.value.as_ref().map(|v| v[0])))
        .collect()
}

/// Scalar-model kernel fields at `(x, y)` points.
#[pyfunction]
#[pyo3(signature = (grid, points, b1, b2, field = "density", period = None))]
fn kernel_field(
    py: Python<'_>,
    grid: &PyGrid,
    points: Vec<(f64, f64)>,
    b1: f64,
    b2: f64,
    field: &str,
    period: Option<f64>,
) -> PyResult<Vec<(f64, Option<f64>)>> {
    let cfg = kernel_config(b1, b2, points, period);
    let g = &grid.grid;
    let out = py.detach(|| match field {
        "density" => {
            core::kde_density(g, &cfg).map(|f| f.points.iter().map(|p| (p.density, Some(p.density))).collect())
        }
        "gradient" => core::kde_gradient_x(g, &cfg).map(|f| field_values(&f)),
        "score" => core::score_estimator(g, &cfg).map(|f| field_values(&f)),
        "drift" => core::nw_drift(g, &cfg).map(|f| field_values(&f.drift)),
        other => Err(core::Error::InvalidParameter {
            name: "field".into(),
            reason: format!("unknown field `{other}`"),
        }),
    });
    out.map_err(to_py)
}

/// `σσ*(x)` from the Nadaraya–Watson drift at the two velocity basis points.
#[pyfunction]
#[pyo3(signature = (grid, x, b1, b2, basis_scale = 1.0, period = None))]
fn diffusion_at(grid: &PyGrid, x: f64, b1: f64, b2: f64, basis_scale: f64, period: Option<f64>) -> PyResult<f64> {
    let pts = core::diffusion_eval_points(&[x], basis_scale);
    let mut cfg = KernelConfig::new(b1, b2, pts);
    if let Some(p) = period {
        cfg = cfg.with_period(p);
    }
    let fields = core::nw_drift(&grid.grid, &cfg).map_err(to_py)?;
    core::diffusion_from_drift(&fields.drift, &[x], basis_scale)
        .map(|m| m[(0, 0)])
        .map_err(to_py)
}

/// Monte Carlo over `replicates` paths; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (model, regime, gamma, n, replicates, base_seed = 1, level = 0.95, horizon = 1.0, init = "origin"))]
#[allow(clippy::too_many_arguments)]
fn run_experiment<'py>(
    py: Python<'py>,
    model: &PyModel,
    regime: &str,
    gamma: f64,
    n: usize,
    replicates: usize,
    base_seed: u64,
    level: f64,
    horizon: f64,
    init: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let regime = match regime {
        "infill_constant" => ExperimentRegime::InfillConstant,
        "infinite_horizon" => ExperimentRegime::InfiniteHorizon,
        "qv_vs_integral" => ExperimentRegime::QvVsIntegral,
        other => return Err(PyValueError::new_err(format!("unknown regime `{other}`"))),
    };
    let mut plan = ExperimentPlan::new(model.config.clone(), regime, gamma, n, replicates).with_seed(base_seed);
    plan.level = level;
    plan.horizon = horizon;
    plan.init = parse_init(init)?;
    let report = py.detach(|| core::run_plan(&plan)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("config_hash", &report.config_hash)?;
    d.set_item("rmse", report.rmse)?;
    d.set_item("ecov", report.ecov)?;
    d.set_item("rmse_limit", report.rmse_limit)?;
    d.set_item("mse_over_sigma2", report.mse_over_sigma2)?;
    d.set_item("median_relative_error", report.median_relative_error)?;
    d.set_item("seeds", &report.seeds)?;
    d.set_item("estimates", &report.estimates)?;
    d.set_item("intervals", &report.intervals)?;
    d.set_item("limits", &report.limits)?;
    Ok(d)
}

#[pymodule]
fn kinestim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyGrid>()?;
    m.add_class::<PyIncrements>()?;
    m.add_class::<PyEstimate>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(double_increments, m)?)?;
    m.add_function(wrap_pyfunction!(window_count, m)?)?;
    m.add_function(wrap_pyfunction!(infill_constant_sigma, m)?)?;
    m.add_function(wrap_pyfunction!(infill_qv, m)?)?;
    m.add_function(wrap_pyfunction!(infinite_horizon, m)?)?;
    m.add_function(wrap_pyfunction!(limit_integral, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_field, m)?)?;
    m.add_function(wrap_pyfunction!(diffusion_at, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
