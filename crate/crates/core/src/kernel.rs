//! Kernel estimators on fully observed `(X, Y)` paths: invariant density,
//! its position gradient, the score `∇ₓp/p`, the Nadaraya–Watson drift and
//! the diffusion matrix recovered from the drift's slope in `y`.
//!
//! The kernel is the product Epanechnikov kernel
//! `K(u, v) = Π (3/4)(1 − u_k²)₊ · Π (3/4)(1 − v_k²)₊`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::simulate::ObservationGrid;

pub const DEFAULT_DENSITY_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    #[default]
    EpanechnikovProduct,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalPoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl EvalPoint {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        Self { x, y }
    }

    pub fn scalar(x: f64, y: f64) -> Self {
        Self { x: vec![x], y: vec![y] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelConfig {
    pub family: KernelFamily,
    /// Position bandwidth.
    pub b1: f64,
    /// Velocity bandwidth.
    pub b2: f64,
    pub density_floor: f64,
    pub eval_points: Vec<EvalPoint>,
    /// When set, position differences are taken modulo this period. Only
    /// meaningful for quantities that are periodic in `x` (e.g. the score
    /// of a periodic potential).
    pub position_period: Option<f64>,
}

impl KernelConfig {
    pub fn new(b1: f64, b2: f64, eval_points: Vec<EvalPoint>) -> Self {
        Self {
            family: KernelFamily::EpanechnikovProduct,
            b1,
            b2,
            density_floor: DEFAULT_DENSITY_FLOOR,
            eval_points,
            position_period: None,
        }
    }

    /// Bandwidths `n^(−a)`, `n^(−b)`.
    pub fn power_law(n: usize, position_exponent: f64, velocity_exponent: f64, eval_points: Vec<EvalPoint>) -> Self {
        let n = n as f64;
        Self::new(n.powf(-position_exponent), n.powf(-velocity_exponent), eval_points)
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.density_floor = floor;
        self
    }

    pub fn with_period(mut self, period: f64) -> Self {
        self.position_period = Some(period);
        self
    }

    fn validate(&self, dim: usize) -> Result<()> {
        for (name, v) in [("b1", self.b1), ("b2", self.b2), ("density_floor", self.density_floor)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be finite and > 0, got {v}")));
            }
        }
        if let Some(p) = self.position_period {
            if !(p > 0.0 && p.is_finite()) {
                return Err(invalid("position_period", "must be finite and > 0"));
            }
        }
        if let Some(bad) = self.eval_points.iter().find(|p| p.x.len() != dim || p.y.len() != dim) {
            return Err(invalid(
                "eval_points",
                format!("point {:?}/{:?} does not have dimension {dim}", bad.x, bad.y),
            ));
        }
        Ok(())
    }
}

/// Rectangular `(x, y)` lattice for `d = 1`.
pub fn lattice(x: (f64, f64, usize), y: (f64, f64, usize)) -> Vec<EvalPoint> {
    let axis = |(lo, hi, k): (f64, f64, usize)| -> Vec<f64> {
        if k <= 1 {
            return vec![lo];
        }
        (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect()
    };
    let xs = axis(x);
    let ys = axis(y);
    xs.iter()
        .flat_map(|&xv| ys.iter().map(move |&yv| EvalPoint::scalar(xv, yv)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Density,
    GradientX,
    Score,
    Drift,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldPoint {
    pub point: EvalPoint,
    /// Kernel density at the point (over the samples used by this field).
    pub density: f64,
    /// `None` where the density fell below the floor for a ratio estimator.
    pub value: Option<Vec<f64>>,
}

impl FieldPoint {
    pub fn valid(&self) -> bool {
        self.value.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldEstimate {
    pub kind: FieldKind,
    pub points: Vec<FieldPoint>,
}

impl FieldEstimate {
    pub fn find(&self, x: &[f64], y: &[f64]) -> Option<&FieldPoint> {
        const TOL: f64 = 1e-12;
        let close = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(u, v)| (u - v).abs() <= TOL);
        self.points
            .iter()
            .find(|p| close(&p.point.x, x) && close(&p.point.y, y))
    }

    pub fn values(&self) -> impl Iterator<Item = Option<&[f64]>> {
        self.points.iter().map(|p| p.value.as_deref())
    }
}

fn epanechnikov(u: f64) -> f64 {
    if u.abs() < 1.0 {
        0.75 * (1.0 - u * u)
    } else {
        0.0
    }
}

fn epanechnikov_derivative(u: f64) -> f64 {
    if u.abs() < 1.0 {
        -1.5 * u
    } else {
        0.0
    }
}

fn wrap(diff: f64, period: Option<f64>) -> f64 {
    match period {
        Some(p) => diff - p * (diff / p).round(),
        None => diff,
    }
}

/// Sample indices sorted by first position coordinate, so each evaluation
/// only visits samples within one bandwidth.
struct SampleIndex {
    keys: Vec<f64>,
    order: Vec<usize>,
    period: Option<f64>,
}

impl SampleIndex {
    fn new(grid: &ObservationGrid, samples: usize, period: Option<f64>) -> Self {
        let key = |i: usize| {
            let x = grid.position(i)[0];
            match period {
                Some(p) => x.rem_euclid(p),
                None => x,
            }
        };
        let mut order: Vec<usize> = (0..samples).collect();
        order.sort_by(|&a, &b| key(a).total_cmp(&key(b)));
        let keys = order.iter().map(|&i| key(i)).collect();
        Self { keys, order, period }
    }

    fn range(&self, lo: f64, hi: f64) -> &[usize] {
        let start = self.keys.partition_point(|k| *k < lo);
        let end = self.keys.partition_point(|k| *k <= hi);
        &self.order[start..end.max(start)]
    }

    /// Samples whose first coordinate lies within `radius` of `centre`.
    fn near(&self, centre: f64, radius: f64, mut f: impl FnMut(usize)) {
        match self.period {
            None => self.range(centre - radius, centre + radius).iter().copied().for_each(f),
            Some(p) if 2.0 * radius >= p => self.order.iter().copied().for_each(f),
            Some(p) => {
                let c = centre.rem_euclid(p);
                let (lo, hi) = (c - radius, c + radius);
                if lo < 0.0 {
                    self.range(0.0, hi).iter().copied().for_each(&mut f);
                    self.range(lo + p, p).iter().copied().for_each(&mut f);
                } else if hi >= p {
                    self.range(lo, p).iter().copied().for_each(&mut f);
                    self.range(0.0, hi - p).iter().copied().for_each(&mut f);
                } else {
                    self.range(lo, hi).iter().copied().for_each(f);
                }
            }
        }
    }
}

/// Per-point kernel sums over a sample range `0..samples`.
struct KernelSums {
    /// `Σ K(...)`
    weight: f64,
    /// `Σ ∇_u K(...)`, length `d`.
    grad: Vec<f64>,
    /// `Σ K(...)·rᵢ`, length `d`; only when responses are supplied.
    response: Vec<f64>,
}

#[allow(clippy::needless_range_loop)]
fn kernel_sums(
    grid: &ObservationGrid,
    index: &SampleIndex,
    cfg: &KernelConfig,
    point: &EvalPoint,
    with_grad: bool,
    responses: Option<&[f64]>,
) -> KernelSums {
    let d = grid.dim();
    let velocities = grid.velocities().expect("checked by caller");
    let mut sums = KernelSums {
        weight: 0.0,
        grad: vec![0.0; d],
        response: vec![0.0; d],
    };
    let mut u = vec![0.0; d];
    let mut ku = vec![0.0; d];
    index.near(point.x[0], cfg.b1, |i| {
        let xi = grid.position(i);
        let yi = &velocities[i * d..(i + 1) * d];
        let mut kv = 1.0;
        for k in 0..d {
            kv *= epanechnikov((point.y[k] - yi[k]) / cfg.b2);
            if kv == 0.0 {
                return;
            }
        }
        let mut kx = 1.0;
        for k in 0..d {
            u[k] = wrap(point.x[k] - xi[k], cfg.position_period) / cfg.b1;
            ku[k] = epanechnikov(u[k]);
            kx *= ku[k];
        }
        if with_grad {
            for j in 0..d {
                let others: f64 = (0..d).filter(|&k| k != j).map(|k| ku[k]).product();
                sums.grad[j] += epanechnikov_derivative(u[j]) * others * kv;
            }
        }
        let w = kx * kv;
        if w == 0.0 {
            return;
        }
        sums.weight += w;
        if let Some(r) = responses {
            for k in 0..d {
                sums.response[k] += w * r[i * d + k];
            }
        }
    });
    sums
}

fn prepare(grid: &ObservationGrid, cfg: &KernelConfig, what: &'static str, min_points: usize) -> Result<()> {
    if !grid.has_velocities() {
        return Err(Error::MissingVelocities(what));
    }
    cfg.validate(grid.dim())?;
    if grid.len() < min_points {
        return Err(Error::Sizing {
            what,
            required: min_points,
            available: grid.len(),
        });
    }
    Ok(())
}

fn normaliser(samples: usize, cfg: &KernelConfig, d: usize, extra_b1: i32) -> f64 {
    let di = d as i32;
    1.0 / (samples as f64 * cfg.b1.powi(di + extra_b1) * cfg.b2.powi(di))
}

/// `p̃(x, y) = (1/(N·b1ᵈ·b2ᵈ))·Σᵢ K((x − Xᵢ)/b1, (y − Yᵢ)/b2)` over all `N`
/// grid points.
pub fn kde_density(grid: &ObservationGrid, cfg: &KernelConfig) -> Result<FieldEstimate> {
    prepare(grid, cfg, "kernel density", 1)?;
    let n = grid.len();
    let index = SampleIndex::new(grid, n, cfg.position_period);
    let norm = normaliser(n, cfg, grid.dim(), 0);
    let points = cfg
        .eval_points
        .iter()
        .map(|pt| {
            let p = kernel_sums(grid, &index, cfg, pt, false, None).weight * norm;
            FieldPoint {
                point: pt.clone(),
                density: p,
                value: Some(vec![p]),
            }
        })
        .collect();
    Ok(FieldEstimate {
        kind: FieldKind::Density,
        points,
    })
}

/// `∇ₓp̃(x, y) = (1/(N·b1^{d+1}·b2ᵈ))·Σᵢ ∇_u K(...)`.
pub fn kde_gradient_x(grid: &ObservationGrid, cfg: &KernelConfig) -> Result<FieldEstimate> {
    prepare(grid, cfg, "kernel density gradient", 1)?;
    let n = grid.len();
    let d = grid.dim();
    let index = SampleIndex::new(grid, n, cfg.position_period);
    let (norm, gnorm) = (normaliser(n, cfg, d, 0), normaliser(n, cfg, d, 1));
    let points = cfg
        .eval_points
        .iter()
        .map(|pt| {
            let s = kernel_sums(grid, &index, cfg, pt, true, None);
            FieldPoint {
                point: pt.clone(),
                density: s.weight * norm,
                value: Some(s.grad.iter().map(|g| g * gnorm).collect()),
            }
        })
        .collect();
    Ok(FieldEstimate {
        kind: FieldKind::GradientX,
        points,
    })
}

/// `∇ₓp̃/p̃`, estimating `−β∇V` under a Boltzmann invariant law. Points
/// where `p̃` is below the floor are left invalid.
pub fn score_estimator(grid: &ObservationGrid, cfg: &KernelConfig) -> Result<FieldEstimate> {
    prepare(grid, cfg, "score estimator", 1)?;
    let n = grid.len();
    let d = grid.dim();
    let index = SampleIndex::new(grid, n, cfg.position_period);
    let (norm, gnorm) = (normaliser(n, cfg, d, 0), normaliser(n, cfg, d, 1));
    let points = cfg
        .eval_points
        .iter()
        .map(|pt| {
            let s = kernel_sums(grid, &index, cfg, pt, true, None);
            let p = s.weight * norm;
            let value = (p >= cfg.density_floor).then(|| s.grad.iter().map(|g| g * gnorm / p).collect());
            FieldPoint {
                point: pt.clone(),
                density: p,
                value,
            }
        })
        .collect();
    Ok(FieldEstimate {
        kind: FieldKind::Score,
        points,
    })
}

/// Result of [`nw_drift`]: the kernel-weighted mean velocity increment `Hₙ`
/// and the drift `ĝ = Hₙ/p̃`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftFields {
    pub h_n: FieldEstimate,
    pub drift: FieldEstimate,
}

/// `Hₙ(x, y) = (1/((N−1)·b1ᵈ·b2ᵈ))·Σ_{i<N−1} K(...)·(Y_{i+1} − Y_i)/h` and
/// `ĝ = Hₙ/p̃`, with `p̃` taken over the same `N − 1` samples so the ratio is
/// the usual Nadaraya–Watson weighted mean.
pub fn nw_drift(grid: &ObservationGrid, cfg: &KernelConfig) -> Result<DriftFields> {
    prepare(grid, cfg, "Nadaraya-Watson drift", 2)?;
    let d = grid.dim();
    let h = grid.h();
    let velocities = grid.velocities().expect("checked by prepare");
    let increments: Vec<f64> = (0..(grid.len() - 1) * d)
        .map(|k| (velocities[k + d] - velocities[k]) / h)
        .collect();
    nw_weighted_increments(grid, &increments, cfg)
}

/// The Nadaraya–Watson sums with arbitrary responses `rᵢ` (flat, `(N−1)·d`)
/// attached to the first `N − 1` states of `grid`:
/// `Hₙ = (1/((N−1)·b1ᵈ·b2ᵈ))·Σᵢ K(...)·rᵢ`, linear in `r`.
pub fn nw_weighted_increments(grid: &ObservationGrid, responses: &[f64], cfg: &KernelConfig) -> Result<DriftFields> {
    prepare(grid, cfg, "Nadaraya-Watson drift", 2)?;
    let samples = grid.len() - 1;
    let d = grid.dim();
    if responses.len() != samples * d {
        return Err(invalid(
            "responses",
            format!("expected {} values, got {}", samples * d, responses.len()),
        ));
    }
    let index = SampleIndex::new(grid, samples, cfg.position_period);
    let norm = normaliser(samples, cfg, d, 0);
    let mut h_points = Vec::with_capacity(cfg.eval_points.len());
    let mut g_points = Vec::with_capacity(cfg.eval_points.len());
    for pt in &cfg.eval_points {
        let s = kernel_sums(grid, &index, cfg, pt, false, Some(responses));
        let p = s.weight * norm;
        let hn: Vec<f64> = s.response.iter().map(|r| r * norm).collect();
        let g = (p >= cfg.density_floor).then(|| hn.iter().map(|v| v / p).collect());
        h_points.push(FieldPoint {
            point: pt.clone(),
            density: p,
            value: Some(hn),
        });
        g_points.push(FieldPoint {
            point: pt.clone(),
            density: p,
            value: g,
        });
    }
    Ok(DriftFields {
        h_n: FieldEstimate {
            kind: FieldKind::Drift,
            points: h_points,
        },
        drift: FieldEstimate {
            kind: FieldKind::Drift,
            points: g_points,
        },
    })
}

/// Points `(x, 0)` and `(x, s·e_j)` needed by [`diffusion_from_drift`].
pub fn diffusion_eval_points(x: &[f64], basis_scale: f64) -> Vec<EvalPoint> {
    let d = x.len();
    let mut pts = vec![EvalPoint::new(x.to_vec(), vec![0.0; d])];
    for j in 0..d {
        let mut y = vec![0.0; d];
        y[j] = basis_scale;
        pts.push(EvalPoint::new(x.to_vec(), y));
    }
    pts
}

/// `(ss*)_ij ≈ −⟨ĝ(x, s·e_j) − ĝ(x, 0), e_i⟩ / s`.
pub fn diffusion_from_drift(gbar: &FieldEstimate, x: &[f64], basis_scale: f64) -> Result<DMatrix<f64>> {
    if !(basis_scale != 0.0 && basis_scale.is_finite()) {
        return Err(invalid("basis_scale", "must be finite and non-zero"));
    }
    let d = x.len();
    let lookup = |y: &[f64]| -> std::result::Result<&[f64], String> {
        match gbar.find(x, y) {
            Some(FieldPoint { value: Some(v), .. }) if v.len() == d => Ok(v.as_slice()),
            Some(_) => Err(format!("(x={x:?}, y={y:?}) invalid")),
            None => Err(format!("(x={x:?}, y={y:?}) not evaluated")),
        }
    };
    let eval_points = diffusion_eval_points(x, basis_scale);
    let mut missing = Vec::new();
    let mut values = Vec::with_capacity(eval_points.len());
    for pt in &eval_points {
        match lookup(&pt.y) {
            Ok(v) => values.push(v),
            Err(e) => missing.push(e),
        }
    }
    if !missing.is_empty() {
        return Err(Error::InvalidField(missing.join("; ")));
    }
    let base = values[0];
    let mut out = DMatrix::zeros(d, d);
    for j in 0..d {
        let shifted = values[j + 1];
        for i in 0..d {
            out[(i, j)] = -(shifted[i] - base[i]) / basis_scale;
        }
    }
    Ok(out)
}
