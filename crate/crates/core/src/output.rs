//! CSV renderers and atomic file output.
//!
//! Every file starts with a `# config_hash=... base_seed=...` comment line.
//! Numbers use the shortest representation that round-trips.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::estimators::{ConfidenceInterval, EstimatorResult};
use crate::experiments::ExperimentReport;
use crate::kernel::FieldEstimate;
use crate::simulate::ObservationGrid;

pub fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn provenance_header(config_hash: &str, base_seed: u64) -> String {
    format!("# config_hash={config_hash} base_seed={base_seed}\n")
}

/// Writes through a temporary file in the target directory and renames it
/// into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let io = |source| Error::Io {
        path: path.display().to_string(),
        source,
    };
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents.as_bytes()).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// `t,x1..xd[,y1..yd]`, one row per grid point.
pub fn trajectory_csv(grid: &ObservationGrid) -> String {
    let d = grid.dim();
    let mut out = String::from("t");
    for i in 1..=d {
        let _ = write!(out, ",x{i}");
    }
    if grid.has_velocities() {
        for i in 1..=d {
            let _ = write!(out, ",y{i}");
        }
    }
    out.push('\n');
    for p in 0..grid.len() {
        out.push_str(&num(p as f64 * grid.h()));
        for v in grid.position(p) {
            out.push(',');
            out.push_str(&num(*v));
        }
        if let Some(y) = grid.velocity(p) {
            for v in y {
                out.push(',');
                out.push_str(&num(*v));
            }
        }
        out.push('\n');
    }
    out
}

/// Parses the format written by [`trajectory_csv`]. `h` is taken from the
/// first two time stamps.
pub fn parse_trajectory_csv(text: &str) -> Result<ObservationGrid> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Parse("trajectory file has no header".into()))?
        .split(',')
        .collect();
    if header.first() != Some(&"t") {
        return Err(Error::Parse("trajectory header must start with `t`".into()));
    }
    let dim = header.iter().filter(|c| c.starts_with('x')).count();
    let vel = header.iter().filter(|c| c.starts_with('y')).count();
    if dim == 0 || (vel != 0 && vel != dim) || header.len() != 1 + dim + vel {
        return Err(Error::Parse(format!("unrecognised trajectory header {header:?}")));
    }
    let mut times = Vec::new();
    let mut positions = Vec::new();
    let mut velocities = Vec::new();
    for (row, line) in lines.enumerate() {
        let vals: Vec<f64> = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("trajectory row {}: {e}", row + 1)))?;
        if vals.len() != header.len() {
            return Err(Error::Parse(format!(
                "trajectory row {} has {} columns, expected {}",
                row + 1,
                vals.len(),
                header.len()
            )));
        }
        times.push(vals[0]);
        positions.extend_from_slice(&vals[1..1 + dim]);
        velocities.extend_from_slice(&vals[1 + dim..]);
    }
    if times.len() < 2 {
        return Err(Error::Parse("trajectory needs at least two rows".into()));
    }
    let h = times[1] - times[0];
    ObservationGrid::new(dim, positions, (vel > 0).then_some(velocities), h, 0, "input")
}

pub fn estimate_header(dim: usize) -> String {
    let mut out = String::from("regime,n,h");
    for i in 1..=dim {
        for j in 1..=dim {
            let _ = write!(out, ",estimate_{i}{j}");
        }
    }
    out.push_str(",ci_lower,ci_upper,seed\n");
    out
}

/// One `regime,n,h,estimate_ij...,ci_lower,ci_upper,seed` row; the interval
/// columns are empty when no interval applies.
pub fn estimate_row(result: &EstimatorResult, ci: Option<&ConfidenceInterval>, seed: u64) -> String {
    let mut out = format!("{},{},{}", result.regime, result.n, num(result.h));
    for v in result.estimate.transpose().iter() {
        out.push(',');
        out.push_str(&num(*v));
    }
    match ci {
        Some(ci) if ci.lower.len() == 1 => {
            let _ = write!(out, ",{},{}", num(ci.lower[0]), num(ci.upper[0]));
        }
        _ => out.push_str(",,"),
    }
    let _ = writeln!(out, ",{seed}");
    out
}

/// `x1..xd,y1..yd,value1..valuek,valid`.
pub fn field_csv(field: &FieldEstimate) -> String {
    let d = field.points.first().map_or(1, |p| p.point.x.len());
    let k = field
        .points
        .iter()
        .find_map(|p| p.value.as_ref().map(Vec::len))
        .unwrap_or(1);
    let mut out = String::new();
    for i in 1..=d {
        let _ = write!(out, "x{i},");
    }
    for i in 1..=d {
        let _ = write!(out, "y{i},");
    }
    for i in 1..=k {
        let _ = write!(out, "value{i},");
    }
    out.push_str("valid\n");
    for p in &field.points {
        for v in p.point.x.iter().chain(&p.point.y) {
            out.push_str(&num(*v));
            out.push(',');
        }
        match &p.value {
            Some(vals) => vals.iter().for_each(|v| {
                out.push_str(&num(*v));
                out.push(',');
            }),
            None => (0..k).for_each(|_| out.push(',')),
        }
        out.push_str(if p.valid() { "1\n" } else { "0\n" });
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// `sigma,gamma,n,rmse,ecov,rmse_limit,mse_over_sigma2,replicates`.
pub fn summary_csv(report: &ExperimentReport) -> String {
    let sigma = report.sigma_squared.map(f64::sqrt);
    format!(
        "sigma,gamma,n,rmse,ecov,rmse_limit,mse_over_sigma2,replicates\n{},{},{},{},{},{},{},{}\n",
        opt(sigma),
        num(report.plan.gamma),
        report.plan.n,
        num(report.rmse),
        opt(report.ecov),
        opt(report.rmse_limit),
        opt(report.mse_over_sigma2),
        report.plan.replicates
    )
}

/// `replicate,seed,estimate,ci_lower,ci_upper,limit`.
pub fn replicates_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("replicate,seed,estimate,ci_lower,ci_upper,limit\n");
    for (j, (seed, est)) in report.seeds.iter().zip(&report.estimates).enumerate() {
        let (lo, hi) = report
            .intervals
            .get(j)
            .map(|(l, u)| (num(*l), num(*u)))
            .unwrap_or_default();
        let limit = report.limits.get(j).map(|v| num(*v)).unwrap_or_default();
        let _ = writeln!(out, "{j},{seed},{},{lo},{hi},{limit}", num(*est));
    }
    out
}

/// `bin_left,bin_right,count_estimator,count_integral`.
pub fn histogram_csv(report: &ExperimentReport) -> String {
    let h = &report.histogram;
    let mut out = String::from("bin_left,bin_right,count_estimator,count_integral\n");
    for (k, w) in h.edges.windows(2).enumerate() {
        let integral = h.integral_counts.as_ref().map(|c| c[k].to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{integral}", num(w[0]), num(w[1]), h.estimator_counts[k]);
    }
    out
}
