//! `kinestim <command> --config <path> [--seed N] [--out DIR]`.
//!
//! The config file is TOML. Flags only override the seed and the output
//! directory. Exit codes: 1 parse error, 2 validation error, 3 runtime error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::estimators::{
    ci_infill_constant, ci_infinite_constant, infill_constant_sigma, infill_qv, infinite_horizon, limit_integral,
    robust_floor, window_count, ConfidenceInterval, DiffusionClass, EstimatorResult,
};
use crate::experiments::{run_plan, ExperimentPlan, ExperimentRegime};
use crate::increments::{double_increments, IncrementScheme};
use crate::kernel::{
    diffusion_eval_points, diffusion_from_drift, kde_density, kde_gradient_x, lattice, nw_drift, score_estimator,
    KernelConfig, DEFAULT_DENSITY_FLOOR,
};
use crate::models::{ModelConfig, ModelSpec};
use crate::output;
use crate::simulate::{simulate_trajectory, InitSpec, ObservationGrid, SimConfig, StepSize, DEFAULT_SUBSTEPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Estimate,
    Kernel,
    Experiment,
}

#[derive(Debug, Parser)]
#[command(
    name = "kinestim",
    version,
    about = "Diffusion estimation for kinetic (damped Hamiltonian) SDEs"
)]
pub struct Args {
    pub command: Command,
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's seed (`sim.seed` or `experiment.base_seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[serde(default, skip_serializing)]
    pub workers: Option<usize>,
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<EstimatorBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimBlock {
    pub n: usize,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub h: Option<f64>,
    #[serde(default)]
    pub substeps: Option<usize>,
    #[serde(default)]
    pub init: Option<InitSpec>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub record_velocities: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateRegime {
    InfillConstant,
    InfillQv,
    InfiniteHorizon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorBlock {
    pub regime: EstimateRegime,
    /// `T` for `infill_constant`, `t` for `infill_qv`.
    #[serde(default, alias = "T", alias = "t")]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub level: Option<f64>,
    /// Trajectory CSV to estimate from instead of simulating.
    #[serde(default)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelBlock {
    /// `b1 = n^(−position_exponent)` unless `b1` is given.
    #[serde(default)]
    pub position_exponent: Option<f64>,
    #[serde(default)]
    pub velocity_exponent: Option<f64>,
    #[serde(default)]
    pub b1: Option<f64>,
    #[serde(default)]
    pub b2: Option<f64>,
    #[serde(default)]
    pub density_floor: Option<f64>,
    /// Wraps positions for the density, gradient and score fields.
    #[serde(default)]
    pub position_period: Option<f64>,
    /// Wraps positions for the drift fields.
    #[serde(default)]
    pub drift_period: Option<f64>,
    pub x: GridAxis,
    pub y: GridAxis,
    /// Positions at which to recover `σσᵀ` from the drift estimate.
    #[serde(default)]
    pub diffusion_x: Vec<f64>,
    #[serde(default)]
    pub basis_scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentBlock {
    pub regime: ExperimentRegime,
    pub replicates: usize,
    #[serde(default)]
    pub base_seed: Option<u64>,
    #[serde(default)]
    pub level: Option<f64>,
    #[serde(default, alias = "T", alias = "t")]
    pub horizon: Option<f64>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// SHA-256 over the canonical JSON form. `output_dir` and `workers`
    /// do not affect results and are left out.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    fn sim(&self) -> Result<&SimBlock> {
        self.sim
            .as_ref()
            .ok_or_else(|| Error::Parse("missing section `[sim]`".into()))
    }
}

impl SimBlock {
    fn step(&self) -> Result<StepSize> {
        match (self.gamma, self.h) {
            (Some(gamma), None) => Ok(StepSize::PowerLaw { gamma }),
            (None, Some(h)) => Ok(StepSize::Fixed { h }),
            (Some(_), Some(_)) => Err(invalid("sim.gamma", "give exactly one of `gamma` and `h`")),
            (None, None) => Err(Error::Parse("missing key `sim.gamma` (or `sim.h`)".into())),
        }
    }

    fn config(&self, dim: usize, steps: usize, velocities: bool) -> Result<SimConfig> {
        let h = SimConfig {
            n: self.n,
            step: self.step()?,
            substeps: 1,
            init: InitSpec::origin(dim),
            seed: 0,
            record_velocities: false,
        }
        .h()?;
        Ok(SimConfig {
            n: steps,
            step: StepSize::Fixed { h },
            substeps: self.substeps.unwrap_or(DEFAULT_SUBSTEPS),
            init: self.init.clone().unwrap_or_else(|| InitSpec::origin(dim)),
            seed: self.seed.unwrap_or(0),
            record_velocities: velocities,
        })
    }
}

/// A rendered file waiting to be written.
struct Artifact {
    name: &'static str,
    body: String,
}

struct Outcome {
    summary: String,
    artifacts: Vec<Artifact>,
    base_seed: u64,
}

/// Parses `args`, runs, writes outputs and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&args) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Parse(_) => 1,
        Error::InvalidParameter { .. }
        | Error::ModelValidation { .. }
        | Error::Regime(_)
        | Error::Unsupported(_)
        | Error::Sizing { .. }
        | Error::MissingVelocities(_)
        | Error::InvalidField(_) => 2,
        Error::BlowUp { .. } | Error::Io { .. } => 3,
        Error::Replicate { source, .. } => exit_code(source),
    }
}

/// Runs a parsed invocation and returns the summary line. Nothing is
/// written unless every step succeeds.
pub fn execute(args: &Args) -> Result<String> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Error::Parse(format!("cannot read config {}: {e}", args.config.display())))?;
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(cmd) = cfg.command {
        if cmd != args.command {
            return Err(invalid(
                "command",
                format!("config is for `{cmd:?}`, invoked as `{:?}`", args.command).to_lowercase(),
            ));
        }
    }
    if let Some(seed) = args.seed {
        match args.command {
            Command::Experiment => {
                if let Some(exp) = cfg.experiment.as_mut() {
                    exp.base_seed = Some(seed);
                }
            }
            _ => {
                if let Some(sim) = cfg.sim.as_mut() {
                    sim.seed = Some(seed);
                }
            }
        }
    }
    let out_dir = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let workers = match cfg.workers {
        Some(0) => return Err(invalid("workers", "must be >= 1")),
        Some(w) => w,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Unsupported(format!("worker pool: {e}")))?;
    let config_dir = args.config.parent().unwrap_or(Path::new("."));
    let outcome = pool.install(|| match args.command {
        Command::Simulate => cmd_simulate(&cfg),
        Command::Estimate => cmd_estimate(&cfg, config_dir),
        Command::Kernel => cmd_kernel(&cfg),
        Command::Experiment => cmd_experiment(&cfg),
    })?;
    let header = output::provenance_header(&cfg.hash(), outcome.base_seed);
    for a in &outcome.artifacts {
        output::write_atomic(&out_dir.join(a.name), &format!("{header}{}", a.body))?;
    }
    Ok(outcome.summary)
}

fn cmd_simulate(cfg: &RunConfig) -> Result<Outcome> {
    let spec = cfg.model.build()?;
    let sim = cfg.sim()?;
    let sc = sim.config(spec.dim(), sim.n, sim.record_velocities.unwrap_or(true))?;
    let grid = simulate_trajectory(&spec, &sc)?;
    let last = grid.len() - 1;
    let summary = format!(
        "simulated {} steps of `{}` with h={} x_end={:?}",
        sc.n,
        spec.name(),
        output::num(grid.h()),
        grid.position(last)
    );
    Ok(Outcome {
        summary,
        artifacts: vec![Artifact {
            name: "trajectory.csv",
            body: output::trajectory_csv(&grid),
        }],
        base_seed: sc.seed,
    })
}

fn estimate_grid(
    cfg: &RunConfig,
    spec: &ModelSpec,
    est: &EstimatorBlock,
    config_dir: &Path,
) -> Result<(ObservationGrid, u64)> {
    if let Some(input) = &est.input {
        let path = if input.is_absolute() {
            input.clone()
        } else {
            config_dir.join(input)
        };
        let text = std::fs::read_to_string(&path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let grid = output::parse_trajectory_csv(&text)?;
        if grid.dim() != spec.dim() {
            return Err(invalid(
                "estimator.input",
                format!("trajectory has dimension {}, model {}", grid.dim(), spec.dim()),
            ));
        }
        return Ok((grid, 0));
    }
    let sim = cfg.sim()?;
    let h = sim.config(spec.dim(), 1, false)?.h()?;
    let horizon = est.horizon.unwrap_or(1.0);
    let steps = match est.regime {
        EstimateRegime::InfillConstant => 2 * window_count(horizon, h) + 1,
        EstimateRegime::InfillQv => (2 * window_count(horizon, h) + 1).max(robust_floor(horizon / h) as usize),
        EstimateRegime::InfiniteHorizon => {
            if sim.n < 2 {
                return Err(invalid("sim.n", "must be >= 2 for the infinite-horizon estimator"));
            }
            2 * sim.n - 1
        }
    };
    let velocities = est.regime == EstimateRegime::InfillQv && spec.sigma_depends_on_velocity();
    let sc = sim.config(spec.dim(), steps.max(1), velocities)?;
    Ok((simulate_trajectory(spec, &sc)?, sc.seed))
}

fn cmd_estimate(cfg: &RunConfig, config_dir: &Path) -> Result<Outcome> {
    let spec = cfg.model.build()?;
    let est = cfg
        .estimator
        .as_ref()
        .ok_or_else(|| Error::Parse("missing section `[estimator]`".into()))?;
    let level = est.level.unwrap_or(0.95);
    let horizon = est.horizon.unwrap_or(1.0);
    let (grid, seed) = estimate_grid(cfg, &spec, est, config_dir)?;
    let h = grid.h();
    let scalar_constant = spec.dim() == 1 && spec.constant_sigma();
    let mut extra = String::new();
    let (result, ci): (EstimatorResult, Option<ConfidenceInterval>) = match est.regime {
        EstimateRegime::InfillConstant => {
            let k = window_count(horizon, h);
            if k < 1 {
                return Err(Error::Regime(format!("T too small for h: T = {horizon}, h = {h}")));
            }
            let r = infill_constant_sigma(&double_increments(&grid, IncrementScheme::EvenGrid, k)?, horizon)?;
            let ci = if scalar_constant {
                Some(ci_infill_constant(&r, level)?)
            } else {
                None
            };
            (r, ci)
        }
        EstimateRegime::InfillQv => {
            let k = window_count(horizon, h).max(1);
            let r = infill_qv(&double_increments(&grid, IncrementScheme::EvenGrid, k)?, horizon)?;
            if est.input.is_none() {
                let limit = limit_integral(&grid, &spec, horizon)?;
                extra = format!(" limit={}", output::num(limit[(0, 0)]));
            }
            (r, None)
        }
        EstimateRegime::InfiniteHorizon => {
            if grid.len() < 4 {
                return Err(Error::Sizing {
                    what: "infinite-horizon estimator",
                    required: 4,
                    available: grid.len(),
                });
            }
            let count = (grid.len() - 2) / 2;
            let class = DiffusionClass::of(&spec);
            let r = infinite_horizon(
                &double_increments(&grid, IncrementScheme::EvenGrid, count)?,
                count + 1,
                class,
            )?;
            let ci = if scalar_constant && class == DiffusionClass::Constant {
                Some(ci_infinite_constant(&r, level)?)
            } else {
                None
            };
            (r, ci)
        }
    };
    let mut summary = format!("{} estimate={:.6}", result.regime, result.estimate[(0, 0)]);
    if let Some(ci) = &ci {
        summary.push_str(&format!(" CI=[{:.6}, {:.6}]", ci.lower[0], ci.upper[0]));
    }
    summary.push_str(&extra);
    if result.degenerate_window {
        summary.push_str(" (empty window)");
    }
    let body = format!(
        "{}{}",
        output::estimate_header(result.dim()),
        output::estimate_row(&result, ci.as_ref(), seed)
    );
    Ok(Outcome {
        summary,
        artifacts: vec![Artifact {
            name: "estimate.csv",
            body,
        }],
        base_seed: seed,
    })
}

fn cmd_kernel(cfg: &RunConfig) -> Result<Outcome> {
    let spec = cfg.model.build()?;
    let kb = cfg
        .kernel
        .as_ref()
        .ok_or_else(|| Error::Parse("missing section `[kernel]`".into()))?;
    if spec.dim() != 1 {
        return Err(Error::Unsupported(
            "the kernel command evaluates on a scalar (x, y) lattice".into(),
        ));
    }
    let sim = cfg.sim()?;
    let sc = sim.config(1, sim.n, true)?;
    let grid = simulate_trajectory(&spec, &sc)?;
    let n = sim.n as f64;
    let b1 = kb.b1.unwrap_or_else(|| n.powf(-kb.position_exponent.unwrap_or(0.2)));
    let b2 = kb.b2.unwrap_or_else(|| n.powf(-kb.velocity_exponent.unwrap_or(0.2)));
    let points = lattice((kb.x.min, kb.x.max, kb.x.points), (kb.y.min, kb.y.max, kb.y.points));
    let floor = kb.density_floor.unwrap_or(DEFAULT_DENSITY_FLOOR);
    let mut base = KernelConfig::new(b1, b2, points).with_floor(floor);
    let mut drift_cfg = base.clone();
    if let Some(p) = kb.position_period {
        base = base.with_period(p);
    }
    if let Some(p) = kb.drift_period {
        drift_cfg = drift_cfg.with_period(p);
    }
    let density = kde_density(&grid, &base)?;
    let gradient = kde_gradient_x(&grid, &base)?;
    let score = score_estimator(&grid, &base)?;
    let drift = nw_drift(&grid, &drift_cfg)?;
    let scale = kb.basis_scale.unwrap_or(1.0);
    let mut diffusion_rows = String::from("x,value,valid\n");
    let mut first_diffusion = None;
    for &x in &kb.diffusion_x {
        let mut local = drift_cfg.clone();
        local.eval_points = diffusion_eval_points(&[x], scale);
        let fields = nw_drift(&grid, &local)?;
        match diffusion_from_drift(&fields.drift, &[x], scale) {
            Ok(m) => {
                first_diffusion.get_or_insert(m[(0, 0)]);
                diffusion_rows.push_str(&format!("{},{},1\n", output::num(x), output::num(m[(0, 0)])));
            }
            Err(Error::InvalidField(_)) => diffusion_rows.push_str(&format!("{},,0\n", output::num(x))),
            Err(e) => return Err(e),
        }
    }
    let peak = density.points.iter().map(|p| p.density).fold(0.0, f64::max);
    let valid = score.points.iter().filter(|p| p.valid()).count();
    let mut summary = format!(
        "kernel b1={:.4} b2={:.4} density_max={:.4} score_valid={valid}/{}",
        b1,
        b2,
        peak,
        score.points.len()
    );
    if let (Some(x), Some(v)) = (kb.diffusion_x.first(), first_diffusion) {
        summary.push_str(&format!(" diffusion(x={x})={v:.4}"));
    }
    let mut artifacts = vec![
        Artifact {
            name: "density.csv",
            body: output::field_csv(&density),
        },
        Artifact {
            name: "gradient.csv",
            body: output::field_csv(&gradient),
        },
        Artifact {
            name: "score.csv",
            body: output::field_csv(&score),
        },
        Artifact {
            name: "drift.csv",
            body: output::field_csv(&drift.drift),
        },
    ];
    if !kb.diffusion_x.is_empty() {
        artifacts.push(Artifact {
            name: "diffusion.csv",
            body: diffusion_rows,
        });
    }
    Ok(Outcome {
        summary,
        artifacts,
        base_seed: sc.seed,
    })
}

fn cmd_experiment(cfg: &RunConfig) -> Result<Outcome> {
    let exp = cfg
        .experiment
        .as_ref()
        .ok_or_else(|| Error::Parse("missing section `[experiment]`".into()))?;
    let sim = cfg.sim()?;
    let gamma = sim
        .gamma
        .ok_or_else(|| Error::Parse("missing key `sim.gamma` (experiments use h = n^-gamma)".into()))?;
    if sim.h.is_some() {
        return Err(invalid("sim.h", "experiments set h = n^-gamma; remove `h`"));
    }
    let mut plan = ExperimentPlan::new(cfg.model.clone(), exp.regime, gamma, sim.n, exp.replicates)
        .with_seed(exp.base_seed.unwrap_or(1));
    if let Some(level) = exp.level {
        plan.level = level;
    }
    if let Some(horizon) = exp.horizon {
        plan.horizon = horizon;
    }
    if let Some(m) = sim.substeps {
        plan.substeps = m;
    }
    plan.init = sim.init.clone();
    let report = run_plan(&plan)?;
    let summary = match report.ecov {
        Some(ecov) => format!("RMSE={:.4} ECOV={:.3}", report.rmse, ecov),
        None => format!(
            "RMSE_QV={:.5} RMSE_LIMIT={:.5}",
            report.rmse,
            report.rmse_limit.unwrap_or(f64::NAN)
        ),
    };
    Ok(Outcome {
        summary,
        artifacts: vec![
            Artifact {
                name: "summary.csv",
                body: output::summary_csv(&report),
            },
            Artifact {
                name: "replicates.csv",
                body: output::replicates_csv(&report),
            },
            Artifact {
                name: "histogram.csv",
                body: output::histogram_csv(&report),
            },
        ],
        base_seed: plan.base_seed,
    })
}
