//! Simulation of stochastic damping Hamiltonian systems and estimation of
//! their diffusion coefficient from high-frequency position observations.
//!
//! The pipeline is `models` → `simulate` → `increments` → `estimators`,
//! with `kernel` covering fully observed paths and `experiments` driving
//! Monte Carlo studies. `cli` and `output` back the `kinestim` binary.

pub mod cli;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod increments;
pub mod kernel;
pub mod models;
pub mod output;
pub mod simulate;

pub use error::{Error, Result};
pub use estimators::{
    ci_infill_constant, ci_infinite_constant, infill_constant_sigma, infill_qv, infinite_horizon, limit_integral,
    window_count, AsymptoticLaw, ConfidenceInterval, DiffusionClass, EstimatorResult, LawKind, Regime,
};
pub use experiments::{qv_vs_integral, run_monte_carlo, run_plan, ExperimentPlan, ExperimentRegime, ExperimentReport};
pub use increments::{double_increments, DoubleIncrements, IncrementScheme};
pub use kernel::{
    diffusion_eval_points, diffusion_from_drift, kde_density, kde_gradient_x, lattice, nw_drift,
    nw_weighted_increments, score_estimator, DriftFields, EvalPoint, FieldEstimate, FieldKind, FieldPoint,
    KernelConfig,
};
pub use models::{builtin_model, eval_drift, BuiltinModel, CustomModel, DriftEval, ModelConfig, ModelSpec};
pub use simulate::{sample_stationary_oa, simulate_trajectory, InitSpec, ObservationGrid, SimConfig, StepSize};
