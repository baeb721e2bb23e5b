//! Parameter sweeps and figure recipes.

pub mod figures;
pub mod plan;
pub mod sweep;

pub use figures::{reproduce, FigureError, FigureOptions, FIGURE_IDS};
pub use plan::{set_parameter, ExperimentPlan, ParameterPaths, PlanError};
pub use sweep::{
    estimate, replication_seed, run_jobs, run_plan, Estimate, Job, PolicyStats, RunSettings, RunSummary, SweepError,
    SweepResult, Table,
};
