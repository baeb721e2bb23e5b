use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::plan::{ExperimentPlan, PlanError};
use crate::config::NetworkConfig;
use crate::numeric::sig6;
use crate::policies::{Controller, PolicyKind};
use crate::sim::{self, stream_seed, ArrivalMode, RunSpec, SimError, StreamSeeds};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("{policy} at point {point}: {source}")]
    Run {
        point: usize,
        policy: PolicyKind,
        source: SimError,
    },
}

/// Seed of replication `r`; shared by every policy and sweep point.
pub fn replication_seed(master: u64, r: usize) -> u64 {
    let bytes = stream_seed(master, &format!("replication-{r}"));
    u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
}

/// SHA-256 hex digest of a serializable description.
pub fn config_hash(value: &impl Serialize) -> String {
    let text = serde_json::to_string(value).expect("serializable");
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunSettings {
    pub horizon: u64,
    pub warmup: u64,
    pub master_seed: u64,
    pub mode: ArrivalMode,
}

impl RunSettings {
    pub fn new(horizon: u64, master_seed: u64) -> Self {
        Self {
            horizon,
            warmup: horizon / 10,
            master_seed,
            mode: ArrivalMode::Fluid,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Job {
    pub point: usize,
    pub policy: PolicyKind,
    pub replication: usize,
    pub cfg: NetworkConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub point: usize,
    pub policy: PolicyKind,
    pub replication: usize,
    pub seed: u64,
    pub seeds: StreamSeeds,
    pub admitted_rate: Vec<Vec<f64>>,
    pub served_rate: Vec<Vec<f64>>,
    pub utility: f64,
}

impl RunSummary {
    pub fn total_served(&self) -> f64 {
        self.served_rate.iter().flatten().sum()
    }
}

/// Runs every job in parallel; results keep the job order.
pub fn run_jobs(jobs: &[Job], settings: &RunSettings) -> Result<Vec<RunSummary>, SweepError> {
    jobs.par_iter()
        .map(|job| {
            let wrap = |source: SimError| SweepError::Run {
                point: job.point,
                policy: job.policy,
                source,
            };
            let controller = Controller::build(job.policy, &job.cfg).map_err(|e| wrap(e.into()))?;
            let seed = replication_seed(settings.master_seed, job.replication);
            let spec = RunSpec::new(job.cfg.clone(), controller, settings.horizon, seed)
                .with_warmup(settings.warmup)
                .with_mode(settings.mode);
            let m = sim::run(&spec).map_err(wrap)?;
            Ok(RunSummary {
                point: job.point,
                policy: job.policy,
                replication: job.replication,
                seed,
                seeds: m.seeds,
                admitted_rate: m.admitted_rate,
                served_rate: m.served_rate,
                utility: m.utility,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    /// Standard error of the mean; zero for a single sample.
    pub se: f64,
}

pub fn estimate(xs: &[f64]) -> Estimate {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return Estimate { mean, se: 0.0 };
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Estimate {
        mean,
        se: (var / n).sqrt(),
    }
}

/// Seed statistics of one policy at one point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyStats {
    pub per_flow: Vec<Vec<Estimate>>,
    pub total: Estimate,
}

impl PolicyStats {
    pub fn from_runs(runs: &[&RunSummary]) -> Self {
        let shape = &runs[0].served_rate;
        let per_flow = shape
            .iter()
            .enumerate()
            .map(|(n, row)| {
                (0..row.len())
                    .map(|k| estimate(&runs.iter().map(|r| r.served_rate[n][k]).collect::<Vec<_>>()))
                    .collect()
            })
            .collect();
        let totals: Vec<f64> = runs.iter().map(|r| r.total_served()).collect();
        Self {
            per_flow,
            total: estimate(&totals),
        }
    }
}

/// CSV table with a provenance comment line.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub comment: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn write_csv(&self, out: &mut dyn Write) -> io::Result<()> {
        writeln!(out, "{}", self.comment)?;
        writeln!(out, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|&x| sig6(x)).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("ascii")
    }
}

pub fn provenance_comment(hash: &str, settings: &RunSettings, seeds: usize) -> String {
    format!(
        "# fifoctl v{} config_hash={hash} master_seed={} horizon={} seeds={seeds}",
        env!("CARGO_PKG_VERSION"),
        settings.master_seed,
        settings.horizon
    )
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub plan: ExperimentPlan,
    pub runs: Vec<RunSummary>,
}

pub fn run_plan(plan: &ExperimentPlan) -> Result<SweepResult, SweepError> {
    plan.validate()?;
    let configs = plan.configs()?;
    let mut jobs = Vec::new();
    for (point, cfg) in configs.iter().enumerate() {
        for &policy in &plan.policies {
            for replication in 0..plan.seeds {
                jobs.push(Job {
                    point,
                    policy,
                    replication,
                    cfg: cfg.clone(),
                });
            }
        }
    }
    let runs = run_jobs(&jobs, &plan.settings())?;
    Ok(SweepResult {
        plan: plan.clone(),
        runs,
    })
}

impl ExperimentPlan {
    pub fn settings(&self) -> RunSettings {
        RunSettings {
            horizon: self.horizon,
            warmup: self.warmup(),
            master_seed: self.master_seed,
            mode: self.mode,
        }
    }
}

impl SweepResult {
    pub fn stats(&self, point: usize, policy: PolicyKind) -> PolicyStats {
        let runs: Vec<&RunSummary> = self
            .runs
            .iter()
            .filter(|r| r.point == point && r.policy == policy)
            .collect();
        PolicyStats::from_runs(&runs)
    }

    /// One row per sweep value: per-policy totals and per-flow served rates,
    /// then their standard errors.
    pub fn table(&self) -> Table {
        let plan = &self.plan;
        let mut columns = vec![plan.parameter.label()];
        let mut se_columns = Vec::new();
        for p in &plan.policies {
            columns.push(format!("{p}_total"));
            se_columns.push(format!("{p}_total_se"));
            for (n, q) in plan.base.queues.iter().enumerate() {
                for k in 0..q.flows.len() {
                    columns.push(format!("{p}_lambda_{n}_{k}"));
                    se_columns.push(format!("{p}_lambda_{n}_{k}_se"));
                }
            }
        }
        columns.extend(se_columns);
        let rows = plan
            .values
            .iter()
            .enumerate()
            .map(|(point, &v)| {
                let mut row = vec![v];
                let mut se = Vec::new();
                for &p in &plan.policies {
                    let s = self.stats(point, p);
                    row.push(s.total.mean);
                    se.push(s.total.se);
                    for e in s.per_flow.iter().flatten() {
                        row.push(e.mean);
                        se.push(e.se);
                    }
                }
                row.extend(se);
                row
            })
            .collect();
        Table {
            comment: provenance_comment(&config_hash(plan), &plan.settings(), plan.seeds),
            columns,
            rows,
        }
    }
}
