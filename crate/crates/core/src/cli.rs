//! `fifoctl` command-line front end. [`main`] returns the process exit code:
//! 0 on success or a feasible/stable verdict, 1 on usage and input errors,
//! 2 on an infeasible or unstable verdict.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::NetworkConfig;
use crate::dfc::{solve_dfc, DfcError};
use crate::experiments::{replication_seed, reproduce, run_plan, ExperimentPlan, FigureOptions, RunSettings};
use crate::markov::single_queue_steady_state;
use crate::numeric::sig6;
use crate::policies::{Controller, PolicyKind};
use crate::sim::{self, ArrivalMode, RunSpec, StabilityReport, TraceMetrics, Verdict};
use crate::stability::{
    best_policy_grid, check_inner_bound, check_policy_region, check_single_queue, ConstraintKind, Margin,
};
use crate::state::SchedulingPolicy;

const DEFAULT_HORIZON: u64 = 1_000_000;
const DEFAULT_SEEDS: usize = 20;
const POLICY_GRID_STEP: f64 = 0.01;

#[derive(Debug, Parser)]
#[command(
    name = "fifoctl",
    version,
    about = "Analyze, control and simulate shared FIFO queues over ON/OFF links"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Network configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Slots per run.
    #[arg(long, global = true)]
    horizon: Option<u64>,
    /// Replications per sweep point.
    #[arg(long, global = true)]
    seeds: Option<usize>,
    /// Output file (or directory for reproduce-fig).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Steady-state quantities and stability slacks of the configured rates.
    Analyze {
        /// Queue-state policy (JSON) to test instead of searching a grid.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Solve the deterministic flow-control program.
    SolveDfc,
    /// Run one simulation and print its summary.
    Simulate {
        #[arg(long, default_value = "qfc")]
        policy: PolicyKind,
        #[arg(long, default_value = "fluid")]
        mode: ArrivalMode,
        /// Slots excluded from averages (default: a tenth of the horizon).
        #[arg(long)]
        warmup: Option<u64>,
        /// Per-slot CSV trace.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run an experiment plan.
    Sweep {
        #[arg(long)]
        plan: PathBuf,
    },
    /// Regenerate the CSV tables of a figure.
    ReproduceFig {
        /// fig5a, fig5b, fig6, fig7a, fig7b, fig8a or fig8b
        id: String,
    },
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    let g = &cli.global;
    match &cli.command {
        Command::Analyze { policy } => analyze(g, policy.as_deref()),
        Command::SolveDfc => cmd_solve_dfc(g),
        Command::Simulate {
            policy,
            mode,
            warmup,
            trace,
        } => simulate(g, *policy, *mode, *warmup, trace.as_deref()),
        Command::Sweep { plan } => sweep(g, plan),
        Command::ReproduceFig { id } => reproduce_fig(g, id),
    }
}

fn load_config(g: &Global) -> Result<NetworkConfig> {
    let path = g.config.as_ref().context("--config is required")?;
    Ok(NetworkConfig::load(path)?)
}

fn output(g: &Global) -> Result<Box<dyn Write>> {
    Ok(match &g.out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn print_margin(out: &mut dyn Write, title: &str, margin: &Margin) -> io::Result<()> {
    writeln!(
        out,
        "{title}: {}",
        if margin.feasible { "feasible" } else { "infeasible" }
    )?;
    for c in &margin.constraints {
        let what = match c.kind {
            ConstraintKind::Capacity { queue } => format!("capacity q{queue}"),
            ConstraintKind::Rate { queue, flow } => format!("rate q{queue} f{flow}"),
            ConstraintKind::InnerBound { queue } => format!("inner q{queue}"),
            ConstraintKind::PolicyBudget { state } => format!("budget state {state}"),
        };
        writeln!(out, "  {what:<18} slack {}", sig6(c.slack))?;
    }
    Ok(())
}

/// Smallest scalar rates whose fair-ray flows dominate `lambdas`.
fn dominating_scalars(cfg: &NetworkConfig, lambdas: &[Vec<f64>]) -> Vec<f64> {
    lambdas
        .iter()
        .enumerate()
        .map(|(n, row)| {
            row.iter()
                .zip(cfg.rate_gains(n))
                .map(|(&l, g)| match (l > 0.0, g > 0.0) {
                    (false, _) => 0.0,
                    (true, true) => l / g,
                    (true, false) => f64::INFINITY,
                })
                .fold(0.0, f64::max)
        })
        .collect()
}

fn analyze(g: &Global, policy_path: Option<&Path>) -> Result<i32> {
    let cfg = load_config(g)?;
    let lambdas = cfg.lambdas()?;
    let mut out = output(g)?;
    for (n, row) in lambdas.iter().enumerate() {
        writeln!(out, "queue {n}")?;
        match single_queue_steady_state(row, &cfg.queue_p_off(n)) {
            Ok(ss) => {
                writeln!(out, "  P[z0] {}", sig6(ss.p_z0))?;
                for k in 0..row.len() {
                    writeln!(
                        out,
                        "  flow {k}: P[z_k] {}  P[H=k] {}",
                        sig6(ss.p_zk[k]),
                        sig6(ss.p_hol[k])
                    )?;
                }
            }
            Err(e) => writeln!(out, "  steady state undefined: {e}")?,
        }
    }

    let feasible = if cfg.n_queues() == 1 {
        let margin = check_single_queue(&lambdas[0], &cfg.queue_p_off(0));
        print_margin(&mut out, "single-queue capacity", &margin)?;
        margin.feasible
    } else {
        let policy = match policy_path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                let policy: SchedulingPolicy =
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
                policy.validate()?;
                policy
            }
            None => {
                if cfg.n_queues() > 2 {
                    bail!("policy search covers at most 2 queues; pass --policy for larger networks");
                }
                best_policy_grid(&cfg, &lambdas, POLICY_GRID_STEP)?.0
            }
        };
        let margin = check_policy_region(&cfg, &lambdas, &policy)?;
        print_margin(&mut out, "queue-state policy region", &margin)?;
        let inner = check_inner_bound(&cfg, &dominating_scalars(&cfg, &lambdas), &policy)?;
        print_margin(&mut out, "convex inner bound", &inner)?;
        margin.feasible
    };
    out.flush()?;
    Ok(if feasible { 0 } else { 2 })
}

fn cmd_solve_dfc(g: &Global) -> Result<i32> {
    let cfg = load_config(g)?;
    let (sol, code) = match solve_dfc(&cfg) {
        Ok(sol) => (sol, 0),
        Err(DfcError::NotConverged { best }) => {
            eprintln!("warning: solver stopped at kkt residual {:.3e}", best.kkt_residual);
            (*best, 1)
        }
        Err(e) => return Err(e.into()),
    };
    let mut out = output(g)?;
    serde_json::to_writer_pretty(&mut out, &sol)?;
    writeln!(out)?;
    out.flush()?;
    Ok(code)
}

#[derive(Serialize)]
struct SimulateSummary<'a> {
    #[serde(flatten)]
    metrics: &'a TraceMetrics,
    stability: Option<StabilityReport>,
}

fn simulate(
    g: &Global,
    policy: PolicyKind,
    mode: ArrivalMode,
    warmup: Option<u64>,
    trace: Option<&Path>,
) -> Result<i32> {
    let cfg = load_config(g)?;
    let horizon = g.horizon.unwrap_or(DEFAULT_HORIZON);
    let controller = Controller::build(policy, &cfg)?;
    // replication 0 of the master seed, as in a one-seed sweep
    let seed = replication_seed(g.seed.unwrap_or(0), 0);
    let spec = RunSpec::new(cfg, controller, horizon, seed)
        .with_mode(mode)
        .with_warmup(warmup.unwrap_or(horizon / 10));
    let metrics = match trace {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?);
            let m = sim::run_with_trace(&spec, &mut w)?;
            w.flush()?;
            m
        }
        None => sim::run(&spec)?,
    };
    let stability = metrics.stability().ok();
    let mut out = output(g)?;
    serde_json::to_writer_pretty(
        &mut out,
        &SimulateSummary {
            metrics: &metrics,
            stability,
        },
    )?;
    writeln!(out)?;
    out.flush()?;
    Ok(match stability.map(|s| s.verdict) {
        Some(Verdict::Unstable) => 2,
        _ => 0,
    })
}

fn sweep(g: &Global, plan_path: &Path) -> Result<i32> {
    let mut plan = ExperimentPlan::load(plan_path)?;
    if let Some(s) = g.seed {
        plan.master_seed = s;
    }
    if let Some(h) = g.horizon {
        plan.horizon = h;
    }
    if let Some(n) = g.seeds {
        plan.seeds = n;
    }
    let result = run_plan(&plan)?;
    let mut out = output(g)?;
    result.table().write_csv(&mut out)?;
    out.flush()?;
    Ok(0)
}

fn reproduce_fig(g: &Global, id: &str) -> Result<i32> {
    let horizon = g.horizon.unwrap_or(DEFAULT_HORIZON);
    let opts = FigureOptions {
        seeds: g.seeds.unwrap_or(DEFAULT_SEEDS),
        settings: RunSettings::new(horizon, g.seed.unwrap_or(0)),
    };
    if opts.seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let tables = reproduce(id, &opts)?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    for (stem, table) in tables {
        let path = dir.join(format!("{stem}.csv"));
        let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        table.write_csv(&mut w)?;
        w.flush()?;
        eprintln!("wrote {}", path.display());
    }
    Ok(0)
}
