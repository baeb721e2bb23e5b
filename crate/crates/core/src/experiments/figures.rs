use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use thiserror::Error;

use super::sweep::{
    config_hash, estimate, provenance_comment, run_jobs, Job, PolicyStats, RunSettings, RunSummary, SweepError, Table,
};
use crate::config::NetworkConfig;
use crate::dfc::{solve_dfc, DfcError};
use crate::policies::PolicyKind;
use crate::sim::stream_seed;

pub const FIGURE_IDS: [&str; 7] = ["fig5a", "fig5b", "fig6", "fig7a", "fig7b", "fig8a", "fig8b"];

const COMPARED: [PolicyKind; 2] = [PolicyKind::Qfc, PolicyKind::MaxWeight];

#[derive(Debug, Error)]
pub enum FigureError {
    #[error("unknown figure `{0}` (expected one of fig5a, fig5b, fig6, fig7a, fig7b, fig8a, fig8b)")]
    Unknown(String),
    #[error(transparent)]
    Sweep(#[from] SweepError),
    #[error(transparent)]
    Dfc(#[from] DfcError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FigureOptions {
    pub seeds: usize,
    pub settings: RunSettings,
}

impl Default for FigureOptions {
    fn default() -> Self {
        Self {
            seeds: 20,
            settings: RunSettings::new(1_000_000, 0),
        }
    }
}

fn short(p: PolicyKind) -> &'static str {
    match p {
        PolicyKind::Qfc => "qfc",
        PolicyKind::MaxWeight => "mw",
        PolicyKind::DfcStatic => "dfc",
        PolicyKind::Fixed => "fixed",
    }
}

fn unit_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

pub fn fig5_config(p2: f64) -> NetworkConfig {
    NetworkConfig::from_p_off(&[vec![0.1, p2]])
}

pub fn fig7_config(p_n: [f64; 2], p_m: [f64; 2], beta: f64) -> NetworkConfig {
    NetworkConfig::from_p_off(&[p_n.to_vec(), p_m.to_vec()]).with_beta(beta)
}

pub fn fig7a_config(beta: f64) -> NetworkConfig {
    fig7_config([0.1, 0.5], [0.1, 0.5], beta)
}

pub fn fig7b_config(p2: f64) -> NetworkConfig {
    fig7_config([0.1, p2], [0.1, p2], 2.0)
}

pub fn fig8_config(p_m2: f64) -> NetworkConfig {
    fig7_config([0.0, 0.0], [0.0, p_m2], 2.0)
}

/// OFF probabilities of replication `r` in the random-channel scenario;
/// smaller K use a prefix of the same draw.
pub fn fig6_draws(master: u64, r: usize, k_max: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::from_seed(stream_seed(master, &format!("fig6-draws-{r}")));
    (0..k_max).map(|_| rng.random::<f64>()).collect()
}

fn simulate_points(
    cfgs: &[NetworkConfig],
    policies: &[PolicyKind],
    opts: &FigureOptions,
) -> Result<Vec<Vec<PolicyStats>>, FigureError> {
    let mut jobs = Vec::new();
    for (point, cfg) in cfgs.iter().enumerate() {
        for &policy in policies {
            for replication in 0..opts.seeds {
                jobs.push(Job {
                    point,
                    policy,
                    replication,
                    cfg: cfg.clone(),
                });
            }
        }
    }
    let runs = run_jobs(&jobs, &opts.settings)?;
    Ok((0..cfgs.len())
        .map(|point| policies.iter().map(|&p| stats_of(&runs, point, p)).collect())
        .collect())
}

fn stats_of(runs: &[RunSummary], point: usize, policy: PolicyKind) -> PolicyStats {
    let sel: Vec<&RunSummary> = runs.iter().filter(|r| r.point == point && r.policy == policy).collect();
    PolicyStats::from_runs(&sel)
}

fn comment(id: &str, cfgs: &[NetworkConfig], opts: &FigureOptions) -> String {
    let hash = config_hash(&json!({
        "figure": id,
        "configs": cfgs,
        "settings": opts.settings,
        "seeds": opts.seeds,
    }));
    provenance_comment(&hash, &opts.settings, opts.seeds)
}

fn dfc_rates(cfgs: &[NetworkConfig]) -> Result<Vec<Vec<Vec<f64>>>, FigureError> {
    cfgs.iter().map(|c| Ok(solve_dfc(c)?.lambdas)).collect()
}

/// Per-flow columns named `{flow}_{policy}` followed by standard errors.
fn per_flow_table(
    x_name: &str,
    xs: &[f64],
    flow_names: &[&str],
    policies: &[PolicyKind],
    stats: &[Vec<PolicyStats>],
    dfc: &[Vec<Vec<f64>>],
    comment: String,
) -> Table {
    let mut columns = vec![x_name.to_string()];
    for &p in policies {
        columns.extend(flow_names.iter().map(|f| format!("{f}_{}", short(p))));
    }
    columns.extend(flow_names.iter().map(|f| format!("{f}_dfc")));
    for &p in policies {
        columns.extend(flow_names.iter().map(|f| format!("{f}_{}_se", short(p))));
    }
    let rows = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let mut row = vec![x];
            for s in &stats[i] {
                row.extend(s.per_flow.iter().flatten().map(|e| e.mean));
            }
            row.extend(dfc[i].iter().flatten());
            for s in &stats[i] {
                row.extend(s.per_flow.iter().flatten().map(|e| e.se));
            }
            row
        })
        .collect();
    Table { comment, columns, rows }
}

fn total_table(x_name: &str, xs: &[f64], stats: &[Vec<PolicyStats>], dfc: &[Vec<Vec<f64>>], comment: String) -> Table {
    let columns = ["total_qfc", "total_mw", "total_dfc", "total_qfc_se", "total_mw_se"];
    let rows = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let (q, m) = (&stats[i][0], &stats[i][1]);
            let d: f64 = dfc[i].iter().flatten().sum();
            vec![x, q.total.mean, m.total.mean, d, q.total.se, m.total.se]
        })
        .collect();
    Table {
        comment,
        columns: std::iter::once(x_name).chain(columns).map(String::from).collect(),
        rows,
    }
}

fn fig5(panel: &str, opts: &FigureOptions) -> Result<Table, FigureError> {
    let xs: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
    let cfgs: Vec<NetworkConfig> = xs.iter().map(|&p| fig5_config(p)).collect();
    let stats = simulate_points(&cfgs, &COMPARED, opts)?;
    let dfc = dfc_rates(&cfgs)?;
    let c = comment(panel, &cfgs, opts);
    Ok(if panel == "fig5a" {
        per_flow_table("p2", &xs, &["lambda1", "lambda2"], &COMPARED, &stats, &dfc, c)
    } else {
        total_table("p2", &xs, &stats, &dfc, c)
    })
}

fn fig6(opts: &FigureOptions) -> Result<Vec<(String, Table)>, FigureError> {
    let ks = [2usize, 4, 6, 8, 10];
    let master = opts.settings.master_seed;
    let draws: Vec<Vec<f64>> = (0..opts.seeds).map(|r| fig6_draws(master, r, 10)).collect();
    let cfg_of = |k: usize, r: usize| NetworkConfig::from_p_off(&[draws[r][..k].to_vec()]);
    let mut jobs = Vec::new();
    for (point, &k) in ks.iter().enumerate() {
        for policy in COMPARED {
            for replication in 0..opts.seeds {
                jobs.push(Job {
                    point,
                    policy,
                    replication,
                    cfg: cfg_of(k, replication),
                });
            }
        }
    }
    let runs = run_jobs(&jobs, &opts.settings)?;
    let all_cfgs: Vec<NetworkConfig> = (0..opts.seeds).map(|r| cfg_of(10, r)).collect();
    let c = comment("fig6", &all_cfgs, opts);

    let mut rows_a = Vec::new();
    let mut rows_b = Vec::new();
    for (point, &k) in ks.iter().enumerate() {
        let per_flow = |p: PolicyKind| -> Vec<f64> {
            runs.iter()
                .filter(|r| r.point == point && r.policy == p)
                .map(|r| r.total_served() / k as f64)
                .collect()
        };
        let q = estimate(&per_flow(PolicyKind::Qfc));
        let m = estimate(&per_flow(PolicyKind::MaxWeight));
        let mut dfc = Vec::with_capacity(opts.seeds);
        for r in 0..opts.seeds {
            let sol = solve_dfc(&cfg_of(k, r))?;
            dfc.push(sol.lambdas.iter().flatten().sum::<f64>() / k as f64);
        }
        let d = estimate(&dfc);
        rows_a.push(vec![k as f64, q.mean, m.mean, d.mean, q.se, m.se]);
        let ratio = q.mean / m.mean;
        rows_b.push(vec![k as f64, ratio, (ratio - 1.0) * 100.0]);
    }
    let cols = |names: &[&str]| names.iter().map(|s| s.to_string()).collect();
    Ok(vec![
        (
            "fig6a".into(),
            Table {
                comment: c.clone(),
                columns: cols(&[
                    "K",
                    "avg_rate_qfc",
                    "avg_rate_mw",
                    "avg_rate_dfc",
                    "avg_rate_qfc_se",
                    "avg_rate_mw_se",
                ]),
                rows: rows_a,
            },
        ),
        (
            "fig6b".into(),
            Table {
                comment: c,
                columns: cols(&["K", "ratio_qfc_mw", "improvement_pct"]),
                rows: rows_b,
            },
        ),
    ])
}

fn fig7(panel: &str, opts: &FigureOptions) -> Result<Table, FigureError> {
    let (x_name, xs, cfgs): (&str, Vec<f64>, Vec<NetworkConfig>) = if panel == "fig7a" {
        let xs = vec![1.0, 1.5, 2.0, 2.5, 3.0];
        let cfgs = xs.iter().map(|&b| fig7a_config(b)).collect();
        ("beta", xs, cfgs)
    } else {
        let xs = unit_grid();
        let cfgs = xs.iter().map(|&p| fig7b_config(p)).collect();
        ("p2", xs, cfgs)
    };
    let stats = simulate_points(&cfgs, &COMPARED, opts)?;
    let dfc = dfc_rates(&cfgs)?;
    Ok(total_table(x_name, &xs, &stats, &dfc, comment(panel, &cfgs, opts)))
}

fn fig8(panel: &str, opts: &FigureOptions) -> Result<Table, FigureError> {
    let xs = unit_grid();
    let cfgs: Vec<NetworkConfig> = xs.iter().map(|&p| fig8_config(p)).collect();
    let policy = if panel == "fig8a" {
        PolicyKind::Qfc
    } else {
        PolicyKind::MaxWeight
    };
    let stats = simulate_points(&cfgs, &[policy], opts)?;
    let dfc = dfc_rates(&cfgs)?;
    Ok(per_flow_table(
        "p_m2",
        &xs,
        &["lambda_n1", "lambda_n2", "lambda_m1", "lambda_m2"],
        &[policy],
        &stats,
        &dfc,
        comment(panel, &cfgs, opts),
    ))
}

/// Tables of one figure, keyed by panel file stem.
pub fn reproduce(id: &str, opts: &FigureOptions) -> Result<Vec<(String, Table)>, FigureError> {
    let one = |t: Table| vec![(id.to_string(), t)];
    match id {
        "fig5a" | "fig5b" => Ok(one(fig5(id, opts)?)),
        "fig6" => fig6(opts),
        "fig7a" | "fig7b" => Ok(one(fig7(id, opts)?)),
        "fig8a" | "fig8b" => Ok(one(fig8(id, opts)?)),
        other => Err(FigureError::Unknown(other.to_string())),
    }
}
