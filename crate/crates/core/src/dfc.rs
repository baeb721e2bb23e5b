//! Deterministic flow control: the convex program that picks per-queue scalar
//! rates and a queue-state policy to maximize total utility over the inner
//! bound of the stability region.
//!
//! Each scalar rate sits on its own constraint at the optimum, so it is
//! eliminated (`a_n = sum_S c_n(S) tau_n(S)`) and the remaining concave
//! problem over per-state simplices is solved by projected gradient ascent.

use serde::Serialize;
use thiserror::Error;

use crate::config::{NetworkConfig, Utility};
use crate::stability::{self, StabilityError};
use crate::state::{SchedulingPolicy, StateError, StateVector, MAX_QUEUES};

/// Lower guard on every scalar rate inside utilities.
pub const RATE_FLOOR: f64 = 1e-12;

const ARMIJO_C: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MIN_STEP: f64 = 1e-30;

#[derive(Debug, Error)]
pub enum DfcError {
    #[error(transparent)]
    Stability(#[from] StabilityError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("no convergence after {} iterations (kkt residual {:.3e})", .best.iterations, .best.kkt_residual)]
    NotConverged { best: Box<DfcSolution> },
    #[error("grid oracle supports at most 2 queues, got {0}")]
    TooLarge(usize),
    #[error("grid step must lie in (0, 1], got {0}")]
    BadStep(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DfcOptions {
    pub max_iterations: usize,
    /// Target for `||tau - P(tau + grad)||_inf`.
    pub tolerance: f64,
    /// Keep the objective after every iteration.
    pub record_objective: bool,
}

impl Default for DfcOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100_000,
            tolerance: 1e-6,
            record_objective: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DfcSolution {
    pub a: Vec<f64>,
    pub policy: SchedulingPolicy,
    pub lambdas: Vec<Vec<f64>>,
    /// Total utility of the queues that carry traffic.
    pub objective: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
    /// Queues that can never be served and are held at rate 0.
    pub excluded: Vec<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub objective_trace: Vec<f64>,
}

/// Euclidean projection onto `{x >= 0, sum(x) <= 1}`.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    project_simplex_in_place(&mut out);
    out
}

fn project_simplex_in_place(x: &mut [f64]) {
    let clipped: f64 = x.iter().map(|v| v.max(0.0)).sum();
    if clipped <= 1.0 {
        for v in x.iter_mut() {
            *v = v.max(0.0);
        }
        return;
    }
    // projection onto the face sum(x) = 1
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    for v in x.iter_mut() {
        *v = (*v - theta).max(0.0);
    }
}

/// The eliminated problem: variables are the policy entries that can earn
/// service (queue ON in that state), grouped by state.
#[derive(Debug, Clone)]
pub struct ReducedProblem {
    n_queues: usize,
    utility: Utility,
    gains: Vec<Vec<f64>>,
    live: Vec<bool>,
    /// Per state, the `(queue, coefficient)` pairs that are variables.
    blocks: Vec<Vec<(usize, f64)>>,
}

impl ReducedProblem {
    pub fn new(cfg: &NetworkConfig) -> Result<Self, DfcError> {
        let n_queues = cfg.n_queues();
        if n_queues > MAX_QUEUES {
            return Err(StateError::TooManyQueues(n_queues).into());
        }
        let table = stability::inner_bound_table(cfg)?;
        let live: Vec<bool> = table
            .iter()
            .map(|row| row.as_ref().is_some_and(|r| r.iter().any(|&c| c > 0.0)))
            .collect();
        let blocks = (0..1usize << n_queues)
            .map(|mask| {
                (0..n_queues)
                    .filter(|&n| live[n])
                    .filter_map(|n| {
                        let c = table[n].as_ref().map_or(0.0, |r| r[mask]);
                        (c > 0.0).then_some((n, c))
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            n_queues,
            utility: cfg.utility,
            gains: (0..n_queues).map(|n| cfg.rate_gains(n)).collect(),
            live,
            blocks,
        })
    }

    pub fn n_variables(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    pub fn is_live(&self, n: usize) -> bool {
        self.live[n]
    }

    /// Interior starting point: `1/N` on every variable.
    pub fn initial_point(&self) -> Vec<f64> {
        vec![1.0 / self.n_queues as f64; self.n_variables()]
    }

    /// Scalar rates implied by a variable vector.
    pub fn scalar_rates(&self, x: &[f64]) -> Vec<f64> {
        let mut a = vec![0.0; self.n_queues];
        let mut i = 0;
        for block in &self.blocks {
            for &(n, c) in block {
                a[n] += c * x[i];
                i += 1;
            }
        }
        a
    }

    fn queue_value(&self, n: usize, a: f64) -> f64 {
        let a = a.max(RATE_FLOOR);
        self.gains[n].iter().map(|&g| self.utility.scaled_value(a, g)).sum()
    }

    fn queue_marginal(&self, n: usize, a: f64) -> f64 {
        let a = a.max(RATE_FLOOR);
        self.gains[n].iter().map(|&g| self.utility.scaled_marginal(a, g)).sum()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let a = self.scalar_rates(x);
        (0..self.n_queues)
            .filter(|&n| self.live[n])
            .map(|n| self.queue_value(n, a[n]))
            .sum()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let a = self.scalar_rates(x);
        let marginal: Vec<f64> = (0..self.n_queues)
            .map(|n| {
                if self.live[n] {
                    self.queue_marginal(n, a[n])
                } else {
                    0.0
                }
            })
            .collect();
        self.blocks
            .iter()
            .flat_map(|block| block.iter().map(|&(n, c)| c * marginal[n]))
            .collect()
    }

    /// Projects every state's block onto its simplex.
    pub fn project(&self, x: &mut [f64]) {
        let mut start = 0;
        for block in &self.blocks {
            let end = start + block.len();
            project_simplex_in_place(&mut x[start..end]);
            start = end;
        }
    }

    /// `||x - P(x + grad)||_inf`.
    pub fn kkt_residual(&self, x: &[f64]) -> f64 {
        let g = self.gradient(x);
        let mut y: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + b).collect();
        self.project(&mut y);
        x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn policy(&self, x: &[f64]) -> SchedulingPolicy {
        let mut p = SchedulingPolicy::zeros(self.n_queues);
        let mut i = 0;
        for (mask, block) in self.blocks.iter().enumerate() {
            for &(n, _) in block {
                p.set(StateVector::from_mask(mask as u32, self.n_queues), n, x[i]);
                i += 1;
            }
        }
        p
    }

    fn solution(&self, x: &[f64], iterations: usize, kkt_residual: f64, trace: Vec<f64>) -> DfcSolution {
        let a = self.scalar_rates(x);
        let lambdas = a
            .iter()
            .zip(&self.gains)
            .map(|(&a_n, g)| g.iter().map(|&g| a_n * g).collect())
            .collect();
        DfcSolution {
            objective: self.objective(x),
            policy: self.policy(x),
            lambdas,
            a,
            iterations,
            kkt_residual,
            excluded: (0..self.n_queues).filter(|&n| !self.live[n]).collect(),
            objective_trace: trace,
        }
    }
}

/// Solves the deterministic flow-control program for `cfg`.
pub fn solve_dfc(cfg: &NetworkConfig) -> Result<DfcSolution, DfcError> {
    solve_dfc_with(cfg, &DfcOptions::default())
}

pub fn solve_dfc_with(cfg: &NetworkConfig, opts: &DfcOptions) -> Result<DfcSolution, DfcError> {
    let problem = ReducedProblem::new(cfg)?;
    let mut x = problem.initial_point();
    problem.project(&mut x);
    let mut f = problem.objective(&x);
    let mut trace = Vec::new();
    if opts.record_objective {
        trace.push(f);
    }
    let mut step = 1.0;
    let mut candidate = vec![0.0; x.len()];
    for iteration in 0..opts.max_iterations {
        let g = problem.gradient(&x);
        let residual = {
            for ((c, &xi), &gi) in candidate.iter_mut().zip(&x).zip(&g) {
                *c = xi + gi;
            }
            problem.project(&mut candidate);
            x.iter().zip(&candidate).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        if residual <= opts.tolerance {
            return Ok(problem.solution(&x, iteration, residual, trace));
        }
        // Armijo backtracking along the projection arc
        step *= 2.0;
        let accepted = loop {
            for ((c, &xi), &gi) in candidate.iter_mut().zip(&x).zip(&g) {
                *c = xi + step * gi;
            }
            problem.project(&mut candidate);
            let decrease: f64 = candidate
                .iter()
                .zip(&x)
                .zip(&g)
                .map(|((c, xi), gi)| gi * (c - xi))
                .sum();
            let f_new = problem.objective(&candidate);
            if f_new >= f + ARMIJO_C * decrease {
                break Some(f_new);
            }
            step *= BACKTRACK;
            if step < MIN_STEP {
                break None;
            }
        };
        match accepted {
            Some(f_new) => {
                x.copy_from_slice(&candidate);
                f = f_new;
                if opts.record_objective {
                    trace.push(f);
                }
            }
            None => {
                // no ascent direction left at machine precision
                let residual = problem.kkt_residual(&x);
                let sol = problem.solution(&x, iteration, residual, trace);
                return if residual <= opts.tolerance {
                    Ok(sol)
                } else {
                    Err(DfcError::NotConverged { best: Box::new(sol) })
                };
            }
        }
    }
    let residual = problem.kkt_residual(&x);
    let sol = problem.solution(&x, opts.max_iterations, residual, trace);
    if residual <= opts.tolerance {
        Ok(sol)
    } else {
        Err(DfcError::NotConverged { best: Box::new(sol) })
    }
}

/// Exhaustive `step`-grid search of the reduced program for at most two
/// queues. Returns the best objective and its policy.
pub fn grid_oracle(cfg: &NetworkConfig, step: f64) -> Result<(f64, SchedulingPolicy), DfcError> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(DfcError::BadStep(step));
    }
    let n_queues = cfg.n_queues();
    if n_queues > 2 {
        return Err(DfcError::TooLarge(n_queues));
    }
    let problem = ReducedProblem::new(cfg)?;
    let table = stability::inner_bound_table(cfg)?;
    let coeff = |n: usize, mask: usize| table[n].as_ref().map_or(0.0, |r| r[mask]);
    let steps = (1.0 / step).round() as usize;
    let grid = |i: usize| (i as f64 / steps as f64).min(1.0);
    let value = |n: usize, a: f64| {
        if problem.live[n] {
            problem.queue_value(n, a)
        } else {
            0.0
        }
    };

    if n_queues == 1 {
        let (best, t) = (0..=steps)
            .map(|i| (value(0, coeff(0, 1) * grid(i)), grid(i)))
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .expect("nonempty grid");
        let mut p = SchedulingPolicy::zeros(1);
        p.row_mut(1)[0] = t;
        return Ok((best, p));
    }
    // The objective separates by queue once the shared (ON,ON) split is fixed.
    let mut best = (f64::NEG_INFINITY, SchedulingPolicy::zeros(2));
    for i in 0..=steps {
        for j in 0..=steps - i {
            let shared = [grid(i), grid(j)];
            let mut total = 0.0;
            let mut own = [0.0; 2];
            for (n, mask) in [(0usize, 0b01usize), (1, 0b10)] {
                let (v, u) = (0..=steps)
                    .map(|u| {
                        let a = coeff(n, 0b11) * shared[n] + coeff(n, mask) * grid(u);
                        (value(n, a), grid(u))
                    })
                    .max_by(|a, b| a.0.total_cmp(&b.0))
                    .expect("nonempty grid");
                total += v;
                own[n] = u;
            }
            if total > best.0 {
                let mut p = SchedulingPolicy::zeros(2);
                p.row_mut(0b11).copy_from_slice(&shared);
                p.row_mut(0b01)[0] = own[0];
                p.row_mut(0b10)[1] = own[1];
                best = (total, p);
            }
        }
    }
    Ok(best)
}

/// `|objective(solve_dfc) - objective(grid search)|`.
pub fn dfc_gap_vs_oracle(cfg: &NetworkConfig, grid_step: f64) -> Result<f64, DfcError> {
    if cfg.n_queues() > 2 {
        return Err(DfcError::TooLarge(cfg.n_queues()));
    }
    let sol = solve_dfc(cfg)?;
    let (oracle, _) = grid_oracle(cfg, grid_step)?;
    Ok((sol.objective - oracle).abs())
}
