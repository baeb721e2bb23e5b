//! Membership tests for the exact stability region of FIFO queues under
//! queue-state policies and for its convex inner bound.

use std::fmt;
use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::config::NetworkConfig;
use crate::markov::{self, MarkovError};
use crate::numeric::sig6;
use crate::state::{enumerate_states, ChannelState, SchedulingPolicy, StateError, StateVector};

/// Absolute tolerance on every slack.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum StabilityError {
    #[error(transparent)]
    Markov(#[from] MarkovError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("dead queue {queue}: no flow has a usable link")]
    DeadQueue { queue: usize },
    #[error("expected {expected} entries, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("policy covers {policy} queues, network has {network}")]
    PolicyMismatch { policy: usize, network: usize },
    #[error("grid search supports at most 2 queues, got {0}")]
    TooLarge(usize),
    #[error("grid step must lie in (0, 1], got {0}")]
    BadStep(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintKind {
    /// Single-queue capacity condition.
    Capacity { queue: usize },
    /// Per-flow service condition under a policy.
    Rate { queue: usize, flow: usize },
    /// Scalar-rate condition of the inner bound.
    InnerBound { queue: usize },
    /// Per-state policy budget.
    PolicyBudget { state: u32 },
}

impl fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintKind::Capacity { queue } => write!(f, "capacity[{queue}]"),
            ConstraintKind::Rate { queue, flow } => write!(f, "rate[{queue}][{flow}]"),
            ConstraintKind::InnerBound { queue } => write!(f, "inner[{queue}]"),
            ConstraintKind::PolicyBudget { state } => write!(f, "budget[{state:#b}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Constraint {
    pub kind: ConstraintKind,
    /// Right-hand side minus left-hand side.
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Margin {
    pub feasible: bool,
    pub constraints: Vec<Constraint>,
}

impl Margin {
    pub fn from_constraints(constraints: Vec<Constraint>) -> Self {
        let feasible = constraints.iter().all(|c| c.slack >= -FEASIBILITY_TOL);
        Self { feasible, constraints }
    }

    pub fn slacks(&self) -> Vec<f64> {
        self.constraints.iter().map(|c| c.slack).collect()
    }

    /// Smallest slack, or `+inf` when there are no constraints.
    pub fn min_slack(&self) -> f64 {
        self.constraints.iter().map(|c| c.slack).fold(f64::INFINITY, f64::min)
    }

    /// Smallest slack among constraints matching `pred`.
    pub fn min_slack_where(&self, pred: impl Fn(&ConstraintKind) -> bool) -> f64 {
        self.constraints
            .iter()
            .filter(|c| pred(&c.kind))
            .map(|c| c.slack)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Capacity of one FIFO queue: `sum(lambda_k / p_on_k) <= 1`.
pub fn check_single_queue(lambdas: &[f64], p_off: &[f64]) -> Margin {
    let load: f64 = lambdas
        .iter()
        .zip(p_off)
        .map(|(&l, &p)| {
            if l == 0.0 {
                0.0
            } else if p >= 1.0 {
                f64::INFINITY
            } else {
                l / (1.0 - p)
            }
        })
        .sum();
    Margin::from_constraints(vec![Constraint {
        kind: ConstraintKind::Capacity { queue: 0 },
        slack: 1.0 - load,
    }])
}

fn check_policy_shape(cfg: &NetworkConfig, policy: &SchedulingPolicy) -> Result<(), StabilityError> {
    if policy.n_queues() != cfg.n_queues() {
        return Err(StabilityError::PolicyMismatch {
            policy: policy.n_queues(),
            network: cfg.n_queues(),
        });
    }
    Ok(())
}

fn check_rates_shape(cfg: &NetworkConfig, lambdas: &[Vec<f64>]) -> Result<(), StabilityError> {
    if lambdas.len() != cfg.n_queues() {
        return Err(StabilityError::Shape {
            expected: cfg.n_queues(),
            got: lambdas.len(),
        });
    }
    for (n, l) in lambdas.iter().enumerate() {
        if l.len() != cfg.n_flows(n) {
            return Err(StabilityError::Shape {
                expected: cfg.n_flows(n),
                got: l.len(),
            });
        }
    }
    Ok(())
}

/// `[queue][0 = OFF, 1 = ON]` state marginals under the given rates.
fn state_marginals(cfg: &NetworkConfig, lambdas: &[Vec<f64>]) -> Result<Vec<[f64; 2]>, StabilityError> {
    (0..cfg.n_queues())
        .map(|m| {
            let p = cfg.queue_p_off(m);
            Ok([
                markov::queue_state_marginal(&lambdas[m], &p, ChannelState::Off)?,
                markov::queue_state_marginal(&lambdas[m], &p, ChannelState::On)?,
            ])
        })
        .collect()
}

fn product_except(marginals: &[[f64; 2]], s: StateVector, n: usize) -> f64 {
    marginals
        .iter()
        .enumerate()
        .filter(|&(m, _)| m != n)
        .map(|(m, psi)| psi[s.is_on(m) as usize])
        .product()
}

/// Policy-weighted service opportunity of queue `n` in units of its resource
/// demand: `sum_S 1[S_n] prod_{m != n} psi_m(S_m) tau_n(S)`.
fn service_opportunity(marginals: &[[f64; 2]], policy: &SchedulingPolicy, n: usize) -> f64 {
    let n_queues = marginals.len();
    (0..1u32 << n_queues)
        .map(|mask| StateVector::from_mask(mask, n_queues))
        .filter(|s| s.is_on(n))
        .map(|s| product_except(marginals, s, n) * policy.get(s, n))
        .sum()
}

/// Service rate available to flow `(n, k)` under `policy`.
pub fn service_bound(
    cfg: &NetworkConfig,
    lambdas: &[Vec<f64>],
    policy: &SchedulingPolicy,
    n: usize,
    k: usize,
) -> Result<f64, StabilityError> {
    check_rates_shape(cfg, lambdas)?;
    check_policy_shape(cfg, policy)?;
    let lambda = lambdas[n][k];
    if lambda == 0.0 {
        return Ok(0.0);
    }
    let marginals = state_marginals(cfg, lambdas)?;
    let p_off = cfg.queue_p_off(n);
    let demand: f64 = lambdas[n]
        .iter()
        .zip(&p_off)
        .filter(|(&l, _)| l > 0.0)
        .map(|(&l, &p)| l / (1.0 - p))
        .sum();
    Ok(lambda / demand * service_opportunity(&marginals, policy, n))
}

/// Stability under a queue-state policy: one slack per flow plus one per
/// joint state.
pub fn check_policy_region(
    cfg: &NetworkConfig,
    lambdas: &[Vec<f64>],
    policy: &SchedulingPolicy,
) -> Result<Margin, StabilityError> {
    check_rates_shape(cfg, lambdas)?;
    check_policy_shape(cfg, policy)?;
    let mut constraints = Vec::new();
    for n in 0..cfg.n_queues() {
        for k in 0..cfg.n_flows(n) {
            let bound = service_bound(cfg, lambdas, policy, n, k)?;
            constraints.push(Constraint {
                kind: ConstraintKind::Rate { queue: n, flow: k },
                slack: bound - lambdas[n][k],
            });
        }
    }
    constraints.extend(budget_constraints(policy));
    Ok(Margin::from_constraints(constraints))
}

fn budget_constraints(policy: &SchedulingPolicy) -> impl Iterator<Item = Constraint> + '_ {
    policy.rows().iter().enumerate().map(|(mask, row)| Constraint {
        kind: ConstraintKind::PolicyBudget { state: mask as u32 },
        slack: 1.0 - row.iter().sum::<f64>(),
    })
}

/// `sum_k (p_on)^(beta - 1)`, the normalizer of queue `n`'s scalar rate.
fn inner_normalizer(cfg: &NetworkConfig, n: usize) -> f64 {
    cfg.queues[n].flows.iter().map(|f| f.p_on().powf(cfg.beta - 1.0)).sum()
}

/// State weight of queue `m` along the fair ray `lambda = a * p_on^beta`.
/// A queue whose every link is dead never carries traffic and counts as OFF.
pub fn omega(cfg: &NetworkConfig, m: usize, s: ChannelState) -> f64 {
    let norm = inner_normalizer(cfg, m);
    if norm == 0.0 {
        return match s {
            ChannelState::On => 0.0,
            ChannelState::Off => 1.0,
        };
    }
    let weighted: f64 = cfg.queues[m]
        .flows
        .iter()
        .map(|f| f.p_on().powf(cfg.beta - 1.0) * markov::xi(s, f.p_off))
        .sum();
    weighted / norm
}

/// Coefficient `c_n(S)` of `tau_n(S)` in queue `n`'s inner-bound constraint.
pub fn inner_bound_coefficient(cfg: &NetworkConfig, n: usize, s: StateVector) -> Result<f64, StabilityError> {
    let norm = inner_normalizer(cfg, n);
    if norm == 0.0 {
        return Err(StabilityError::DeadQueue { queue: n });
    }
    if !s.is_on(n) {
        return Ok(0.0);
    }
    let others: f64 = (0..cfg.n_queues())
        .filter(|&m| m != n)
        .map(|m| omega(cfg, m, s.get(m)))
        .product();
    Ok(others / norm)
}

/// `coefficients[n][mask]`; rows of dead queues are `None`.
pub fn inner_bound_table(cfg: &NetworkConfig) -> Result<Vec<Option<Vec<f64>>>, StabilityError> {
    let states = enumerate_states(cfg.n_queues())?;
    Ok((0..cfg.n_queues())
        .map(|n| {
            states
                .iter()
                .map(|&s| inner_bound_coefficient(cfg, n, s))
                .collect::<Result<Vec<_>, _>>()
                .ok()
        })
        .collect())
}

/// Inner-bound membership of per-queue scalar rates `a` under `policy`.
pub fn check_inner_bound(cfg: &NetworkConfig, a: &[f64], policy: &SchedulingPolicy) -> Result<Margin, StabilityError> {
    check_policy_shape(cfg, policy)?;
    if a.len() != cfg.n_queues() {
        return Err(StabilityError::Shape {
            expected: cfg.n_queues(),
            got: a.len(),
        });
    }
    let states = enumerate_states(cfg.n_queues())?;
    let mut constraints = Vec::with_capacity(cfg.n_queues() + states.len());
    for (n, &a_n) in a.iter().enumerate() {
        let capacity = if inner_normalizer(cfg, n) == 0.0 {
            0.0
        } else {
            let mut total = 0.0;
            for &s in &states {
                total += inner_bound_coefficient(cfg, n, s)? * policy.get(s, n);
            }
            total
        };
        constraints.push(Constraint {
            kind: ConstraintKind::InnerBound { queue: n },
            slack: capacity - a_n,
        });
    }
    constraints.extend(budget_constraints(policy));
    Ok(Margin::from_constraints(constraints))
}

/// Flow rates on the fair ray: `lambda_{n,k} = a_n * p_on^beta`.
pub fn rates_from_scalar(cfg: &NetworkConfig, a: &[f64]) -> Vec<Vec<f64>> {
    a.iter()
        .enumerate()
        .map(|(n, &a_n)| cfg.rate_gains(n).into_iter().map(|g| a_n * g).collect())
        .collect()
}

/// Two queues: `n` with two flows, `m` with one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoQueueInstance {
    pub p_n: [f64; 2],
    pub p_m: f64,
}

impl TwoQueueInstance {
    pub fn config(&self) -> NetworkConfig {
        NetworkConfig::from_p_off(&[self.p_n.to_vec(), vec![self.p_m]])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryPoint {
    pub lambda_n1: f64,
    pub lambda_n2: f64,
    pub lambda_m1_max: f64,
}

impl BoundaryPoint {
    pub fn rates(&self) -> Vec<Vec<f64>> {
        vec![vec![self.lambda_n1, self.lambda_n2], vec![self.lambda_m1_max]]
    }
}

/// Largest `lambda_m1` that keeps both queues stable when queue `n` carries
/// `lambda_n`, or `None` when queue `n` alone already exceeds its capacity.
pub fn two_queue_max_rate(inst: &TwoQueueInstance, lambda_n: [f64; 2]) -> Option<f64> {
    let p_on_m = 1.0 - inst.p_m;
    let total_n = lambda_n[0] + lambda_n[1];
    if total_n == 0.0 {
        return Some(p_on_m);
    }
    let demand_n: f64 = lambda_n
        .iter()
        .zip(inst.p_n)
        .filter(|(&l, _)| l > 0.0)
        .map(|(&l, p)| if p >= 1.0 { f64::INFINITY } else { l / (1.0 - p) })
        .sum();
    if demand_n > 1.0 + FEASIBILITY_TOL {
        return None;
    }
    let availability_n = total_n / demand_n;
    let joint = inst.p_m * availability_n + p_on_m - total_n;
    Some(joint.min(p_on_m).max(0.0))
}

/// Boundary surface of the two-queue region over a `resolution`-step grid of
/// queue `n`'s rates; grid points outside queue `n`'s own capacity are skipped.
pub fn sweep_two_queue_boundary(inst: &TwoQueueInstance, resolution: usize) -> Vec<BoundaryPoint> {
    let res = resolution.max(1);
    let (max1, max2) = (1.0 - inst.p_n[0], 1.0 - inst.p_n[1]);
    let mut out = Vec::new();
    for i in 0..=res {
        for j in 0..=res {
            let lambda_n = [max1 * i as f64 / res as f64, max2 * j as f64 / res as f64];
            if let Some(m) = two_queue_max_rate(inst, lambda_n) {
                out.push(BoundaryPoint {
                    lambda_n1: lambda_n[0],
                    lambda_n2: lambda_n[1],
                    lambda_m1_max: m,
                });
            }
        }
    }
    out
}

pub fn write_boundary_csv(points: &[BoundaryPoint], mut out: impl Write) -> io::Result<()> {
    writeln!(out, "lambda_n1,lambda_n2,lambda_m1_max")?;
    for p in points {
        writeln!(
            out,
            "{},{},{}",
            sig6(p.lambda_n1),
            sig6(p.lambda_n2),
            sig6(p.lambda_m1_max)
        )?;
    }
    Ok(())
}

/// Exhaustive policy search on a `step` grid for networks of at most two
/// queues. Maximizes the smallest per-flow slack; budgets are hard.
pub fn best_policy_grid(
    cfg: &NetworkConfig,
    lambdas: &[Vec<f64>],
    step: f64,
) -> Result<(SchedulingPolicy, Margin), StabilityError> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(StabilityError::BadStep(step));
    }
    check_rates_shape(cfg, lambdas)?;
    let n_queues = cfg.n_queues();
    if n_queues > 2 {
        return Err(StabilityError::TooLarge(n_queues));
    }
    let steps = (1.0 / step).round() as usize;
    let grid = |i: usize| (i as f64 / steps as f64).min(1.0);
    let marginals = state_marginals(cfg, lambdas)?;

    // Service opportunity is linear in tau: weights[n][mask] * tau_n(mask).
    let weights: Vec<Vec<f64>> = (0..n_queues)
        .map(|n| {
            (0..1u32 << n_queues)
                .map(|mask| {
                    let s = StateVector::from_mask(mask, n_queues);
                    if s.is_on(n) {
                        product_except(&marginals, s, n)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let demands: Vec<f64> = (0..n_queues)
        .map(|n| {
            lambdas[n]
                .iter()
                .zip(cfg.queue_p_off(n))
                .filter(|(&l, _)| l > 0.0)
                .map(|(&l, p)| if p >= 1.0 { f64::INFINITY } else { l / (1.0 - p) })
                .sum()
        })
        .collect();
    // Each queue's binding slack depends on its own tau only.
    let queue_slack = |n: usize, opportunity: f64| -> f64 {
        lambdas[n]
            .iter()
            .map(|&l| {
                if l == 0.0 {
                    0.0
                } else {
                    l / demands[n] * opportunity - l
                }
            })
            .fold(f64::INFINITY, f64::min)
    };

    let mut best: Option<(f64, SchedulingPolicy)> = None;
    if n_queues == 1 {
        for i in 0..=steps {
            let v = queue_slack(0, weights[0][1] * grid(i));
            if best.as_ref().is_none_or(|(b, _)| v > *b) {
                let mut p = SchedulingPolicy::zeros(1);
                p.row_mut(1)[0] = grid(i);
                best = Some((v, p));
            }
        }
    } else {
        for i in 0..=steps {
            for j in 0..=steps - i {
                let shared = [grid(i), grid(j)];
                // single-ON states: each queue's own search
                let mut per_queue = [f64::NEG_INFINITY; 2];
                let mut choice = [0.0; 2];
                for (n, mask) in [(0usize, 0b01usize), (1, 0b10)] {
                    for u in 0..=steps {
                        let opp = weights[n][0b11] * shared[n] + weights[n][mask] * grid(u);
                        let v = queue_slack(n, opp);
                        if v > per_queue[n] {
                            per_queue[n] = v;
                            choice[n] = grid(u);
                        }
                    }
                }
                let v = per_queue[0].min(per_queue[1]);
                if best.as_ref().is_none_or(|(b, _)| v > *b) {
                    let mut p = SchedulingPolicy::zeros(2);
                    p.row_mut(0b11).copy_from_slice(&shared);
                    p.row_mut(0b01)[0] = choice[0];
                    p.row_mut(0b10)[1] = choice[1];
                    best = Some((v, p));
                }
            }
        }
    }
    let (_, policy) = best.expect("grid is nonempty");
    let margin = check_policy_region(cfg, lambdas, &policy)?;
    Ok((policy, margin))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const EPS: f64 = 1e-12;

    #[test]
    fn single_queue_examples() {
        let m = check_single_queue(&[0.45, 0.45], &[0.1, 0.1]);
        assert!(m.feasible);
        assert!(m.min_slack().abs() < EPS);
        let m = check_single_queue(&[0.0, 0.0], &[0.1, 0.1]);
        assert_eq!(m.min_slack(), 1.0);
        let m = check_single_queue(&[0.5, 0.5], &[0.1, 0.1]);
        assert!(!m.feasible);
        assert!((m.min_slack() + 1.0 / 9.0).abs() < EPS);
        let m = check_single_queue(&[0.1], &[1.0]);
        assert_eq!(m.min_slack(), f64::NEG_INFINITY);
    }

    #[test]
    fn policy_bound_single_queue_reduces_to_capacity() {
        let cfg = NetworkConfig::from_p_off(&[vec![0.1, 0.5]]);
        let pol = SchedulingPolicy::serve_when_on();
        // boundary point: 0.45/0.9 + 0.25/0.5 = 1
        let lambdas = vec![vec![0.45, 0.25]];
        for k in 0..2 {
            let b = service_bound(&cfg, &lambdas, &pol, 0, k).unwrap();
            assert!((b - lambdas[0][k]).abs() < EPS);
        }
        let zero = vec![vec![0.0, 0.25]];
        assert_eq!(service_bound(&cfg, &zero, &pol, 0, 0).unwrap(), 0.0);
        let none = SchedulingPolicy::zeros(1);
        assert_eq!(service_bound(&cfg, &lambdas, &none, 0, 1).unwrap(), 0.0);
    }

    #[test]
    fn all_zero_rates_feasible() {
        let cfg = NetworkConfig::from_p_off(&[vec![0.6, 0.1], vec![0.7]]);
        let m = check_policy_region(&cfg, &[vec![0.0, 0.0], vec![0.0]], &SchedulingPolicy::uniform(2)).unwrap();
        assert!(m.feasible);
    }

    #[test]
    fn policy_region_matches_capacity_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pol = SchedulingPolicy::serve_when_on();
        for _ in 0..1000 {
            let k = rng.random_range(1..=4);
            let p: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..0.95)).collect();
            let l: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..0.6)).collect();
            if l.iter().all(|&x| x == 0.0) {
                continue;
            }
            let cfg = NetworkConfig::from_p_off(std::slice::from_ref(&p));
            let t2 = check_policy_region(&cfg, std::slice::from_ref(&l), &pol).unwrap();
            let t1 = check_single_queue(&l, &p);
            assert_eq!(
                t1.feasible,
                t2.feasible,
                "{l:?} {p:?} {} {}",
                t1.min_slack(),
                t2.min_slack()
            );
        }
    }

    #[test]
    fn omega_examples() {
        let cfg = NetworkConfig::from_p_off(&[vec![0.3], vec![0.1, 0.5]]);
        let on = omega(&cfg, 1, ChannelState::On);
        let off = omega(&cfg, 1, ChannelState::Off);
        assert!((on - 0.7).abs() < EPS);
        assert!((off - 0.3).abs() < EPS);
    }

    #[test]
    fn omega_complement_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for beta in [1.0, 1.5, 2.0, 3.0] {
            for _ in 0..50 {
                let k = rng.random_range(1..=5);
                let p: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
                let cfg = NetworkConfig::from_p_off(&[p]).with_beta(beta);
                let total = omega(&cfg, 0, ChannelState::On) + omega(&cfg, 0, ChannelState::Off);
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn coefficient_examples() {
        let cfg = NetworkConfig::from_p_off(&[vec![0.1, 0.5]]);
        let c_on = inner_bound_coefficient(&cfg, 0, StateVector::from_mask(1, 1)).unwrap();
        let c_off = inner_bound_coefficient(&cfg, 0, StateVector::from_mask(0, 1)).unwrap();
        assert!((c_on - 0.5).abs() < EPS);
        assert_eq!(c_off, 0.0);

        let cfg = NetworkConfig::from_p_off(&[vec![1.0, 1.0]]).with_beta(2.0);
        assert_eq!(
            inner_bound_coefficient(&cfg, 0, StateVector::from_mask(1, 1)),
            Err(StabilityError::DeadQueue { queue: 0 })
        );
    }

    #[test]
    fn inner_bound_single_queue() {
        let cfg = NetworkConfig::from_p_off(&[vec![0.1, 0.5]]);
        let pol = SchedulingPolicy::serve_when_on();
        assert!(check_inner_bound(&cfg, &[0.5], &pol).unwrap().feasible);
        assert!(!check_inner_bound(&cfg, &[0.6], &pol).unwrap().feasible);
        assert!(
            check_inner_bound(&cfg, &[0.0], &SchedulingPolicy::zeros(1))
                .unwrap()
                .feasible
        );
    }

    #[test]
    fn fair_ray_is_tight_for_one_queue() {
        let p = [0.1, 0.5, 0.3];
        let cfg = NetworkConfig::from_p_off(&[p.to_vec()]);
        let pol = SchedulingPolicy::serve_when_on();
        for a in [0.1, 0.2, 1.0 / 3.0, 0.4] {
            let lambdas = rates_from_scalar(&cfg, &[a]);
            let s2 = check_single_queue(&lambdas[0], &p).min_slack();
            let s10 = check_inner_bound(&cfg, &[a], &pol).unwrap().constraints[0].slack;
            assert!((s2 - 3.0 * s10).abs() < 1e-12);
        }
    }

    /// Random inner-bound-feasible point: draw a policy, then a fraction of
    /// each queue's capacity.
    fn random_inner_point(rng: &mut ChaCha8Rng) -> (NetworkConfig, Vec<f64>, SchedulingPolicy) {
        let n = rng.random_range(1..=3);
        let p: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..rng.random_range(1..=3))
                    .map(|_| rng.random_range(0.0..0.9))
                    .collect()
            })
            .collect();
        let beta = if rng.random_bool(0.5) {
            1.0
        } else {
            rng.random_range(1.0..3.0)
        };
        let cfg = NetworkConfig::from_p_off(&p).with_beta(beta);
        let mut pol = SchedulingPolicy::zeros(n);
        for mask in 0..1usize << n {
            let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let scale = rng.random::<f64>() / raw.iter().sum::<f64>();
            for (q, r) in raw.iter().enumerate() {
                pol.row_mut(mask)[q] = r * scale;
            }
        }
        let caps = check_inner_bound(&cfg, &vec![0.0; n], &pol).unwrap();
        let a = (0..n)
            .map(|q| caps.constraints[q].slack * rng.random_range(0.01..1.0))
            .collect();
        (cfg, a, pol)
    }

    #[test]
    fn inner_bound_is_contained_in_region() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let (cfg, a, pol) = random_inner_point(&mut rng);
            assert!(check_inner_bound(&cfg, &a, &pol).unwrap().feasible);
            let lambdas = rates_from_scalar(&cfg, &a);
            let m = check_policy_region(&cfg, &lambdas, &pol).unwrap();
            assert!(m.feasible, "{cfg:?} {a:?} {}", m.min_slack());
        }
    }

    #[test]
    fn two_queue_closed_form_examples() {
        let inst = TwoQueueInstance {
            p_n: [0.6, 0.1],
            p_m: 0.7,
        };
        assert!((two_queue_max_rate(&inst, [0.0, 0.0]).unwrap() - 0.3).abs() < EPS);
        // capacity of queue n exceeded
        assert_eq!(two_queue_max_rate(&inst, [0.4, 0.1]), None);
        // hand evaluation: A = 0.3 / (0.1/0.4 + 0.2/0.9)
        let a = 0.3 / (0.25 + 0.2 / 0.9);
        let expected = (0.7 * a + 0.3 - 0.3f64).min(0.3);
        assert!((two_queue_max_rate(&inst, [0.1, 0.2]).unwrap() - expected).abs() < EPS);
    }

    #[test]
    fn sweep_matches_policy_grid_oracle() {
        let inst = TwoQueueInstance {
            p_n: [0.6, 0.1],
            p_m: 0.7,
        };
        let cfg = inst.config();
        let points = sweep_two_queue_boundary(&inst, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let p = points[rng.random_range(0..points.len())];
            // bisection on lambda_m1 using the grid oracle's verdict
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            for _ in 0..20 {
                let mid = 0.5 * (lo + hi);
                let rates = vec![vec![p.lambda_n1, p.lambda_n2], vec![mid]];
                let (_, m) = best_policy_grid(&cfg, &rates, 0.01).unwrap();
                if m.min_slack_where(|k| matches!(k, ConstraintKind::Rate { .. })) >= -1e-9 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            // the grid only approximates the optimal split
            assert!((lo - p.lambda_m1_max).abs() < 0.01, "{p:?}: oracle {lo}");
            assert!(lo <= p.lambda_m1_max + 1e-9);
        }
    }

    #[test]
    fn boundary_csv_header() {
        let inst = TwoQueueInstance {
            p_n: [0.6, 0.1],
            p_m: 0.7,
        };
        let pts = sweep_two_queue_boundary(&inst, 2);
        let mut buf = Vec::new();
        write_boundary_csv(&pts, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("lambda_n1,lambda_n2,lambda_m1_max"));
        assert_eq!(lines.next(), Some("0,0,0.300000"));
    }

    #[test]
    fn grid_oracle_rejects_large_networks() {
        let cfg = NetworkConfig::from_p_off(&[vec![0.1], vec![0.1], vec![0.1]]);
        let r = best_policy_grid(&cfg, &[vec![0.1], vec![0.1], vec![0.1]], 0.1);
        assert_eq!(r.unwrap_err(), StabilityError::TooLarge(3));
    }

    proptest! {
        #[test]
        fn capacity_slack_shrinks_with_p_off(
            l in prop::collection::vec(0.0f64..0.5, 1..5),
            p in prop::collection::vec(0.0f64..0.9, 5),
            idx in 0usize..5,
            bump in 0.0f64..0.09,
        ) {
            let p = &p[..l.len()];
            let i = idx % l.len();
            let mut q = p.to_vec();
            q[i] += bump;
            prop_assert!(check_single_queue(&l, &q).min_slack() <= check_single_queue(&l, p).min_slack() + 1e-12);
        }

        #[test]
        fn two_queue_region_shrinks_with_p_off(
            p in prop::collection::vec(0.0f64..0.85, 3),
            frac in (0.0f64..1.0, 0.0f64..1.0),
            which in 0usize..3,
            bump in 0.0f64..0.1,
        ) {
            let inst = TwoQueueInstance { p_n: [p[0], p[1]], p_m: p[2] };
            let mut worse = inst;
            match which {
                0 => worse.p_n[0] += bump,
                1 => worse.p_n[1] += bump,
                _ => worse.p_m += bump,
            }
            // point inside the worse instance's own-queue capacity
            let lambda_n = [frac.0 * 0.5 * (1.0 - worse.p_n[0]), frac.1 * 0.5 * (1.0 - worse.p_n[1])];
            let a = two_queue_max_rate(&inst, lambda_n).unwrap();
            let b = two_queue_max_rate(&worse, lambda_n).unwrap();
            prop_assert!(b <= a + 1e-12);
        }
    }
}
