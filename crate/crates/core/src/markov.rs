//! Closed-form steady state of the FIFO blocking chain.
//!
//! A backlogged FIFO queue is either unblocked (`z_0`: the HOL packet's link
//! is ON) or blocked on flow `k` (`z_k`: the HOL packet belongs to `k` and its
//! link is OFF). Every departure draws the next HOL flow with probability
//! `alpha_k = lambda_k / sum(lambda)`. The functions here evaluate the
//! stationary quantities of that chain and the product-form joint law of the
//! queue states and HOL flows across queues.
//!
//! Flows with `lambda_k = 0` never reach the head of the line and are dropped
//! before any ratio is formed; their probabilities are exactly zero.

use serde::Serialize;
use thiserror::Error;

use crate::config::NetworkConfig;
use crate::numeric::sum;
use crate::state::{ChannelState, StateVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarkovError {
    #[error("no traffic")]
    NoTraffic,
    #[error("absorbing blocking state: flow {flow} has traffic but its link is never ON")]
    AbsorbingBlockingState { flow: usize },
    #[error("{lambdas} rates but {p_off} OFF probabilities")]
    LengthMismatch { lambdas: usize, p_off: usize },
    #[error("invalid rate {value} for flow {flow}")]
    InvalidRate { flow: usize, value: f64 },
    #[error("invalid OFF probability {value} for flow {flow}")]
    InvalidProbability { flow: usize, value: f64 },
    #[error("index out of range: queue {queue}, flow {flow}")]
    IndexOutOfRange { queue: usize, flow: usize },
}

/// Stationary law of one backlogged FIFO queue.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteadyState {
    /// Probability that the HOL packet's link is ON.
    pub p_z0: f64,
    /// Probability of being blocked on each flow.
    pub p_zk: Vec<f64>,
    /// Probability that the HOL packet belongs to each flow.
    pub p_hol: Vec<f64>,
}

/// Per-flow `lambda_k / p_on_k` for live flows (0 for idle ones) and their sum.
fn resource_shares(lambdas: &[f64], p_off: &[f64]) -> Result<(Vec<f64>, f64, f64), MarkovError> {
    if lambdas.len() != p_off.len() {
        return Err(MarkovError::LengthMismatch {
            lambdas: lambdas.len(),
            p_off: p_off.len(),
        });
    }
    let mut shares = Vec::with_capacity(lambdas.len());
    for (flow, (&l, &p)) in lambdas.iter().zip(p_off).enumerate() {
        if !(l >= 0.0) || !l.is_finite() {
            return Err(MarkovError::InvalidRate { flow, value: l });
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(MarkovError::InvalidProbability { flow, value: p });
        }
        if l == 0.0 {
            shares.push(0.0);
            continue;
        }
        let p_on = 1.0 - p;
        if p_on == 0.0 {
            return Err(MarkovError::AbsorbingBlockingState { flow });
        }
        shares.push(l / p_on);
    }
    let total_rate = sum(lambdas);
    if total_rate == 0.0 {
        return Err(MarkovError::NoTraffic);
    }
    let total_share = sum(&shares);
    Ok((shares, total_rate, total_share))
}

pub fn single_queue_steady_state(lambdas: &[f64], p_off: &[f64]) -> Result<SteadyState, MarkovError> {
    let (shares, total_rate, total_share) = resource_shares(lambdas, p_off)?;
    let p_z0 = total_rate / total_share;
    let p_zk = lambdas
        .iter()
        .zip(p_off)
        .map(|(&l, &p)| {
            if l == 0.0 {
                0.0
            } else {
                p_z0 * (l / total_rate) * p / (1.0 - p)
            }
        })
        .collect();
    let p_hol = shares.iter().map(|s| s / total_share).collect();
    Ok(SteadyState { p_z0, p_zk, p_hol })
}

/// `P[H = k]`: the HOL flow is drawn in proportion to `alpha_k`, but lingers
/// at the head `1 / p_on_k` times longer.
pub fn hol_distribution(lambdas: &[f64], p_off: &[f64]) -> Result<Vec<f64>, MarkovError> {
    let (shares, _, total_share) = resource_shares(lambdas, p_off)?;
    Ok(shares.iter().map(|s| s / total_share).collect())
}

/// Fraction of slots in which a backlogged queue can transmit.
pub fn service_availability(lambdas: &[f64], p_off: &[f64]) -> Result<f64, MarkovError> {
    let (_, total_rate, total_share) = resource_shares(lambdas, p_off)?;
    Ok(total_rate / total_share)
}

/// `P[S | H = k]`: the queue state is the HOL flow's link state.
pub fn xi(s: ChannelState, p_off: f64) -> f64 {
    match s {
        ChannelState::On => 1.0 - p_off,
        ChannelState::Off => p_off,
    }
}

/// `xi / p_on`: 1 when ON, `p / p_on` when OFF.
pub fn rho(s: ChannelState, p_off: f64) -> f64 {
    match s {
        ChannelState::On => 1.0,
        ChannelState::Off => p_off / (1.0 - p_off),
    }
}

/// Marginal probability that a backlogged queue is in state `s`.
///
/// A queue without traffic is always empty and is never schedulable, so it
/// is reported as OFF with probability one.
pub fn queue_state_marginal(lambdas: &[f64], p_off: &[f64], s: ChannelState) -> Result<f64, MarkovError> {
    match resource_shares(lambdas, p_off) {
        Ok((shares, _, total_share)) => {
            let mass = shares.iter().zip(p_off).map(|(&sh, &p)| sh * xi(s, p));
            Ok(sum(&mass.collect::<Vec<_>>()) / total_share)
        }
        Err(MarkovError::NoTraffic) => Ok(match s {
            ChannelState::On => 0.0,
            ChannelState::Off => 1.0,
        }),
        Err(e) => Err(e),
    }
}

/// `P[S_1..S_N, H_n = k]` for backlogged queues: queue `n`'s term times the
/// independent state marginals of every other queue.
pub fn joint_state_hol_prob(
    cfg: &NetworkConfig,
    lambdas: &[Vec<f64>],
    s: StateVector,
    n: usize,
    k: usize,
) -> Result<f64, MarkovError> {
    if n >= cfg.n_queues() || k >= cfg.n_flows(n) || lambdas.len() != cfg.n_queues() {
        return Err(MarkovError::IndexOutOfRange { queue: n, flow: k });
    }
    let p_off_n = cfg.queue_p_off(n);
    let hol = hol_distribution(&lambdas[n], &p_off_n)?;
    let mut prob = xi(s.get(n), p_off_n[k]) * hol[k];
    for m in (0..cfg.n_queues()).filter(|&m| m != n) {
        prob *= queue_state_marginal(&lambdas[m], &cfg.queue_p_off(m), s.get(m))?;
    }
    Ok(prob)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::enumerate_states;
    use proptest::prelude::*;

    const EPS: f64 = 1e-12;

    /// Stationary vector of a row-stochastic matrix by power iteration.
    fn stationary(p: &[Vec<f64>]) -> Vec<f64> {
        let n = p.len();
        let mut pi = vec![1.0 / n as f64; n];
        for _ in 0..200_000 {
            let mut next = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    next[j] += pi[i] * p[i][j];
                }
            }
            let diff: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
            pi = next;
            if diff < 1e-15 {
                break;
            }
        }
        pi
    }

    /// Transition matrix over (z_0, z_1..z_K) for a backlogged queue.
    fn blocking_chain(lambdas: &[f64], p_off: &[f64]) -> Vec<Vec<f64>> {
        let total: f64 = lambdas.iter().sum();
        let k = lambdas.len();
        let mut p = vec![vec![0.0; k + 1]; k + 1];
        let mut leave = 0.0;
        for i in 0..k {
            p[0][i + 1] = lambdas[i] / total * p_off[i];
            leave += p[0][i + 1];
            p[i + 1][0] = 1.0 - p_off[i];
            p[i + 1][i + 1] = p_off[i];
        }
        p[0][0] = 1.0 - leave;
        p
    }

    /// Transition matrix over the HOL flow identity.
    fn hol_chain(lambdas: &[f64], p_off: &[f64]) -> Vec<Vec<f64>> {
        let total: f64 = lambdas.iter().sum();
        let k = lambdas.len();
        let mut p = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in 0..k {
                p[i][j] = (1.0 - p_off[i]) * lambdas[j] / total;
            }
            p[i][i] += p_off[i];
        }
        p
    }

    #[test]
    fn two_flow_example() {
        let ss = single_queue_steady_state(&[0.2, 0.2], &[0.5, 0.0]).unwrap();
        assert!((ss.p_z0 - 2.0 / 3.0).abs() < EPS);
        assert!((ss.p_zk[0] - 1.0 / 3.0).abs() < EPS);
        assert_eq!(ss.p_zk[1], 0.0);
        let oracle = stationary(&blocking_chain(&[0.2, 0.2], &[0.5, 0.0]));
        assert!((oracle[0] - ss.p_z0).abs() < 1e-9);
        assert!((oracle[1] - ss.p_zk[0]).abs() < 1e-9);
    }

    #[test]
    fn never_blocking_single_flow() {
        let ss = single_queue_steady_state(&[0.3], &[0.0]).unwrap();
        assert_eq!(ss.p_z0, 1.0);
        assert_eq!(ss.p_hol, vec![1.0]);
    }

    #[test]
    fn symmetric_collapse() {
        let ss = single_queue_steady_state(&[0.1, 0.1], &[0.4, 0.4]).unwrap();
        assert!((ss.p_z0 - 0.6).abs() < EPS);
        assert!((service_availability(&[0.45, 0.45], &[0.1, 0.1]).unwrap() - 0.9).abs() < EPS);
        assert!((service_availability(&[0.2, 0.2], &[0.5, 0.0]).unwrap() - 2.0 / 3.0).abs() < EPS);
        assert!((service_availability(&[0.4], &[0.3]).unwrap() - 0.7).abs() < EPS);
    }

    #[test]
    fn hol_examples() {
        let h = hol_distribution(&[0.3, 0.3], &[0.4, 0.1]).unwrap();
        assert!((h[0] - 0.6).abs() < EPS && (h[1] - 0.4).abs() < EPS);
        let oracle = stationary(&hol_chain(&[0.3, 0.3], &[0.4, 0.1]));
        assert!((oracle[0] - 0.6).abs() < 1e-9);

        let h = hol_distribution(&[0.1, 0.3, 0.6], &[0.2, 0.2, 0.2]).unwrap();
        for (a, b) in h.iter().zip([0.1, 0.3, 0.6]) {
            assert!((a - b).abs() < EPS);
        }
        assert_eq!(hol_distribution(&[0.7], &[0.5]).unwrap(), vec![1.0]);
    }

    #[test]
    fn xi_and_rho() {
        assert!((xi(ChannelState::On, 0.3) - 0.7).abs() < EPS);
        assert_eq!(xi(ChannelState::Off, 0.3), 0.3);
        assert_eq!(xi(ChannelState::On, 1.0), 0.0);
        assert_eq!(rho(ChannelState::On, 0.3), 1.0);
        assert!((rho(ChannelState::Off, 0.5) - 1.0).abs() < EPS);
    }

    #[test]
    fn errors() {
        assert_eq!(
            single_queue_steady_state(&[0.0, 0.0], &[0.1, 0.1]),
            Err(MarkovError::NoTraffic)
        );
        assert_eq!(
            single_queue_steady_state(&[0.1, 0.2], &[0.1, 1.0]),
            Err(MarkovError::AbsorbingBlockingState { flow: 1 })
        );
        assert!(matches!(
            hol_distribution(&[0.1], &[0.1, 0.2]),
            Err(MarkovError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn idle_dead_flow_is_dropped() {
        let ss = single_queue_steady_state(&[0.2, 0.0], &[0.5, 1.0]).unwrap();
        assert!((ss.p_z0 - 0.5).abs() < EPS);
        assert_eq!(ss.p_hol, vec![1.0, 0.0]);
        assert_eq!(ss.p_zk[1], 0.0);
    }

    #[test]
    fn joint_single_queue_reduces_to_xi_times_hol() {
        let cfg = NetworkConfig::from_p_off(&[vec![0.4, 0.1]]);
        let on = StateVector::from_mask(1, 1);
        let p = joint_state_hol_prob(&cfg, &[vec![0.3, 0.3]], on, 0, 0).unwrap();
        assert!((p - 0.36).abs() < EPS);
    }

    #[test]
    fn joint_all_on_channels() {
        let cfg = NetworkConfig::from_p_off(&[vec![0.0, 0.0], vec![0.0]]);
        let lambdas = vec![vec![0.1, 0.3], vec![0.2]];
        for s in enumerate_states(2).unwrap() {
            let p = joint_state_hol_prob(&cfg, &lambdas, s, 0, 1).unwrap();
            if s.mask() == 0b11 {
                assert!((p - 0.75).abs() < EPS);
            } else {
                assert_eq!(p, 0.0);
            }
        }
    }

    #[test]
    fn joint_sums_to_one_over_states_and_flows() {
        let cfg = NetworkConfig::from_p_off(&[vec![0.4, 0.1], vec![0.7], vec![0.2, 0.5, 0.3]]);
        let lambdas = vec![vec![0.1, 0.2], vec![0.15], vec![0.05, 0.1, 0.2]];
        for n in 0..3 {
            let mut total = 0.0;
            for s in enumerate_states(3).unwrap() {
                for k in 0..cfg.n_flows(n) {
                    total += joint_state_hol_prob(&cfg, &lambdas, s, n, k).unwrap();
                }
            }
            assert!((total - 1.0).abs() < 1e-12, "queue {n}: {total}");
        }
    }

    #[test]
    fn marginal_is_service_availability() {
        let (l, p) = ([0.2, 0.1, 0.3], [0.3, 0.6, 0.1]);
        let on = queue_state_marginal(&l, &p, ChannelState::On).unwrap();
        let off = queue_state_marginal(&l, &p, ChannelState::Off).unwrap();
        assert!((on - service_availability(&l, &p).unwrap()).abs() < EPS);
        assert!((on + off - 1.0).abs() < EPS);
        assert_eq!(queue_state_marginal(&[0.0], &[0.3], ChannelState::Off).unwrap(), 1.0);
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..8).prop_flat_map(|k| {
            (
                prop::collection::vec(0.0f64..1.0, k),
                prop::collection::vec(0.0f64..0.95, k),
            )
        })
    }

    proptest! {
        #[test]
        fn probabilities_normalize((mut lambdas, p_off) in instance()) {
            lambdas[0] += 0.01;
            let ss = single_queue_steady_state(&lambdas, &p_off).unwrap();
            let total = ss.p_z0 + ss.p_zk.iter().sum::<f64>();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!((ss.p_hol.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for v in ss.p_zk.iter().chain(&ss.p_hol).chain([&ss.p_z0]) {
                prop_assert!((0.0..=1.0 + 1e-12).contains(v));
            }
        }

        #[test]
        fn scale_invariance((mut lambdas, p_off) in instance(), c in 0.01f64..100.0) {
            lambdas[0] += 0.01;
            let a = single_queue_steady_state(&lambdas, &p_off).unwrap();
            let scaled: Vec<f64> = lambdas.iter().map(|l| l * c).collect();
            let b = single_queue_steady_state(&scaled, &p_off).unwrap();
            prop_assert!((a.p_z0 - b.p_z0).abs() < 1e-12);
            for (x, y) in a.p_zk.iter().zip(&b.p_zk).chain(a.p_hol.iter().zip(&b.p_hol)) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn matches_power_iteration((mut lambdas, p_off) in instance()) {
            lambdas[0] += 0.01;
            let ss = single_queue_steady_state(&lambdas, &p_off).unwrap();
            let oracle = stationary(&blocking_chain(&lambdas, &p_off));
            prop_assert!((oracle[0] - ss.p_z0).abs() < 1e-7);
            for k in 0..lambdas.len() {
                prop_assert!((oracle[k + 1] - ss.p_zk[k]).abs() < 1e-7);
            }
            let hol = stationary(&hol_chain(&lambdas, &p_off));
            for k in 0..lambdas.len() {
                prop_assert!((hol[k] - ss.p_hol[k]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn many_flows_use_compensated_sums() {
        let lambdas = vec![1e-3; 500];
        let p_off = vec![0.2; 500];
        let ss = single_queue_steady_state(&lambdas, &p_off).unwrap();
        assert!((ss.p_z0 - 0.8).abs() < 1e-12);
        assert!((ss.p_hol.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
