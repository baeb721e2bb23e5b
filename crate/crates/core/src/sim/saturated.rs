//! Always-backlogged queues: every departure is immediately replaced by a
//! packet whose flow is drawn from the queue's mix.

use rand::Rng;
use serde::Serialize;

use super::engine::SimError;
use super::rng::RngStreams;
use crate::config::NetworkConfig;
use crate::policies::{sample_static, HolState, QueueObservation};
use crate::state::SchedulingPolicy;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaturatedStats {
    pub slots: u64,
    /// Per queue, fraction of slots whose HOL link was ON.
    pub p_z0: Vec<f64>,
    /// Per queue and flow, fraction of slots blocked on that flow.
    pub p_zk: Vec<Vec<f64>>,
    /// Per queue and flow, fraction of slots that flow held the HOL.
    pub p_hol: Vec<Vec<f64>>,
    /// `joint[mask][n][k]`: fraction of slots in joint state `mask` with
    /// flow `k` at the HOL of queue `n`.
    pub joint: Vec<Vec<Vec<f64>>>,
}

fn draw_flow(mix: &[f64], u: f64) -> usize {
    let mut cumulative = 0.0;
    for (k, &a) in mix.iter().enumerate() {
        cumulative += a;
        if u < cumulative {
            return k;
        }
    }
    // rounding in the cumulative sum: last flow with positive weight
    mix.iter().rposition(|&a| a > 0.0).unwrap_or(0)
}

/// Saturated run under `policy` (default: an even split over ON queues).
pub fn run_saturated(
    cfg: &NetworkConfig,
    hol_mix: &[Vec<f64>],
    horizon: u64,
    seed: u64,
    policy: Option<&SchedulingPolicy>,
) -> Result<SaturatedStats, SimError> {
    let n_queues = cfg.n_queues();
    if hol_mix.len() != n_queues {
        return Err(SimError::Shape {
            what: "hol mix",
            expected: n_queues,
            got: hol_mix.len(),
        });
    }
    for (n, mix) in hol_mix.iter().enumerate() {
        if mix.len() != cfg.n_flows(n) {
            return Err(SimError::Shape {
                what: "hol mix",
                expected: cfg.n_flows(n),
                got: mix.len(),
            });
        }
        let total: f64 = mix.iter().sum();
        if mix.iter().any(|&a| !(a >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(SimError::BadMix { queue: n });
        }
    }
    let default_policy;
    let policy = match policy {
        Some(p) => p,
        None => {
            default_policy = SchedulingPolicy::uniform_over_on(n_queues);
            &default_policy
        }
    };
    let mut rngs = RngStreams::new(seed);
    let p_off: Vec<Vec<f64>> = (0..n_queues).map(|n| cfg.queue_p_off(n)).collect();
    let mut hol: Vec<usize> = hol_mix
        .iter()
        .map(|mix| draw_flow(mix, rngs.arrivals.random::<f64>()))
        .collect();
    let mut obs = QueueObservation::empty(cfg);
    obs.q_total.fill(1);

    let mut on_count = vec![0u64; n_queues];
    let mut hol_count: Vec<Vec<u64>> = cfg.queues.iter().map(|q| vec![0; q.flows.len()]).collect();
    let mut blocked = hol_count.clone();
    let mut joint = vec![hol_count.clone(); 1 << n_queues];

    for _ in 0..horizon {
        let mut mask = 0usize;
        for n in 0..n_queues {
            let mut hol_on = false;
            for (k, &p) in p_off[n].iter().enumerate() {
                let on = rngs.channels.random::<f64>() >= p;
                if k == hol[n] {
                    hol_on = on;
                }
            }
            obs.hol_state[n] = if hol_on { HolState::On } else { HolState::Off };
            if hol_on {
                mask |= 1 << n;
                on_count[n] += 1;
            } else {
                blocked[n][hol[n]] += 1;
            }
            hol_count[n][hol[n]] += 1;
        }
        for n in 0..n_queues {
            joint[mask][n][hol[n]] += 1;
        }
        if let Some(n) = sample_static(policy, &obs, rngs.scheduling.random::<f64>()) {
            hol[n] = draw_flow(&hol_mix[n], rngs.arrivals.random::<f64>());
        }
    }

    let t = horizon as f64;
    let frac =
        |v: &Vec<Vec<u64>>| -> Vec<Vec<f64>> { v.iter().map(|r| r.iter().map(|&c| c as f64 / t).collect()).collect() };
    Ok(SaturatedStats {
        slots: horizon,
        p_z0: on_count.iter().map(|&c| c as f64 / t).collect(),
        p_zk: frac(&blocked),
        p_hol: frac(&hol_count),
        joint: joint.iter().map(frac).collect(),
    })
}
