//! Online controllers: queue-based flow control with channel-normalized
//! scheduling, the per-flow max-weight baseline, and replay of a solved
//! static policy.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::NetworkConfig;
use crate::dfc::{self, DfcError, DfcSolution};
use crate::numeric::golden_section_max;
use crate::state::{SchedulingPolicy, StateVector};

const GOLDEN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HolState {
    On,
    Off,
    Empty,
}

impl HolState {
    pub fn is_on(self) -> bool {
        self == HolState::On
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueueObservation {
    pub q_total: Vec<u64>,
    pub q_per_flow: Vec<Vec<u64>>,
    pub hol_state: Vec<HolState>,
}

impl QueueObservation {
    pub fn empty(cfg: &NetworkConfig) -> Self {
        Self {
            q_total: vec![0; cfg.n_queues()],
            q_per_flow: cfg.queues.iter().map(|q| vec![0; q.flows.len()]).collect(),
            hol_state: vec![HolState::Empty; cfg.n_queues()],
        }
    }

    /// Joint state with EMPTY read as OFF.
    pub fn state_vector(&self) -> StateVector {
        let mask = self
            .hol_state
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_on())
            .fold(0u32, |m, (n, _)| m | 1 << n);
        StateVector::from_mask(mask, self.hol_state.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlDecision {
    pub admitted: Vec<Vec<f64>>,
    pub serve_queue: Option<usize>,
    pub g: Vec<u8>,
}

/// Scalar rate chosen by the queue-based flow controller of queue `n`.
///
/// Every flow of the queue counts toward its demand, including flows whose
/// link is never ON: their admitted rate is zero either way, and counting
/// them keeps the controller continuous as a link degrades to nothing.
pub fn qfc_flow_control(q_n: f64, cfg: &NetworkConfig, n: usize) -> f64 {
    let gains = cfg.rate_gains(n);
    qfc_rate(q_n, cfg, &gains)
}

fn qfc_rate(q_n: f64, cfg: &NetworkConfig, gains: &[f64]) -> f64 {
    let r_max = cfg.r_max;
    if q_n <= 0.0 {
        return r_max;
    }
    let u = cfg.utility;
    if u.is_log() {
        return (cfg.gain * u.weight() * gains.len() as f64 / q_n).min(r_max);
    }
    let objective = |a: f64| cfg.gain * gains.iter().map(|&g| u.scaled_value(a, g)).sum::<f64>() - q_n * a;
    golden_section_max(objective, 0.0, r_max, GOLDEN_TOL)
}

/// Per-flow admitted rates of queue `n` under queue-based flow control.
pub fn qfc_admission(q_n: f64, cfg: &NetworkConfig, n: usize) -> Vec<f64> {
    let gains = cfg.rate_gains(n);
    let a = qfc_rate(q_n, cfg, &gains);
    gains.iter().map(|g| a * g).collect()
}

/// `sum_k (p_on)^beta`, the divisor of queue `n`'s scheduling weight.
pub fn qfc_weight_normalizer(cfg: &NetworkConfig, n: usize) -> f64 {
    cfg.rate_gains(n).iter().sum()
}

fn argmax_on(obs: &QueueObservation, weight: impl Fn(usize) -> f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (n, s) in obs.hol_state.iter().enumerate() {
        if !s.is_on() {
            continue;
        }
        let w = weight(n);
        if best.is_none_or(|(_, b)| w > b) {
            best = Some((n, w));
        }
    }
    best.map(|(n, _)| n)
}

fn qfc_pick(obs: &QueueObservation, normalizers: &[f64]) -> Option<usize> {
    argmax_on(obs, |n| {
        let q = obs.q_total[n] as f64;
        if normalizers[n] > 0.0 {
            q / normalizers[n]
        } else {
            q
        }
    })
}

/// ON queue with the largest channel-normalized backlog; lowest index wins
/// ties.
pub fn qfc_schedule(obs: &QueueObservation, cfg: &NetworkConfig) -> Option<usize> {
    let norms: Vec<f64> = (0..cfg.n_queues()).map(|n| qfc_weight_normalizer(cfg, n)).collect();
    qfc_pick(obs, &norms)
}

/// Per-flow rate of the max-weight flow controller.
pub fn maxweight_flow_control(q_nk: f64, cfg: &NetworkConfig) -> f64 {
    let r_max = cfg.r_max;
    if q_nk <= 0.0 {
        return r_max;
    }
    let u = cfg.utility;
    if u.is_log() {
        return (cfg.gain * u.weight() / q_nk).min(r_max);
    }
    golden_section_max(|x| cfg.gain * u.value(x) - q_nk * x, 0.0, r_max, GOLDEN_TOL)
}

/// ON queue with the largest backlog; lowest index wins ties.
pub fn maxweight_schedule(obs: &QueueObservation) -> Option<usize> {
    argmax_on(obs, |n| obs.q_total[n] as f64)
}

/// Samples the served queue from `policy` in the observed state; the residual
/// probability and a pick whose HOL is not ON both mean no service.
pub fn sample_static(policy: &SchedulingPolicy, obs: &QueueObservation, u: f64) -> Option<usize> {
    let row = policy.row(obs.state_vector().index());
    let mut cumulative = 0.0;
    for (n, &t) in row.iter().enumerate() {
        cumulative += t;
        if u < cumulative {
            return obs.hol_state[n].is_on().then_some(n);
        }
    }
    None
}

/// One slot of the solved static policy: mean-rate admission and randomized
/// service.
pub fn static_dfc_policy(sol: &DfcSolution, obs: &QueueObservation, rng: &mut impl Rng) -> ControlDecision {
    let serve_queue = sample_static(&sol.policy, obs, rng.random::<f64>());
    let mut g = vec![0; obs.hol_state.len()];
    if let Some(n) = serve_queue {
        g[n] = 1;
    }
    ControlDecision {
        admitted: sol.lambdas.clone(),
        serve_queue,
        g,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Qfc,
    #[serde(rename = "maxweight")]
    MaxWeight,
    DfcStatic,
    /// Configured per-flow rates with max-weight scheduling.
    Fixed,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::Qfc,
        PolicyKind::MaxWeight,
        PolicyKind::DfcStatic,
        PolicyKind::Fixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Qfc => "qfc",
            PolicyKind::MaxWeight => "maxweight",
            PolicyKind::DfcStatic => "dfc-static",
            PolicyKind::Fixed => "fixed",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("unknown policy `{0}` (expected qfc, maxweight, dfc-static or fixed)")]
pub struct UnknownPolicy(pub String);

impl FromStr for PolicyKind {
    type Err = UnknownPolicy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| UnknownPolicy(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error(transparent)]
    Dfc(#[from] DfcError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("policy covers {policy} queues, network has {network}")]
    PolicyMismatch { policy: usize, network: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Admission {
    Qfc { gains: Vec<Vec<f64>> },
    MaxWeight,
    Fixed(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Scheduler {
    Qfc { normalizers: Vec<f64> },
    MaxWeight,
    Static(SchedulingPolicy),
}

/// Admission and scheduling rules with their configuration-dependent
/// constants precomputed, so that a slot allocates nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    pub kind: PolicyKind,
    pub admission: Admission,
    pub scheduler: Scheduler,
}

impl Controller {
    pub fn qfc(cfg: &NetworkConfig) -> Self {
        Self {
            kind: PolicyKind::Qfc,
            admission: Admission::Qfc {
                gains: (0..cfg.n_queues()).map(|n| cfg.rate_gains(n)).collect(),
            },
            scheduler: Scheduler::Qfc {
                normalizers: (0..cfg.n_queues()).map(|n| qfc_weight_normalizer(cfg, n)).collect(),
            },
        }
    }

    pub fn maxweight() -> Self {
        Self {
            kind: PolicyKind::MaxWeight,
            admission: Admission::MaxWeight,
            scheduler: Scheduler::MaxWeight,
        }
    }

    pub fn from_solution(sol: &DfcSolution) -> Self {
        Self {
            kind: PolicyKind::DfcStatic,
            admission: Admission::Fixed(sol.lambdas.clone()),
            scheduler: Scheduler::Static(sol.policy.clone()),
        }
    }

    /// Fixed rates served by a given static policy.
    pub fn static_with(lambdas: Vec<Vec<f64>>, policy: SchedulingPolicy) -> Self {
        Self {
            kind: PolicyKind::DfcStatic,
            admission: Admission::Fixed(lambdas),
            scheduler: Scheduler::Static(policy),
        }
    }

    pub fn fixed(lambdas: Vec<Vec<f64>>) -> Self {
        Self {
            kind: PolicyKind::Fixed,
            admission: Admission::Fixed(lambdas),
            scheduler: Scheduler::MaxWeight,
        }
    }

    pub fn build(kind: PolicyKind, cfg: &NetworkConfig) -> Result<Self, ControllerError> {
        Ok(match kind {
            PolicyKind::Qfc => Self::qfc(cfg),
            PolicyKind::MaxWeight => Self::maxweight(),
            PolicyKind::DfcStatic => Self::from_solution(&dfc::solve_dfc(cfg)?),
            PolicyKind::Fixed => Self::fixed(cfg.lambdas()?),
        })
    }

    /// Writes this slot's admitted rates into `out`.
    pub fn admit(&self, cfg: &NetworkConfig, obs: &QueueObservation, out: &mut [Vec<f64>]) {
        match &self.admission {
            Admission::Qfc { gains } => {
                for (n, row) in out.iter_mut().enumerate() {
                    let a = qfc_rate(obs.q_total[n] as f64, cfg, &gains[n]);
                    for (x, g) in row.iter_mut().zip(&gains[n]) {
                        *x = a * g;
                    }
                }
            }
            Admission::MaxWeight => {
                for (n, row) in out.iter_mut().enumerate() {
                    for (k, x) in row.iter_mut().enumerate() {
                        *x = maxweight_flow_control(obs.q_per_flow[n][k] as f64, cfg);
                    }
                }
            }
            Admission::Fixed(l) => {
                for (row, src) in out.iter_mut().zip(l) {
                    row.copy_from_slice(src);
                }
            }
        }
    }

    /// Queue to serve this slot; never one whose HOL is OFF or EMPTY.
    pub fn schedule(&self, obs: &QueueObservation, rng: &mut impl Rng) -> Option<usize> {
        match &self.scheduler {
            Scheduler::Qfc { normalizers } => qfc_pick(obs, normalizers),
            Scheduler::MaxWeight => maxweight_schedule(obs),
            Scheduler::Static(p) => sample_static(p, obs, rng.random::<f64>()),
        }
    }

    pub fn decide(&self, cfg: &NetworkConfig, obs: &QueueObservation, rng: &mut impl Rng) -> ControlDecision {
        let mut admitted: Vec<Vec<f64>> = cfg.queues.iter().map(|q| vec![0.0; q.flows.len()]).collect();
        self.admit(cfg, obs, &mut admitted);
        let serve_queue = self.schedule(obs, rng);
        let mut g = vec![0; cfg.n_queues()];
        if let Some(n) = serve_queue {
            g[n] = 1;
        }
        ControlDecision {
            admitted,
            serve_queue,
            g,
        }
    }

    pub fn check_shape(&self, cfg: &NetworkConfig) -> Result<(), ControllerError> {
        if let Scheduler::Static(p) = &self.scheduler {
            if p.n_queues() != cfg.n_queues() {
                return Err(ControllerError::PolicyMismatch {
                    policy: p.n_queues(),
                    network: cfg.n_queues(),
                });
            }
        }
        Ok(())
    }
}

/// Total utility of per-flow rates, over flows whose link can be ON.
pub fn network_utility(cfg: &NetworkConfig, lambdas: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (n, row) in lambdas.iter().enumerate() {
        for (k, &l) in row.iter().enumerate() {
            if cfg.p_on(n, k) > 0.0 {
                total += cfg.utility.value(l);
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Utility;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obs(q: &[u64], hol: &[HolState]) -> QueueObservation {
        QueueObservation {
            q_total: q.to_vec(),
            q_per_flow: q.iter().map(|&x| vec![x]).collect(),
            hol_state: hol.to_vec(),
        }
    }

    #[test]
    fn qfc_rate_examples() {
        let cfg = NetworkConfig::from_p_off(&[vec![0.1, 0.1]]);
        assert!((qfc_flow_control(400.0, &cfg, 0) - 0.5).abs() < 1e-15);
        assert_eq!(qfc_flow_control(0.0, &cfg, 0), 2.0);
        assert!((qfc_flow_control(1e9, &cfg, 0) - 2e-7).abs() < 1e-20);
        let l = qfc_admission(400.0, &cfg, 0);
        assert!((l[0] - 0.45).abs() < 1e-15);
    }

    #[test]
    fn qfc_dead_flow_counts_toward_demand() {
        let cfg = NetworkConfig::from_p_off(&[vec![0.0, 1.0]]);
        assert!((qfc_flow_control(400.0, &cfg, 0) - 0.5).abs() < 1e-15);
        assert_eq!(qfc_admission(400.0, &cfg, 0)[1], 0.0);
    }

    #[test]
    fn qfc_schedule_examples() {
        use HolState::*;
        // normalizers (1.0, 0.5)
        let cfg = NetworkConfig::from_p_off(&[vec![0.0], vec![0.5]]);
        assert_eq!(qfc_schedule(&obs(&[10, 5], &[On, On]), &cfg), Some(0));
        assert_eq!(qfc_schedule(&obs(&[10, 6], &[On, On]), &cfg), Some(1));
        assert_eq!(qfc_schedule(&obs(&[10, 5], &[Off, On]), &cfg), Some(1));
        assert_eq!(qfc_schedule(&obs(&[10, 0], &[Off, Empty]), &cfg), None);
    }

    #[test]
    fn maxweight_examples() {
        use HolState::*;
        let cfg = NetworkConfig::from_p_off(&[vec![0.1]]);
        assert!((maxweight_flow_control(1000.0, &cfg) - 0.1).abs() < 1e-15);
        assert_eq!(maxweight_flow_control(0.0, &cfg), 2.0);
        assert_eq!(maxweight_flow_control(50.0, &cfg), 2.0);
        assert_eq!(maxweight_schedule(&obs(&[10, 5], &[On, On])), Some(0));
        assert_eq!(maxweight_schedule(&obs(&[10, 5], &[Off, On])), Some(1));
        assert_eq!(maxweight_schedule(&obs(&[7, 7], &[On, On])), Some(0));
        assert_eq!(maxweight_schedule(&obs(&[7, 7], &[Off, Off])), None);
    }

    #[test]
    fn golden_section_path_matches_closed_form() {
        let mut cfg = NetworkConfig::from_p_off(&[vec![0.1, 0.5]]);
        cfg.utility = Utility::AlphaFair {
            alpha: 0.5,
            weight: 1.0,
        };
        // M sum_k sqrt(a g_k) * 2 - Q a, stationary at a = (M sum sqrt(g_k) / Q)^2
        let g: Vec<f64> = cfg.rate_gains(0);
        let q = 500.0;
        let expected = (cfg.gain * g.iter().map(|x| x.sqrt()).sum::<f64>() / q).powi(2);
        assert!((qfc_flow_control(q, &cfg, 0) - expected).abs() < 1e-8);
        let expected = (cfg.gain / q).powi(2);
        assert!((maxweight_flow_control(q, &cfg) - expected).abs() < 1e-8);
    }

    #[test]
    fn static_frequencies_match_policy() {
        use HolState::*;
        let p =
            SchedulingPolicy::new(2, vec![vec![0.0, 0.0], vec![0.6, 0.0], vec![0.0, 0.3], vec![0.25, 0.5]]).unwrap();
        let o = obs(&[3, 3], &[On, On]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let draws = 1_000_000;
        let mut counts = [0usize; 3];
        for _ in 0..draws {
            match sample_static(&p, &o, rand::Rng::random::<f64>(&mut rng)) {
                Some(n) => counts[n] += 1,
                None => counts[2] += 1,
            }
        }
        let f: Vec<f64> = counts.iter().map(|&c| c as f64 / draws as f64).collect();
        assert!((f[0] - 0.25).abs() < 0.01 && (f[1] - 0.5).abs() < 0.01 && (f[2] - 0.25).abs() < 0.01);
        // certain choice and empty row
        let q = SchedulingPolicy::new(1, vec![vec![0.0], vec![1.0]]).unwrap();
        assert_eq!(sample_static(&q, &obs(&[1], &[On]), 0.999), Some(0));
        assert_eq!(sample_static(&q, &obs(&[1], &[Off]), 0.0), None);
    }

    #[test]
    fn policy_names_roundtrip() {
        for p in PolicyKind::ALL {
            assert_eq!(p.name().parse::<PolicyKind>().unwrap(), p);
        }
        assert!("lqf".parse::<PolicyKind>().is_err());
    }

    fn hol_strategy(n: usize) -> impl Strategy<Value = Vec<HolState>> {
        prop::collection::vec(
            prop_oneof![Just(HolState::On), Just(HolState::Off), Just(HolState::Empty)],
            n,
        )
    }

    proptest! {
        #[test]
        fn qfc_rate_monotone(q1 in 0.0f64..1e6, dq in 0.0f64..1e6, m in 1.0f64..1e4, dm in 0.0f64..1e4) {
            let cfg = NetworkConfig::from_p_off(&[vec![0.2, 0.4]]).with_gain(m);
            prop_assert!(qfc_flow_control(q1 + dq, &cfg, 0) <= qfc_flow_control(q1, &cfg, 0));
            let cfg2 = NetworkConfig::from_p_off(&[vec![0.2, 0.4]]).with_gain(m + dm);
            prop_assert!(qfc_flow_control(q1, &cfg2, 0) >= qfc_flow_control(q1, &cfg, 0));
        }

        #[test]
        fn schedulers_pick_only_on_queues(
            q in prop::collection::vec(1u64..1000, 3),
            hol in hol_strategy(3),
            scale in 1u64..50,
        ) {
            let cfg = NetworkConfig::from_p_off(&[vec![0.1], vec![0.5, 0.3], vec![0.7]]).with_beta(2.0);
            let o = obs(&q, &hol);
            for pick in [qfc_schedule(&o, &cfg), maxweight_schedule(&o)] {
                match pick {
                    Some(n) => prop_assert!(o.hol_state[n].is_on()),
                    None => prop_assert!(o.hol_state.iter().all(|s| !s.is_on())),
                }
            }
            let scaled = obs(&q.iter().map(|x| x * scale).collect::<Vec<_>>(), &hol);
            prop_assert_eq!(qfc_schedule(&scaled, &cfg), qfc_schedule(&o, &cfg));
        }

        #[test]
        fn single_queue_schedulers_coincide(q in 0u64..100, on in any::<bool>()) {
            let cfg = NetworkConfig::from_p_off(&[vec![0.3, 0.6]]);
            let s = if q == 0 { HolState::Empty } else if on { HolState::On } else { HolState::Off };
            let o = obs(&[q], &[s]);
            prop_assert_eq!(qfc_schedule(&o, &cfg), maxweight_schedule(&o));
        }

        #[test]
        fn qfc_admission_on_fair_ray(q in 0.0f64..1e5, beta in 1.0f64..3.0) {
            let cfg = NetworkConfig::from_p_off(&[vec![0.1, 0.5, 1.0]]).with_beta(beta);
            let a = qfc_flow_control(q, &cfg, 0);
            let l = qfc_admission(q, &cfg, 0);
            for (x, g) in l.iter().zip(cfg.rate_gains(0)) {
                prop_assert_eq!(*x, a * g);
                prop_assert!(*x <= cfg.r_max * g + 1e-15);
            }
        }
    }
}
