use serde::Serialize;

use super::detect::{detect_stability, DetectError, StabilityReport};
use super::engine::{ArrivalMode, Engine, RunSpec, SlotRecord};
use super::rng::StreamSeeds;
use crate::policies::network_utility;

/// Run summary. Rates are time averages over the slots after warmup.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceMetrics {
    pub policy: String,
    pub mode: ArrivalMode,
    pub horizon: u64,
    pub warmup: u64,
    pub seed: u64,
    pub seeds: StreamSeeds,
    /// Mean of the controllers' per-slot admitted rates.
    pub admitted_rate: Vec<Vec<f64>>,
    /// Packets that entered the buffers, per slot.
    pub arrival_rate: Vec<Vec<f64>>,
    pub served_rate: Vec<Vec<f64>>,
    /// Utility of the mean admitted rates.
    pub utility: f64,
    /// Slots spent in each joint state (EMPTY counted as OFF).
    pub state_visits: Vec<u64>,
    /// `state_serves[mask][n]`: packets served from queue `n` in state `mask`.
    pub state_serves: Vec<Vec<u64>>,
    pub admitted_packets: Vec<Vec<u64>>,
    pub served_packets: Vec<Vec<u64>>,
    pub initial_backlog: Vec<Vec<u64>>,
    pub final_backlog: Vec<Vec<u64>>,
    pub mean_backlog: Vec<f64>,
    pub max_backlog: Vec<u64>,
    pub hol_violations: u64,
    /// `Q_n(t + 1)` for every slot.
    #[serde(skip)]
    pub q_series: Vec<Vec<u32>>,
}

impl TraceMetrics {
    pub fn total_admitted_rate(&self) -> f64 {
        self.admitted_rate.iter().flatten().sum()
    }

    pub fn total_served_rate(&self) -> f64 {
        self.served_rate.iter().flatten().sum()
    }

    pub fn total_backlog_series(&self) -> Vec<f64> {
        let len = self.q_series.first().map_or(0, Vec::len);
        (0..len)
            .map(|t| self.q_series.iter().map(|q| q[t] as f64).sum())
            .collect()
    }

    /// Stability verdict on the total backlog with the default thresholds.
    pub fn stability(&self) -> Result<StabilityReport, DetectError> {
        detect_stability(&self.total_backlog_series(), self.warmup as usize)
    }
}

pub(super) struct MetricsAccumulator {
    warmup: u64,
    admitted_sum: Vec<Vec<f64>>,
    arrivals_window: Vec<Vec<u64>>,
    served_window: Vec<Vec<u64>>,
    admitted_packets: Vec<Vec<u64>>,
    served_packets: Vec<Vec<u64>>,
    state_visits: Vec<u64>,
    state_serves: Vec<Vec<u64>>,
    backlog_sum: Vec<f64>,
    max_backlog: Vec<u64>,
    q_series: Vec<Vec<u32>>,
    initial_backlog: Vec<Vec<u64>>,
}

impl MetricsAccumulator {
    pub(super) fn new(engine: &Engine, spec: &RunSpec) -> Self {
        let cfg = engine.config();
        let n = cfg.n_queues();
        let zeros = || cfg.queues.iter().map(|q| vec![0u64; q.flows.len()]).collect::<Vec<_>>();
        Self {
            warmup: spec.warmup,
            admitted_sum: cfg.queues.iter().map(|q| vec![0.0; q.flows.len()]).collect(),
            arrivals_window: zeros(),
            served_window: zeros(),
            admitted_packets: zeros(),
            served_packets: zeros(),
            state_visits: vec![0; 1 << n],
            state_serves: vec![vec![0; n]; 1 << n],
            backlog_sum: vec![0.0; n],
            max_backlog: vec![0; n],
            q_series: vec![Vec::with_capacity(spec.horizon as usize); n],
            initial_backlog: engine.backlog_per_flow(),
        }
    }

    pub(super) fn observe(&mut self, rec: &SlotRecord) {
        let counted = rec.slot >= self.warmup;
        for (n, row) in rec.arrivals.iter().enumerate() {
            for (k, &c) in row.iter().enumerate() {
                self.admitted_packets[n][k] += c;
                if counted {
                    self.arrivals_window[n][k] += c;
                    self.admitted_sum[n][k] += rec.admitted[n][k];
                }
            }
        }
        if let (Some(n), Some(p)) = (rec.serve_queue, rec.served) {
            self.served_packets[n][p.flow as usize] += 1;
            if counted {
                self.served_window[n][p.flow as usize] += 1;
                self.state_serves[rec.state_mask as usize][n] += 1;
            }
        }
        if counted {
            self.state_visits[rec.state_mask as usize] += 1;
        }
        for (n, &q) in rec.q_after.iter().enumerate() {
            self.q_series[n].push(q.min(u32::MAX as u64) as u32);
            if counted {
                self.backlog_sum[n] += q as f64;
                self.max_backlog[n] = self.max_backlog[n].max(q);
            }
        }
    }

    pub(super) fn finish(self, engine: &Engine, spec: &RunSpec) -> TraceMetrics {
        let window = (spec.horizon - spec.warmup) as f64;
        let rate = |v: &Vec<Vec<u64>>| -> Vec<Vec<f64>> {
            v.iter()
                .map(|r| r.iter().map(|&c| c as f64 / window).collect())
                .collect()
        };
        let admitted_rate: Vec<Vec<f64>> = self
            .admitted_sum
            .iter()
            .map(|r| r.iter().map(|&s| s / window).collect())
            .collect();
        TraceMetrics {
            policy: spec.controller.kind.name().to_string(),
            mode: spec.mode,
            horizon: spec.horizon,
            warmup: spec.warmup,
            seed: spec.seed,
            seeds: engine.seeds().clone(),
            utility: network_utility(engine.config(), &admitted_rate),
            admitted_rate,
            arrival_rate: rate(&self.arrivals_window),
            served_rate: rate(&self.served_window),
            state_visits: self.state_visits,
            state_serves: self.state_serves,
            admitted_packets: self.admitted_packets,
            served_packets: self.served_packets,
            initial_backlog: self.initial_backlog,
            final_backlog: engine.backlog_per_flow(),
            mean_backlog: self.backlog_sum.iter().map(|s| s / window).collect(),
            max_backlog: self.max_backlog,
            hol_violations: engine.hol_violations(),
            q_series: self.q_series,
        }
    }
}
