use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::fifo::{FifoQueue, Packet};
use super::metrics::{MetricsAccumulator, TraceMetrics};
use super::rng::{RngStreams, StreamSeeds};
use super::trace::{write_trace_header, write_trace_rows};
use crate::config::{ConfigError, NetworkConfig};
use crate::policies::{Controller, ControllerError, HolState, QueueObservation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrivalMode {
    /// Fractional rates accumulate and release whole packets.
    Fluid,
    /// Poisson arrivals with the admitted rate as mean.
    Stochastic,
}

impl fmt::Display for ArrivalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArrivalMode::Fluid => "fluid",
            ArrivalMode::Stochastic => "stochastic",
        })
    }
}

impl FromStr for ArrivalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fluid" => Ok(ArrivalMode::Fluid),
            "stochastic" => Ok(ArrivalMode::Stochastic),
            other => Err(format!("unknown arrival mode `{other}` (expected fluid or stochastic)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error("warmup {warmup} must be below the horizon {horizon}")]
    Warmup { warmup: u64, horizon: u64 },
    #[error("expected {expected} entries in {what}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("mixing weights of queue {queue} must be nonnegative and sum to 1")]
    BadMix { queue: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub cfg: NetworkConfig,
    pub controller: Controller,
    pub horizon: u64,
    pub seed: u64,
    pub mode: ArrivalMode,
    pub warmup: u64,
    /// Packets per flow present before the first slot.
    pub initial_backlog: Option<Vec<Vec<u64>>>,
}

impl RunSpec {
    /// Fluid arrivals, warmup of a tenth of the horizon, empty start.
    pub fn new(cfg: NetworkConfig, controller: Controller, horizon: u64, seed: u64) -> Self {
        Self {
            cfg,
            controller,
            horizon,
            seed,
            mode: ArrivalMode::Fluid,
            warmup: horizon / 10,
            initial_backlog: None,
        }
    }

    pub fn with_mode(mut self, mode: ArrivalMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_warmup(mut self, warmup: u64) -> Self {
        self.warmup = warmup;
        self
    }

    pub fn with_initial_backlog(mut self, backlog: Vec<Vec<u64>>) -> Self {
        self.initial_backlog = Some(backlog);
        self
    }
}

/// What happened in one slot. Buffers are reused across slots.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    pub slot: u64,
    /// `Q_n(t)` before the slot.
    pub q_before: Vec<u64>,
    pub hol_state: Vec<HolState>,
    /// Joint state mask with EMPTY read as OFF.
    pub state_mask: u32,
    pub admitted: Vec<Vec<f64>>,
    pub arrivals: Vec<Vec<u64>>,
    /// Appended packets in buffer order, tagged by queue.
    pub new_packets: Vec<(usize, Packet)>,
    pub serve_queue: Option<usize>,
    pub served: Option<Packet>,
    /// `Q_n(t + 1)`.
    pub q_after: Vec<u64>,
}

impl SlotRecord {
    fn new(cfg: &NetworkConfig) -> Self {
        let n = cfg.n_queues();
        let per_flow = |v| cfg.queues.iter().map(|q| vec![v; q.flows.len()]).collect::<Vec<_>>();
        Self {
            slot: 0,
            q_before: vec![0; n],
            hol_state: vec![HolState::Empty; n],
            state_mask: 0,
            admitted: per_flow(0.0),
            arrivals: cfg.queues.iter().map(|q| vec![0; q.flows.len()]).collect(),
            new_packets: Vec::new(),
            serve_queue: None,
            served: None,
            q_after: vec![0; n],
        }
    }
}

/// Single-threaded slot engine.
#[derive(Debug, Clone)]
pub struct Engine {
    cfg: NetworkConfig,
    controller: Controller,
    mode: ArrivalMode,
    p_off: Vec<Vec<f64>>,
    queues: Vec<FifoQueue>,
    channels: Vec<Vec<bool>>,
    rngs: RngStreams,
    slot: u64,
    next_id: u64,
    obs: QueueObservation,
    record: SlotRecord,
    scratch: Vec<Packet>,
    hol_violations: u64,
}

impl Engine {
    pub fn new(spec: &RunSpec) -> Result<Self, SimError> {
        let cfg = spec.cfg.clone().checked()?;
        spec.controller.check_shape(&cfg)?;
        if let crate::policies::Admission::Fixed(l) = &spec.controller.admission {
            check_shape("rates", &cfg, l.iter().map(Vec::len))?;
        }
        let mut rngs = RngStreams::new(spec.seed);
        let mut queues: Vec<FifoQueue> = cfg.queues.iter().map(|q| FifoQueue::new(q.flows.len())).collect();
        let mut next_id = 0;
        if let Some(backlog) = &spec.initial_backlog {
            check_shape("initial backlog", &cfg, backlog.iter().map(Vec::len))?;
            for (queue, counts) in queues.iter_mut().zip(backlog) {
                let mut packets: Vec<Packet> = counts
                    .iter()
                    .enumerate()
                    .flat_map(|(k, &c)| {
                        (0..c).map(move |_| Packet {
                            flow: k as u32,
                            born: 0,
                            id: 0,
                        })
                    })
                    .collect();
                packets.shuffle(&mut rngs.arrivals);
                for mut p in packets {
                    p.id = next_id;
                    next_id += 1;
                    queue.push(p);
                }
            }
        }
        let p_off = (0..cfg.n_queues()).map(|n| cfg.queue_p_off(n)).collect();
        Ok(Self {
            channels: cfg.queues.iter().map(|q| vec![false; q.flows.len()]).collect(),
            obs: QueueObservation::empty(&cfg),
            record: SlotRecord::new(&cfg),
            controller: spec.controller.clone(),
            mode: spec.mode,
            p_off,
            queues,
            rngs,
            slot: 0,
            next_id,
            scratch: Vec::new(),
            hol_violations: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn queues(&self) -> &[FifoQueue] {
        &self.queues
    }

    pub fn seeds(&self) -> &StreamSeeds {
        &self.rngs.seeds
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    /// Serve decisions that met a HOL whose link was not ON (always zero).
    pub fn hol_violations(&self) -> u64 {
        self.hol_violations
    }

    pub fn backlog_per_flow(&self) -> Vec<Vec<u64>> {
        self.queues.iter().map(|q| q.per_flow().to_vec()).collect()
    }

    /// Advances one slot.
    pub fn step(&mut self) -> &SlotRecord {
        let t = self.slot;
        let rec = &mut self.record;
        rec.slot = t;

        // channel draws for every flow, so the stream does not depend on
        // which packets happen to be at the front
        for (row, p) in self.channels.iter_mut().zip(&self.p_off) {
            for (c, &p) in row.iter_mut().zip(p) {
                *c = self.rngs.channels.random::<f64>() >= p;
            }
        }

        let mut mask = 0u32;
        for (n, q) in self.queues.iter().enumerate() {
            self.obs.q_total[n] = q.len() as u64;
            self.obs.q_per_flow[n].copy_from_slice(q.per_flow());
            self.obs.hol_state[n] = match q.front() {
                None => HolState::Empty,
                Some(p) if self.channels[n][p.flow as usize] => HolState::On,
                Some(_) => HolState::Off,
            };
            if self.obs.hol_state[n].is_on() {
                mask |= 1 << n;
            }
        }
        rec.q_before.copy_from_slice(&self.obs.q_total);
        rec.hol_state.copy_from_slice(&self.obs.hol_state);
        rec.state_mask = mask;

        self.controller.admit(&self.cfg, &self.obs, &mut rec.admitted);
        rec.new_packets.clear();
        for (n, queue) in self.queues.iter_mut().enumerate() {
            self.scratch.clear();
            for (k, &rate) in rec.admitted[n].iter().enumerate() {
                let count = match self.mode {
                    ArrivalMode::Fluid => queue.accumulate(k, rate),
                    ArrivalMode::Stochastic if rate > 0.0 => Poisson::new(rate)
                        .map(|d| d.sample(&mut self.rngs.arrivals) as u64)
                        .unwrap_or(0),
                    ArrivalMode::Stochastic => 0,
                };
                rec.arrivals[n][k] = count;
                for _ in 0..count {
                    self.scratch.push(Packet {
                        flow: k as u32,
                        born: t,
                        id: 0,
                    });
                }
            }
            self.scratch.shuffle(&mut self.rngs.arrivals);
            for p in self.scratch.iter_mut() {
                p.id = self.next_id;
                self.next_id += 1;
                queue.push(*p);
                rec.new_packets.push((n, *p));
            }
        }

        // decisions use the observation from before this slot's arrivals,
        // whose front packets the appends above leave in place
        rec.serve_queue = self.controller.schedule(&self.obs, &mut self.rngs.scheduling);
        rec.served = None;
        if let Some(n) = rec.serve_queue {
            if self.obs.hol_state[n].is_on() {
                rec.served = self.queues[n].pop_front();
            } else {
                self.hol_violations += 1;
                rec.serve_queue = None;
            }
        }
        for (n, q) in self.queues.iter().enumerate() {
            rec.q_after[n] = q.len() as u64;
        }
        self.slot += 1;
        &self.record
    }
}

fn check_shape(
    what: &'static str,
    cfg: &NetworkConfig,
    lens: impl ExactSizeIterator<Item = usize>,
) -> Result<(), SimError> {
    if lens.len() != cfg.n_queues() {
        return Err(SimError::Shape {
            what,
            expected: cfg.n_queues(),
            got: lens.len(),
        });
    }
    for (n, len) in lens.enumerate() {
        if len != cfg.n_flows(n) {
            return Err(SimError::Shape {
                what,
                expected: cfg.n_flows(n),
                got: len,
            });
        }
    }
    Ok(())
}

/// Runs `spec.horizon` slots.
pub fn run(spec: &RunSpec) -> Result<TraceMetrics, SimError> {
    run_inner(spec, None)
}

/// As [`run`], also writing one CSV row per slot and queue.
pub fn run_with_trace(spec: &RunSpec, out: &mut dyn Write) -> Result<TraceMetrics, SimError> {
    run_inner(spec, Some(out))
}

fn run_inner(spec: &RunSpec, mut out: Option<&mut dyn Write>) -> Result<TraceMetrics, SimError> {
    if spec.warmup >= spec.horizon {
        return Err(SimError::Warmup {
            warmup: spec.warmup,
            horizon: spec.horizon,
        });
    }
    let mut engine = Engine::new(spec)?;
    let mut acc = MetricsAccumulator::new(&engine, spec);
    if let Some(w) = out.as_deref_mut() {
        write_trace_header(engine.config(), w)?;
    }
    for _ in 0..spec.horizon {
        let rec = engine.step();
        acc.observe(rec);
        if let Some(w) = out.as_deref_mut() {
            write_trace_rows(rec, w)?;
        }
    }
    Ok(acc.finish(&engine, spec))
}
