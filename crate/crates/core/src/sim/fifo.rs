use std::collections::VecDeque;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Packet {
    pub flow: u32,
    pub born: u64,
    /// Network-wide append order.
    pub id: u64,
}

/// Packet buffer served strictly from the front, with per-flow counts and
/// fractional-arrival carries.
#[derive(Debug, Clone, PartialEq)]
pub struct FifoQueue {
    buffer: VecDeque<Packet>,
    per_flow: Vec<u64>,
    frac_acc: Vec<f64>,
}

impl FifoQueue {
    pub fn new(n_flows: usize) -> Self {
        Self {
            buffer: VecDeque::new(),
            per_flow: vec![0; n_flows],
            frac_acc: vec![0.0; n_flows],
        }
    }

    pub fn push(&mut self, p: Packet) {
        self.per_flow[p.flow as usize] += 1;
        self.buffer.push_back(p);
    }

    pub fn pop_front(&mut self) -> Option<Packet> {
        let p = self.buffer.pop_front()?;
        self.per_flow[p.flow as usize] -= 1;
        Some(p)
    }

    pub fn front(&self) -> Option<&Packet> {
        self.buffer.front()
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn per_flow(&self) -> &[u64] {
        &self.per_flow
    }

    pub fn iter(&self) -> impl Iterator<Item = &Packet> {
        self.buffer.iter()
    }

    pub fn frac_acc(&self) -> &[f64] {
        &self.frac_acc
    }

    /// Adds `rate` to flow `k`'s carry and returns the whole packets it
    /// releases.
    pub fn accumulate(&mut self, k: usize, rate: f64) -> u64 {
        let acc = self.frac_acc[k] + rate;
        let whole = acc.floor();
        self.frac_acc[k] = acc - whole;
        whole as u64
    }
}
