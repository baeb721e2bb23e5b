//! Joint ON/OFF queue states and queue-state scheduling policies.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest network whose joint state space is enumerated.
pub const MAX_QUEUES: usize = 16;

/// Slack allowed on a policy's per-state budget.
pub const POLICY_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelState {
    Off,
    On,
}

impl ChannelState {
    pub fn is_on(self) -> bool {
        self == ChannelState::On
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum StateError {
    #[error("empty network")]
    EmptyNetwork,
    #[error("{0} queues exceed the supported maximum of {MAX_QUEUES}")]
    TooManyQueues(usize),
    #[error("policy has {got} state rows, expected {expected}")]
    WrongStateCount { got: usize, expected: usize },
    #[error("policy row for state {state} has {got} entries, expected {expected}")]
    WrongQueueCount { state: usize, got: usize, expected: usize },
    #[error("tau[{state}][{queue}] = {value} is negative or not finite")]
    NegativeEntry { state: usize, queue: usize, value: f64 },
    #[error("policy row for state {state} sums to {sum} > 1")]
    BudgetExceeded { state: usize, sum: f64 },
}

/// Joint state `(S_1, .., S_N)`, stored as a bitmask with queue 0 in the
/// least significant bit (ON = 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StateVector {
    mask: u32,
    len: u8,
}

impl StateVector {
    pub fn from_mask(mask: u32, len: usize) -> Self {
        debug_assert!(len <= MAX_QUEUES && (len == 32 || mask >> len == 0));
        Self { mask, len: len as u8 }
    }

    pub fn from_states(states: &[ChannelState]) -> Self {
        let mask = states
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_on())
            .fold(0u32, |m, (i, _)| m | (1 << i));
        Self::from_mask(mask, states.len())
    }

    pub fn mask(&self) -> u32 {
        self.mask
    }

    pub fn index(&self) -> usize {
        self.mask as usize
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_on(&self, n: usize) -> bool {
        self.mask >> n & 1 == 1
    }

    pub fn get(&self, n: usize) -> ChannelState {
        if self.is_on(n) {
            ChannelState::On
        } else {
            ChannelState::Off
        }
    }

    pub fn states(&self) -> Vec<ChannelState> {
        (0..self.len()).map(|n| self.get(n)).collect()
    }

    pub fn on_count(&self) -> usize {
        self.mask.count_ones() as usize
    }
}

impl fmt::Display for StateVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = (0..self.len())
            .map(|n| if self.is_on(n) { "ON" } else { "OFF" })
            .collect();
        write!(f, "({})", parts.join(","))
    }
}

/// All `2^n` joint states in mask order.
pub fn enumerate_states(n_queues: usize) -> Result<Vec<StateVector>, StateError> {
    if n_queues == 0 {
        return Err(StateError::EmptyNetwork);
    }
    if n_queues > MAX_QUEUES {
        return Err(StateError::TooManyQueues(n_queues));
    }
    Ok((0..1u32 << n_queues)
        .map(|m| StateVector::from_mask(m, n_queues))
        .collect())
}

/// Queue-state policy: `tau[mask][n]` is the probability of transmitting from
/// queue `n` when the joint state is `mask`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulingPolicy {
    n_queues: usize,
    tau: Vec<Vec<f64>>,
}

impl SchedulingPolicy {
    pub fn new(n_queues: usize, tau: Vec<Vec<f64>>) -> Result<Self, StateError> {
        let policy = Self { n_queues, tau };
        policy.validate()?;
        Ok(policy)
    }

    pub fn zeros(n_queues: usize) -> Self {
        Self {
            n_queues,
            tau: vec![vec![0.0; n_queues]; 1 << n_queues],
        }
    }

    /// `1/N` everywhere.
    pub fn uniform(n_queues: usize) -> Self {
        let v = 1.0 / n_queues as f64;
        Self {
            n_queues,
            tau: vec![vec![v; n_queues]; 1 << n_queues],
        }
    }

    /// Splits every state's budget evenly among its ON queues.
    pub fn uniform_over_on(n_queues: usize) -> Self {
        let mut p = Self::zeros(n_queues);
        for (mask, row) in p.tau.iter_mut().enumerate() {
            let s = StateVector::from_mask(mask as u32, n_queues);
            let on = s.on_count();
            for (n, t) in row.iter_mut().enumerate() {
                if s.is_on(n) {
                    *t = 1.0 / on as f64;
                }
            }
        }
        p
    }

    /// Serve whenever ON (single queue).
    pub fn serve_when_on() -> Self {
        Self {
            n_queues: 1,
            tau: vec![vec![0.0], vec![1.0]],
        }
    }

    pub fn n_queues(&self) -> usize {
        self.n_queues
    }

    pub fn n_states(&self) -> usize {
        self.tau.len()
    }

    pub fn get(&self, s: StateVector, n: usize) -> f64 {
        self.tau[s.index()][n]
    }

    pub fn row(&self, mask: usize) -> &[f64] {
        &self.tau[mask]
    }

    pub fn row_mut(&mut self, mask: usize) -> &mut [f64] {
        &mut self.tau[mask]
    }

    pub fn set(&mut self, s: StateVector, n: usize, value: f64) {
        self.tau[s.index()][n] = value;
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.tau
    }

    pub fn validate(&self) -> Result<(), StateError> {
        let expected = 1usize << self.n_queues;
        if self.tau.len() != expected {
            return Err(StateError::WrongStateCount {
                got: self.tau.len(),
                expected,
            });
        }
        for (state, row) in self.tau.iter().enumerate() {
            if row.len() != self.n_queues {
                return Err(StateError::WrongQueueCount {
                    state,
                    got: row.len(),
                    expected: self.n_queues,
                });
            }
            for (queue, &value) in row.iter().enumerate() {
                if !(value >= 0.0) || !value.is_finite() {
                    return Err(StateError::NegativeEntry { state, queue, value });
                }
            }
            let sum: f64 = row.iter().sum();
            if sum > 1.0 + POLICY_SUM_TOL {
                return Err(StateError::BudgetExceeded { state, sum });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn one_queue() {
        let s = enumerate_states(1).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].states(), vec![ChannelState::Off]);
        assert_eq!(s[1].states(), vec![ChannelState::On]);
    }

    #[test]
    fn two_queues_order() {
        let s = enumerate_states(2).unwrap();
        let got: Vec<String> = s.iter().map(|v| v.to_string()).collect();
        assert_eq!(got, ["(OFF,OFF)", "(ON,OFF)", "(OFF,ON)", "(ON,ON)"]);
    }

    #[test]
    fn cardinality_and_distinctness() {
        for n in 1..=10 {
            let s = enumerate_states(n).unwrap();
            assert_eq!(s.len(), 1 << n);
            let set: HashSet<Vec<ChannelState>> = s.iter().map(|v| v.states()).collect();
            assert_eq!(set.len(), 1 << n);
        }
    }

    #[test]
    fn empty_network() {
        assert_eq!(enumerate_states(0), Err(StateError::EmptyNetwork));
    }

    #[test]
    fn from_states_roundtrip() {
        use ChannelState::*;
        let v = StateVector::from_states(&[On, Off, On]);
        assert_eq!(v.mask(), 0b101);
        assert_eq!(v.states(), vec![On, Off, On]);
    }

    #[test]
    fn policy_validation() {
        assert!(SchedulingPolicy::new(1, vec![vec![0.0], vec![1.0]]).is_ok());
        assert!(matches!(
            SchedulingPolicy::new(1, vec![vec![0.0]]),
            Err(StateError::WrongStateCount { .. })
        ));
        assert!(matches!(
            SchedulingPolicy::new(2, vec![vec![0.0, 0.0]; 3].into_iter().chain([vec![0.7, 0.4]]).collect()),
            Err(StateError::BudgetExceeded { state: 3, .. })
        ));
        assert!(matches!(
            SchedulingPolicy::new(1, vec![vec![-0.1], vec![1.0]]),
            Err(StateError::NegativeEntry { .. })
        ));
        assert!(SchedulingPolicy::uniform(3).validate().is_ok());
        assert!(SchedulingPolicy::uniform_over_on(3).validate().is_ok());
    }
}
