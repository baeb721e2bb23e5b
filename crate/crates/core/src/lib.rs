//! Stability analysis, flow control and scheduling for networks of shared
//! FIFO queues over ON/OFF wireless links.

pub mod cli;
pub mod config;
pub mod dfc;
pub mod experiments;
pub mod markov;
pub mod numeric;
pub mod policies;
pub mod sim;
pub mod stability;
pub mod state;
