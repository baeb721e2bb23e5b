//! Slotted-time simulation of FIFO queues over ON/OFF links.

mod detect;
mod engine;
mod fifo;
mod metrics;
mod rng;
mod saturated;
mod trace;

pub use detect::{detect_stability, detect_stability_with, DetectError, DetectorConfig, StabilityReport, Verdict};
pub use engine::{run, run_with_trace, ArrivalMode, Engine, RunSpec, SimError, SlotRecord};
pub use fifo::{FifoQueue, Packet};
pub use metrics::TraceMetrics;
pub use rng::{stream_seed, RngStreams, StreamSeeds};
pub use saturated::{run_saturated, SaturatedStats};
pub use trace::{write_trace_header, write_trace_rows};
