//! Named random streams derived from one master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// SHA-256 of the little-endian master seed followed by the stream name.
pub fn stream_seed(master: u64, name: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(name.as_bytes());
    h.finalize().into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StreamSeeds {
    pub channels: String,
    pub arrivals: String,
    pub scheduling: String,
}

/// Channel draws, arrival draws and scheduling draws never share a stream,
/// so two policies run under one master seed see identical channels.
#[derive(Debug, Clone)]
pub struct RngStreams {
    pub channels: ChaCha8Rng,
    pub arrivals: ChaCha8Rng,
    pub scheduling: ChaCha8Rng,
    pub seeds: StreamSeeds,
}

impl RngStreams {
    pub fn new(master: u64) -> Self {
        let [c, a, s] = ["channels", "arrivals", "scheduling"].map(|n| stream_seed(master, n));
        Self {
            channels: ChaCha8Rng::from_seed(c),
            arrivals: ChaCha8Rng::from_seed(a),
            scheduling: ChaCha8Rng::from_seed(s),
            seeds: StreamSeeds {
                channels: hex::encode(c),
                arrivals: hex::encode(a),
                scheduling: hex::encode(s),
            },
        }
    }
}
