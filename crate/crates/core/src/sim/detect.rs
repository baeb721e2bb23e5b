//! Backlog-trend stability classification.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectorConfig {
    /// Slope (packets/slot) at or below which a trace may be stable.
    pub slope_lo: f64,
    /// Slope at or above which a trace is unstable.
    pub slope_hi: f64,
    /// Largest post-warmup backlog a stable trace may reach.
    pub backlog_cap: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            slope_lo: 1e-4,
            slope_hi: 1e-2,
            backlog_cap: 1e4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Stable,
    Unstable,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityReport {
    pub verdict: Verdict,
    pub slope: f64,
    pub max_backlog: f64,
}

#[derive(Debug, Error, PartialEq)]
#[error("trace of {len} slots is shorter than twice the warmup ({warmup})")]
pub struct DetectError {
    pub len: usize,
    pub warmup: usize,
}

pub fn detect_stability(trace: &[f64], warmup: usize) -> Result<StabilityReport, DetectError> {
    detect_stability_with(trace, warmup, &DetectorConfig::default())
}

/// Least-squares slope of the backlog after `warmup`.
pub fn detect_stability_with(
    trace: &[f64],
    warmup: usize,
    cfg: &DetectorConfig,
) -> Result<StabilityReport, DetectError> {
    if trace.len() < 2 * warmup || trace.len() < 2 {
        return Err(DetectError {
            len: trace.len(),
            warmup,
        });
    }
    let window = &trace[warmup..];
    let n = window.len() as f64;
    let t_mean = (n - 1.0) / 2.0;
    let y_mean = window.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut max_backlog = 0.0f64;
    for (i, &y) in window.iter().enumerate() {
        let dt = i as f64 - t_mean;
        sxy += dt * (y - y_mean);
        sxx += dt * dt;
        max_backlog = max_backlog.max(y);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let verdict = if slope <= cfg.slope_lo && max_backlog <= cfg.backlog_cap {
        Verdict::Stable
    } else if slope >= cfg.slope_hi {
        Verdict::Unstable
    } else {
        Verdict::Inconclusive
    };
    Ok(StabilityReport {
        verdict,
        slope,
        max_backlog,
    })
}
