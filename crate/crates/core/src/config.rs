//! Problem instance: queues, flows, channel OFF probabilities and controller
//! parameters, plus loading and validation.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default controller gain when a config file omits `M`.
pub const DEFAULT_GAIN: f64 = 100.0;
/// Default flow-control cap when a config file omits `r_max`.
pub const DEFAULT_R_MAX: f64 = 2.0;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message} (line {line}, column {column})")]
    Parse {
        path: String,
        message: String,
        line: usize,
        column: usize,
    },
    #[error("invalid configuration: {0}")]
    Invalid(ValidationReport),
    #[error("{field}: missing value")]
    MissingField { field: String },
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Concave utility applied to every flow's rate.
///
/// Only the logarithm is needed by the experiments; the alpha-fair family
/// (`alpha` in (0, 1)) exists so the controllers' utility-agnostic paths stay
/// exercised.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "UtilityRepr", into = "UtilityRepr")]
pub enum Utility {
    Log { weight: f64 },
    AlphaFair { alpha: f64, weight: f64 },
}

impl Default for Utility {
    fn default() -> Self {
        Utility::Log { weight: 1.0 }
    }
}

impl Utility {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Utility::Log { weight } => weight * x.ln(),
            Utility::AlphaFair { alpha, weight } => weight * x.powf(1.0 - alpha) / (1.0 - alpha),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Utility::Log { weight } => weight / x,
            Utility::AlphaFair { alpha, weight } => weight * x.powf(-alpha),
        }
    }

    pub fn is_log(&self) -> bool {
        matches!(self, Utility::Log { .. })
    }

    pub fn weight(&self) -> f64 {
        match *self {
            Utility::Log { weight } | Utility::AlphaFair { weight, .. } => weight,
        }
    }

    /// `d/da U(a * gain)`, taking the limit `gain -> 0` for dead flows.
    ///
    /// For the logarithm this is `w / a` independent of the gain, so a flow
    /// whose channel is always OFF still pulls on its queue's scalar rate
    /// exactly as it does for any positive gain.
    pub fn scaled_marginal(&self, a: f64, gain: f64) -> f64 {
        match *self {
            Utility::Log { weight } => weight / a,
            Utility::AlphaFair { .. } if gain == 0.0 => 0.0,
            Utility::AlphaFair { .. } => gain * self.derivative(a * gain),
        }
    }

    /// `U(a * gain)` with the log's `-inf` constant for `gain == 0` dropped.
    pub fn scaled_value(&self, a: f64, gain: f64) -> f64 {
        match *self {
            Utility::Log { weight } if gain == 0.0 => weight * a.ln(),
            _ => self.value(a * gain),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum UtilityRepr {
    Name(String),
    Full(UtilityFull),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum UtilityFull {
    Log {
        #[serde(default = "one")]
        weight: f64,
    },
    AlphaFair {
        alpha: f64,
        #[serde(default = "one")]
        weight: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl TryFrom<UtilityRepr> for Utility {
    type Error = String;

    fn try_from(repr: UtilityRepr) -> Result<Self, String> {
        match repr {
            UtilityRepr::Name(name) if name == "log" => Ok(Utility::default()),
            UtilityRepr::Name(name) => Err(format!("unknown utility `{name}`")),
            UtilityRepr::Full(UtilityFull::Log { weight }) => Ok(Utility::Log { weight }),
            UtilityRepr::Full(UtilityFull::AlphaFair { alpha, weight }) => Ok(Utility::AlphaFair { alpha, weight }),
        }
    }
}

impl From<Utility> for UtilityRepr {
    fn from(u: Utility) -> Self {
        match u {
            Utility::Log { weight } if weight == 1.0 => UtilityRepr::Name("log".into()),
            Utility::Log { weight } => UtilityRepr::Full(UtilityFull::Log { weight }),
            Utility::AlphaFair { alpha, weight } => UtilityRepr::Full(UtilityFull::AlphaFair { alpha, weight }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    /// Probability that the flow's link is OFF in a slot.
    pub p_off: f64,
    /// Exogenous mean arrival rate, used when no flow controller runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

impl FlowSpec {
    pub fn new(p_off: f64) -> Self {
        Self { p_off, lambda: None }
    }

    pub fn with_lambda(p_off: f64, lambda: f64) -> Self {
        Self {
            p_off,
            lambda: Some(lambda),
        }
    }

    /// ON probability of the link.
    pub fn p_on(&self) -> f64 {
        1.0 - self.p_off
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueueSpec {
    pub flows: Vec<FlowSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub queues: Vec<QueueSpec>,
    #[serde(default = "one")]
    pub beta: f64,
    #[serde(default)]
    pub utility: Utility,
    /// Controller gain.
    #[serde(rename = "M", default = "default_gain")]
    pub gain: f64,
    /// Per-slot cap on the flow controllers' output.
    #[serde(default = "default_r_max")]
    pub r_max: f64,
}

fn default_gain() -> f64 {
    DEFAULT_GAIN
}

fn default_r_max() -> f64 {
    DEFAULT_R_MAX
}

impl NetworkConfig {
    /// Builds an instance from per-queue OFF probabilities with default
    /// controller parameters and `beta = 1`.
    pub fn from_p_off(p_off: &[Vec<f64>]) -> Self {
        let queues = p_off
            .iter()
            .map(|q| QueueSpec {
                flows: q.iter().map(|&p| FlowSpec::new(p)).collect(),
            })
            .collect();
        Self {
            queues,
            beta: 1.0,
            utility: Utility::default(),
            gain: DEFAULT_GAIN,
            r_max: DEFAULT_R_MAX,
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_gain(mut self, gain: f64) -> Self {
        self.gain = gain;
        self
    }

    pub fn with_lambdas(mut self, lambdas: &[Vec<f64>]) -> Self {
        for (q, l) in self.queues.iter_mut().zip(lambdas) {
            for (f, &x) in q.flows.iter_mut().zip(l) {
                f.lambda = Some(x);
            }
        }
        self
    }

    pub fn n_queues(&self) -> usize {
        self.queues.len()
    }

    pub fn n_flows(&self, n: usize) -> usize {
        self.queues[n].flows.len()
    }

    pub fn total_flows(&self) -> usize {
        self.queues.iter().map(|q| q.flows.len()).sum()
    }

    pub fn p_off(&self, n: usize, k: usize) -> f64 {
        self.queues[n].flows[k].p_off
    }

    pub fn p_on(&self, n: usize, k: usize) -> f64 {
        self.queues[n].flows[k].p_on()
    }

    /// OFF probabilities of queue `n`'s flows.
    pub fn queue_p_off(&self, n: usize) -> Vec<f64> {
        self.queues[n].flows.iter().map(|f| f.p_off).collect()
    }

    /// `(p_on)^beta` for every flow of queue `n`: the admission gains that tie
    /// flow rates to the queue's scalar rate.
    pub fn rate_gains(&self, n: usize) -> Vec<f64> {
        self.queues[n].flows.iter().map(|f| f.p_on().powf(self.beta)).collect()
    }

    /// Explicit per-flow arrival rates, if every flow carries one.
    pub fn lambdas(&self) -> Result<Vec<Vec<f64>>, ConfigError> {
        self.queues
            .iter()
            .enumerate()
            .map(|(n, q)| {
                q.flows
                    .iter()
                    .enumerate()
                    .map(|(k, f)| {
                        f.lambda.ok_or_else(|| ConfigError::MissingField {
                            field: format!("queues[{n}].flows[{k}].lambda"),
                        })
                    })
                    .collect()
            })
            .collect()
    }

    pub fn validate(&self) -> ValidationReport {
        validate_config(self)
    }

    /// Returns the config if it satisfies every invariant.
    pub fn checked(self) -> Result<Self, ConfigError> {
        let report = self.validate();
        if report.is_ok() {
            Ok(self)
        } else {
            Err(ConfigError::Invalid(report))
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: NetworkConfig = serde_path_to_error::deserialize(de).map_err(|err| {
            let path = err.path().to_string();
            let inner = err.into_inner();
            ConfigError::Parse {
                path: if path.is_empty() { ".".into() } else { path },
                message: strip_position(&inner.to_string()),
                line: inner.line(),
                column: inner.column(),
            }
        })?;
        cfg.checked()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(idx) => msg[..idx].to_string(),
        None => msg.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            path: path.into(),
            message: message.into(),
        });
    }

    pub fn mentions(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.message.contains(needle))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

/// Checks every invariant of the instance and reports all failures.
pub fn validate_config(cfg: &NetworkConfig) -> ValidationReport {
    let mut report = ValidationReport::default();
    if cfg.queues.is_empty() {
        report.push("queues", "empty network");
    }
    if cfg.queues.len() > crate::state::MAX_QUEUES {
        report.push(
            "queues",
            format!("at most {} queues are supported", crate::state::MAX_QUEUES),
        );
    }
    if !(cfg.beta >= 1.0) || !cfg.beta.is_finite() {
        report.push("beta", "beta < 1");
    }
    if !(cfg.gain > 0.0) || !cfg.gain.is_finite() {
        report.push("M", "M must be > 0");
    }
    if !(cfg.r_max > 1.0) || !cfg.r_max.is_finite() {
        report.push("r_max", "r_max must be > 1");
    }
    match cfg.utility {
        Utility::Log { weight } | Utility::AlphaFair { weight, .. } if !(weight > 0.0) => {
            report.push("utility.weight", "weight must be > 0")
        }
        Utility::AlphaFair { alpha, .. } if !(alpha > 0.0 && alpha < 1.0) => {
            report.push("utility.alpha", "alpha must lie in (0, 1)")
        }
        _ => {}
    }
    for (n, q) in cfg.queues.iter().enumerate() {
        if q.flows.is_empty() {
            report.push(format!("queues[{n}].flows"), "queue has no flows");
        }
        for (k, f) in q.flows.iter().enumerate() {
            if !(0.0..=1.0).contains(&f.p_off) {
                report.push(format!("queues[{n}].flows[{k}].p_off"), "p_off out of [0,1]");
            }
            if let Some(l) = f.lambda {
                if !(l >= 0.0) || !l.is_finite() {
                    report.push(format!("queues[{n}].flows[{k}].lambda"), "lambda < 0");
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_instance_is_valid() {
        let cfg = NetworkConfig::from_p_off(&[vec![0.5]]);
        assert!(validate_config(&cfg).is_ok());
    }

    #[test]
    fn p_off_out_of_range() {
        let cfg = NetworkConfig::from_p_off(&[vec![1.2]]);
        let report = validate_config(&cfg);
        assert!(report.mentions("p_off out of [0,1]"));
        assert_eq!(report.violations[0].path, "queues[0].flows[0].p_off");
    }

    #[test]
    fn beta_below_one() {
        let cfg = NetworkConfig::from_p_off(&[vec![0.5]]).with_beta(0.5);
        assert!(validate_config(&cfg).mentions("beta < 1"));
    }

    #[test]
    fn reports_every_violation() {
        let mut cfg = NetworkConfig::from_p_off(&[vec![-0.1], vec![]]).with_beta(0.0);
        cfg.gain = 0.0;
        cfg.r_max = 1.0;
        let report = validate_config(&cfg);
        assert_eq!(report.violations.len(), 5, "{report}");
    }

    #[test]
    fn empty_network_rejected() {
        let cfg = NetworkConfig::from_p_off(&[]);
        assert!(validate_config(&cfg).mentions("empty network"));
    }

    #[test]
    fn parses_defaults_and_names_fields() {
        let cfg = NetworkConfig::from_json_str(
            r#"{ "queues": [ { "flows": [ { "p_off": 0.1 }, { "p_off": 0.5, "lambda": 0.2 } ] } ] }"#,
        )
        .unwrap();
        assert_eq!(cfg.beta, 1.0);
        assert_eq!(cfg.gain, DEFAULT_GAIN);
        assert_eq!(cfg.utility, Utility::Log { weight: 1.0 });
        assert_eq!(cfg.queues[0].flows[1].lambda, Some(0.2));

        let err = NetworkConfig::from_json_str(
            "{\n  \"beta\": 1,\n  \"queues\": [ { \"flows\": [ { \"lambda\": 0.1 } ] } ]\n}",
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("queues[0].flows[0]"), "{msg}");
        assert!(msg.contains("p_off"), "{msg}");
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn invalid_values_are_rejected_at_load() {
        let err = NetworkConfig::from_json_str(r#"{ "beta": 0.5, "queues": [ { "flows": [ { "p_off": 0.1 } ] } ] }"#)
            .unwrap_err();
        assert!(err.to_string().contains("beta < 1"));
    }

    #[test]
    fn utility_forms() {
        let cfg = NetworkConfig::from_json_str(
            r#"{ "M": 10, "r_max": 3, "utility": { "kind": "alpha_fair", "alpha": 0.5 },
                 "queues": [ { "flows": [ { "p_off": 0.1 } ] } ] }"#,
        )
        .unwrap();
        assert_eq!(
            cfg.utility,
            Utility::AlphaFair {
                alpha: 0.5,
                weight: 1.0
            }
        );
        assert_eq!(cfg.gain, 10.0);
        let round: NetworkConfig = serde_json::from_str(&cfg.to_json_pretty()).unwrap();
        assert_eq!(round, cfg);

        assert!(NetworkConfig::from_json_str(
            r#"{ "utility": "sqrt", "queues": [ { "flows": [ { "p_off": 0.1 } ] } ] }"#
        )
        .is_err());
    }

    #[test]
    fn missing_lambda_names_field() {
        let cfg = NetworkConfig::from_p_off(&[vec![0.1, 0.2]]);
        let err = cfg.lambdas().unwrap_err();
        assert_eq!(err.to_string(), "queues[0].flows[0].lambda: missing value");
    }

    #[test]
    fn dead_flow_log_marginal_matches_limit() {
        let u = Utility::default();
        assert_eq!(u.scaled_marginal(0.5, 0.0), u.scaled_marginal(0.5, 1e-9));
        let af = Utility::AlphaFair {
            alpha: 0.5,
            weight: 1.0,
        };
        assert_eq!(af.scaled_marginal(0.5, 0.0), 0.0);
        assert!(af.scaled_marginal(0.5, 1e-12) < 1e-5);
    }
}
