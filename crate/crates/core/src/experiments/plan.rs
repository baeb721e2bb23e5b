use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::NetworkConfig;
use crate::policies::PolicyKind;
use crate::sim::ArrivalMode;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("unknown parameter path `{0}`")]
    UnknownParameter(String),
    #[error("{path} = {value}: {message}")]
    OutOfDomain { path: String, value: f64, message: String },
    #[error("plan: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One or several parameter paths set to the same value at each point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParameterPaths {
    One(String),
    Many(Vec<String>),
}

impl ParameterPaths {
    pub fn paths(&self) -> Vec<&str> {
        match self {
            ParameterPaths::One(p) => vec![p.as_str()],
            ParameterPaths::Many(v) => v.iter().map(String::as_str).collect(),
        }
    }

    pub fn label(&self) -> String {
        self.paths().join("=")
    }
}

fn default_mode() -> ArrivalMode {
    ArrivalMode::Fluid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub base: NetworkConfig,
    pub parameter: ParameterPaths,
    pub values: Vec<f64>,
    pub seeds: usize,
    pub policies: Vec<PolicyKind>,
    pub horizon: u64,
    /// Defaults to a tenth of the horizon.
    #[serde(default)]
    pub warmup: Option<u64>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_mode")]
    pub mode: ArrivalMode,
}

impl ExperimentPlan {
    pub fn from_json_str(text: &str) -> Result<Self, PlanError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let plan: Self = serde_path_to_error::deserialize(de).map_err(|e| PlanError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PlanError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn warmup(&self) -> u64 {
        self.warmup.unwrap_or(self.horizon / 10)
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if self.seeds == 0 {
            return Err(PlanError::Invalid("seeds must be at least 1".into()));
        }
        if self.values.is_empty() {
            return Err(PlanError::Invalid("values is empty".into()));
        }
        if self.policies.is_empty() {
            return Err(PlanError::Invalid("policies is empty".into()));
        }
        if self.warmup() >= self.horizon {
            return Err(PlanError::Invalid("warmup must be below the horizon".into()));
        }
        self.configs().map(|_| ())
    }

    /// The base configuration at every sweep value.
    pub fn configs(&self) -> Result<Vec<NetworkConfig>, PlanError> {
        self.values
            .iter()
            .map(|&v| {
                let mut cfg = self.base.clone();
                for path in self.parameter.paths() {
                    set_parameter(&mut cfg, path, v)?;
                }
                let report = cfg.validate();
                if !report.is_ok() {
                    return Err(PlanError::OutOfDomain {
                        path: self.parameter.label(),
                        value: v,
                        message: report.to_string(),
                    });
                }
                Ok(cfg)
            })
            .collect()
    }
}

fn parse_index(s: &str, prefix: &str) -> Option<(usize, String)> {
    let rest = s.strip_prefix(prefix)?.strip_prefix('[')?;
    let (idx, tail) = rest.split_once(']')?;
    Some((idx.parse().ok()?, tail.to_string()))
}

/// Sets `beta`, `M`, `r_max`, or `queues[i].flows[j].p_off|lambda`.
pub fn set_parameter(cfg: &mut NetworkConfig, path: &str, value: f64) -> Result<(), PlanError> {
    let unknown = || PlanError::UnknownParameter(path.to_string());
    match path {
        "beta" => cfg.beta = value,
        "M" => cfg.gain = value,
        "r_max" => cfg.r_max = value,
        _ => {
            let (n, tail) = parse_index(path, "queues").ok_or_else(unknown)?;
            let (k, field) = parse_index(tail.strip_prefix('.').ok_or_else(unknown)?, "flows").ok_or_else(unknown)?;
            let flow = cfg
                .queues
                .get_mut(n)
                .and_then(|q| q.flows.get_mut(k))
                .ok_or_else(unknown)?;
            match field.as_str() {
                ".p_off" => flow.p_off = value,
                ".lambda" => flow.lambda = Some(value),
                _ => return Err(unknown()),
            }
        }
    }
    Ok(())
}
