use super::{
    Capability, Detector, DetectorError, ExternalDetector, GroundTruth, NoisyDetector, NullDetector,
    OracleDetector,
};
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use std::time::Duration;

/// Executable used for external I-frame detectors when none is configured.
pub const ENV_I_DETECTOR: &str = "COMPRIVDET_IDETECTOR";
/// Executable used for external P/B-frame detectors when none is configured.
pub const ENV_PB_DETECTOR: &str = "COMPRIVDET_PBDETECTOR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    IFrame,
    PbFrame,
}

impl Role {
    fn capability(self) -> Capability {
        match self {
            Role::IFrame => Capability::IFrame,
            Role::PbFrame => Capability::PbFrame,
        }
    }

    fn env_var(self) -> &'static str {
        match self {
            Role::IFrame => ENV_I_DETECTOR,
            Role::PbFrame => ENV_PB_DETECTOR,
        }
    }
}

fn default_timeout_ms() -> u64 {
    5000
}

/// Configuration of one detector slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DetectorBinding {
    Oracle {
        #[serde(default)]
        delay_ms: f64,
    },
    Noisy {
        capability: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        delay_ms: f64,
    },
    Null {
        #[serde(default)]
        delay_ms: f64,
    },
    External {
        /// Falls back to the role's environment variable.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        command: Option<String>,
        #[serde(default)]
        args: Vec<String>,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

impl Default for DetectorBinding {
    fn default() -> Self {
        DetectorBinding::Oracle { delay_ms: 0.0 }
    }
}

fn delay(ms: f64) -> Result<Duration, DetectorError> {
    Duration::try_from_secs_f64(ms / 1000.0).map_err(|_| DetectorError::Config(format!("bad delay {ms} ms")))
}

impl DetectorBinding {
    /// Parses the CLI shorthand: `oracle`, `null`, `noisy:<capability>`,
    /// `external` or `external:<path>`.
    pub fn parse_shorthand(s: &str) -> Result<Self, DetectorError> {
        let (head, tail) = match s.split_once(':') {
            Some((h, t)) => (h, Some(t)),
            None => (s, None),
        };
        match (head, tail) {
            ("oracle", None) => Ok(DetectorBinding::Oracle { delay_ms: 0.0 }),
            ("null", None) => Ok(DetectorBinding::Null { delay_ms: 0.0 }),
            ("noisy", Some(c)) => {
                let capability = c
                    .parse()
                    .map_err(|_| DetectorError::Config(format!("bad capability {c:?}")))?;
                Ok(DetectorBinding::Noisy {
                    capability,
                    seed: 0,
                    delay_ms: 0.0,
                })
            }
            ("external", path) => Ok(DetectorBinding::External {
                command: path.map(str::to_string),
                args: Vec::new(),
                timeout_ms: default_timeout_ms(),
            }),
            _ => Err(DetectorError::Config(format!("unknown detector {s:?}"))),
        }
    }

    pub fn set_seed(&mut self, new_seed: u64) {
        if let DetectorBinding::Noisy { seed, .. } = self {
            *seed = new_seed;
        }
    }

    pub fn instantiate(&self, role: Role, truth: &Arc<GroundTruth>) -> Result<Box<dyn Detector>, DetectorError> {
        let cap = role.capability();
        Ok(match self {
            DetectorBinding::Oracle { delay_ms } => Box::new(
                OracleDetector::new(truth.clone())
                    .with_capability(cap)
                    .with_delay(delay(*delay_ms)?),
            ),
            DetectorBinding::Noisy {
                capability,
                seed,
                delay_ms,
            } => Box::new(
                NoisyDetector::new(truth.clone(), *capability, *seed)?
                    .with_capability(cap)
                    .with_delay(delay(*delay_ms)?),
            ),
            DetectorBinding::Null { delay_ms } => Box::new(NullDetector::new().with_delay(delay(*delay_ms)?)),
            DetectorBinding::External {
                command,
                args,
                timeout_ms,
            } => {
                let program = match command {
                    Some(c) => c.clone(),
                    None => std::env::var(role.env_var()).map_err(|_| {
                        DetectorError::Config(format!(
                            "external {role:?} detector needs a command or {}",
                            role.env_var()
                        ))
                    })?,
                };
                let det = ExternalDetector::spawn(&program, args, Duration::from_millis(*timeout_ms))?;
                let needed = match role {
                    Role::IFrame => super::RequestKind::IFrame,
                    Role::PbFrame => super::RequestKind::PbFrame,
                };
                if !det.capability().supports(needed) {
                    return Err(DetectorError::CapabilityMismatch {
                        capability: det.capability(),
                        kind: needed,
                    });
                }
                Box::new(det)
            }
        })
    }
}
