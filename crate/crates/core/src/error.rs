use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("action {0} outside the action set")]
    ActionOutOfBounds(f64),
    #[error("unknown environment `{0}` (expected `unit-circle` or `obstacle`)")]
    UnknownEnv(String),
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no forward pass was recorded for this network")]
    NoRecordedForward,
    #[error("non-finite gradient; update rejected")]
    Divergence,
    #[error("malformed network file: {0}")]
    Format(String),
}

#[derive(Debug, Error)]
pub enum RlError {
    #[error("training failed: success rate {success_rate:.2} below the {required:.2} bar")]
    TrainingFailed { success_rate: f64, required: f64 },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("policy kind does not fit this environment: {0}")]
    WrongPolicyKind(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("policy file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum RegionError {
    #[error("regions are defined over different grids")]
    GridMismatch,
    #[error("malformed region file: {0}")]
    Format(String),
    #[error("state is outside the policy's region")]
    OutOfRegion,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum CriticalError {
    #[error("no critical points found")]
    NoCriticalPoints,
    #[error("critical set splits the state space into {components} labeled components, expected 2")]
    UnsupportedTopology { components: usize },
    #[error("invalid critical config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Region(#[from] RegionError),
}

#[derive(Debug, Error)]
pub enum ExtendError {
    #[error("overlap width {width:.4} below the required {required:.4}; increase the horizon T")]
    InsufficientOverlap { width: f64, required: f64 },
    #[error("extended regions do not cover the state space")]
    CoverageViolation,
    #[error("invalid extension config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Region(#[from] RegionError),
}

#[derive(Debug, Error)]
pub enum HybridError {
    #[error("extended regions do not cover the state space")]
    CoverageViolation,
    #[error("state lies in neither the flow set nor the jump set")]
    OutsideFlowAndJumpSets,
    #[error("logic variable must be 0 or 1, got {0}")]
    InvalidLogicVariable(u8),
    #[error("more than {limit} jumps within one solve")]
    ZenoGuard { limit: usize },
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A pipeline failure tagged with the step it occurred in.
#[derive(Debug, Error)]
#[error("step {step} ({name}) failed: {source}")]
pub struct PipelineError {
    pub step: u8,
    pub name: &'static str,
    #[source]
    pub source: Box<dyn std::error::Error + Send + Sync>,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
