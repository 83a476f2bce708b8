use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("axis {axis} has {n} points; at least 4 are required")]
    TooFewPoints { axis: usize, n: usize },
    #[error("axis {axis} has non-positive or non-finite period length {len}")]
    BadLength { axis: usize, len: f64 },
    #[error("axis must be 1, 2 or 3, got {0}")]
    BadAxis(usize),
    #[error("field data has {got} values, grid requires {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("fields live on different grids")]
    GridMismatch,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("entropy {0} is outside the model domain [0, inf)")]
    NegativeEntropy(f64),
    #[error("invalid model parameter {name} = {value}: {reason}")]
    BadParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error(
        "entropy update would make eta = {value} < 0 at node {node}; retry with a smaller step"
    )]
    EntropyDomain { node: usize, value: f64 },
    #[error("Newton did not converge in {iters} iterations (gradient norm {grad_norm:e}, target {target:e})")]
    NewtonNotConverged {
        iters: usize,
        grad_norm: f64,
        target: f64,
    },
    #[error("line search failed after {halvings} halvings at Newton iteration {iter}")]
    LineSearch { iter: usize, halvings: usize },
    #[error("invalid step configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported checkpoint format version {0}")]
    Version(String),
    #[error("checkpoint checksum mismatch: file is corrupted")]
    Checksum,
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("at least {needed} refinement levels are required, got {got}")]
    TooFewLevels { needed: usize, got: usize },
    #[error("reference leaves the bounded set |F|,|v|,|eta| <= {bound}: value {value} at t = {t}")]
    OutsideBound { bound: f64, value: f64, t: f64 },
    #[error("probe reference {sample} leaves |F|,|v|,|eta| <= {bound}: value {value}")]
    ProbeOutsideBound {
        bound: f64,
        value: f64,
        sample: usize,
    },
    #[error("no reference sample at t = {0}")]
    NoReferenceSample(f64),
    #[error("levels must share grid and initial data")]
    MismatchedLevels,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum MarchError {
    #[error("T = {t_final} is not an integer multiple of h = {h}")]
    NonIntegralSteps { t_final: f64, h: f64 },
    #[error("t = {t} lies outside the trajectory span [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },
    #[error("step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: StepError,
        /// States and reports accepted before the failure.
        partial: Box<crate::march::Trajectory>,
    },
    #[error(transparent)]
    Config(StepError),
}
