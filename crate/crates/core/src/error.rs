use thiserror::Error;

use crate::domain::N_REGIONS;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("composition {0} is not finite")]
    NonFinite(f64),
    #[error("grid needs at least 3 points, got {0}")]
    GridTooSmall(usize),
    #[error("invalid grid bounds [{start}, {stop}]")]
    InvalidGridBounds { start: f64, stop: f64 },
    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(&'static str),
    #[error("{compositions} compositions but {labels} labels")]
    LabelMismatch { compositions: usize, labels: usize },
    #[error("label {0:?} is not a probability vector")]
    InvalidLabel([f64; N_REGIONS]),
    #[error("region {0} out of range")]
    RegionOutOfRange(usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("negative delay {0}")]
    NegativeDelay(f64),
    #[error("event at t={at} scheduled in the past (now t={now})")]
    InPast { at: f64, now: f64 },
    #[error("token {token} is not held on resource `{resource}`")]
    UnheldToken { resource: String, token: u64 },
    #[error("resource capacity must be positive")]
    ZeroCapacity,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("out of consumables")]
    OutOfConsumables,
    #[error("composition {0} is not on the search grid")]
    OffGrid(f64),
    #[error("unknown sample {0}")]
    UnknownSample(u64),
    #[error("sample {0} is not checked out")]
    NotCheckedOut(u64),
    #[error("sample {sample} is checked out by `{holder}`, not `{requester}`")]
    WrongHolder {
        sample: u64,
        holder: String,
        requester: String,
    },
    #[error("no {0} instrument on plate {1}")]
    NoInstrument(&'static str, usize),
    #[error("malformed repository key `{0}`")]
    MalformedKey(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("spectra must have equal length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("zero-norm vector")]
    ZeroVector,
    #[error("need at least {needed} spectra for clustering, got {got}")]
    TooFewSpectra { needed: usize, got: usize },
    #[error("no observations to fit")]
    NoData,
    #[error("all importance weights vanished")]
    DegenerateWeights,
    #[error("Cholesky factorization failed even with jitter {0}")]
    Cholesky(f64),
    #[error("{discarded} of {total} posterior draws discarded")]
    TooManyDiscarded { discarded: usize, total: usize },
    #[error("invalid inference parameters: {0}")]
    InvalidParams(&'static str),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AcquisitionError {
    #[error("search space exhausted")]
    Exhausted,
    #[error("acquisition fields are defined on different grids")]
    GridMismatch,
    #[error("invalid UCB argument: {0}")]
    InvalidUcb(&'static str),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("label vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

/// Failure of a running campaign, tagged with where it happened.
#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("agent {agent} iteration {iteration}: {source}")]
    Inference {
        agent: String,
        iteration: usize,
        #[source]
        source: InferenceError,
    },
    #[error("agent {agent} iteration {iteration}: {source}")]
    Acquisition {
        agent: String,
        iteration: usize,
        #[source]
        source: AcquisitionError,
    },
    #[error(transparent)]
    Lab(#[from] LabError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid configuration: {0}")]
    Config(String),
}
