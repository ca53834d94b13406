use alloc::string::String;

use crate::dataset::FilmType;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("curve needs at least {min} points, got {got}")]
    TooFewPoints { min: usize, got: usize },
    #[error("times and fractions differ in length ({times} vs {fractions})")]
    LengthMismatch { times: usize, fractions: usize },
    #[error("times must be strictly increasing (index {index})")]
    NonMonotoneTime { index: usize },
    #[error("time {value} at index {index} lies outside [0, 1]")]
    TimeOutOfRange { index: usize, value: f64 },
    #[error("fraction {value} at index {index} lies outside {lo}..={hi}")]
    FractionOutOfRange { index: usize, value: f64, lo: f64, hi: f64 },
    #[error("noiseless fractions must be non-decreasing (index {index})")]
    NonMonotoneFraction { index: usize },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown film type `{0}`")]
    UnknownFilm(String),
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("split size {n} out of range for a curve of {len} points")]
    SplitOutOfRange { n: usize, len: usize },
    #[error("curve has no positive release after t = 0")]
    DegenerateCurve,
    #[error("parameter vector has length {got}, architecture needs {expected}")]
    ParamLength { expected: usize, got: usize },
    #[error("unsupported architecture: {0}")]
    UnsupportedArchitecture(String),
    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("ensemble member with seed {seed} failed at epoch {epoch}")]
    EnsembleMemberFailed { seed: u64, epoch: usize },
    #[error("model was trained without dropout")]
    DropoutDisabled,
    #[error("need at least 2 samples for an uncertainty band, got {0}")]
    TooFewSamples(usize),
    #[error("{divergent} of {iterations} HMC trajectories diverged")]
    DivergentTrajectory { divergent: usize, iterations: usize },
    #[error("no HMC proposal was accepted")]
    NoAcceptedProposals,
    #[error("length mismatch: {0} vs {1}")]
    MetricLengthMismatch(usize, usize),
    #[error("missing curve for film {0}")]
    MissingFilm(FilmType),
    #[error("limited-data protocol needs {expected} points, got {got}")]
    WrongCurveLength { expected: usize, got: usize },
}

pub type Result<T> = core::result::Result<T, Error>;
