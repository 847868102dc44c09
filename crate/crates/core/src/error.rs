use thiserror::Error;

/// Domain errors raised by the spin-Hamiltonian, branching and spectrum code.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid g-tensor: {0}")]
    InvalidGTensor(String),
    #[error("polar angle {0}° outside [0°, 90°]")]
    ThetaOutOfRange(f64),
    #[error("invalid field configuration: {0}")]
    InvalidField(String),
    #[error("eigensystems were computed for different fields")]
    FieldMismatch,
    #[error("invalid line shape: {0}")]
    InvalidLineShape(String),
    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Errors from the least-squares engine and the concrete fit models.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("need at least {needed} data points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("initial parameters outside bounds: {0}")]
    InitOutOfBounds(String),
    #[error("model produced a non-finite value at parameters {params:?}")]
    NonFiniteModel { params: Vec<f64> },
    #[error("rank-deficient problem: {0}")]
    RankDeficient(String),
    #[error("cannot build an initial guess: {0}")]
    Initialization(String),
}

/// Errors from the optical-pumping simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum PumpError {
    #[error("invalid pump configuration: {0}")]
    InvalidConfig(String),
    #[error("step size underflow at t = {t_s:e} s (h = {step_s:e} s)")]
    StepUnderflow { t_s: f64, step_s: f64 },
    #[error("population bookkeeping violated in class {class} (drift {drift:e})")]
    Consistency { class: usize, drift: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Errors from reading or writing spectra, curves and reports.
#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed data: {0}")]
    Malformed(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Umbrella error for callers that mix subsystems.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Pump(#[from] PumpError),
    #[error(transparent)]
    Io(#[from] IoError),
}
