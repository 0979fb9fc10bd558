use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NewtonDivergence { iterations: usize, residual: f64 },
    #[error("iteration collapsed to a constant state")]
    ConstantCollapse,
    #[error("continuation failed at sample {index} (k = {k})")]
    ContinuationFailure { index: isize, k: f64 },
    #[error("insufficient samples: need {need}, have {have}")]
    InsufficientSamples { need: usize, have: usize },
    #[error("family misaligned: residual {0:e}")]
    Misaligned(f64),
    #[error("eigen solver failed at xi = {0}")]
    EigenFailure(f64),
    #[error("spectral gap collapsed at xi = 0 ({0} eigenvalues near the origin)")]
    GapCollapse(usize),
    #[error("critical curve continuation ambiguous at xi = {0}")]
    ContinuationAmbiguity(f64),
    #[error("quadrature did not converge (last change {0:e})")]
    QuadratureNonConvergence(f64),
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("influence window exhausted at t = {0}")]
    WindowExhausted(f64),
    #[error("Cole-Hopf positivity violated (min of 1 + y = {0:e})")]
    ColeHopfPositivity(f64),
    #[error("wavenumber {0} left the tabulated range")]
    TableRange(f64),
    #[error("numerical instability: {0}")]
    Instability(String),
    #[error("solution blew up at t = {0}")]
    BlowUp(f64),
    #[error("phase extraction failed: {0}")]
    Extraction(String),
    #[error("initial data exceed smallness gate: E0 = {e0:e} > {gate:e}")]
    SmallnessGate { e0: f64, gate: f64 },
    #[error("phase map is not a contraction (sup |gamma_zeta| = {0})")]
    Contraction(f64),
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
