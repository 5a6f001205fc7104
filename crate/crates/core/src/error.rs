use thiserror::Error;

/// Everything that can go wrong in construction, verification and integration.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("A(u) = {value:e} is not positive at u = {u}; the jet closure is singular")]
    NonPositiveA { u: f64, value: f64 },

    #[error("A(u(y)) reached {value:e} <= 0 near y = {y}")]
    SingularA { y: f64, value: f64 },

    #[error("adaptive integration failed: {0}")]
    IntegrationFailure(String),

    #[error("bad parameters: {0}")]
    BadParams(String),

    #[error("p = {p} is not admissible for a = {a}; admissible set is {admissible}")]
    InadmissibleP { a: f64, p: f64, admissible: String },

    #[error("point {q:?} lies outside chart {chart}")]
    OutOfChart { chart: String, q: [f64; 2] },

    #[error("y = {y} outside the solved interval [{lo}, {hi}]")]
    OutOfRange { y: f64, lo: f64, hi: f64 },

    #[error("Newton iteration did not converge at t = {t} (residual {residual:e})")]
    NewtonDivergence { t: f64, residual: f64 },

    #[error("collocation window {0}")]
    WindowOutsideChart(String),

    #[error("trajectory left the ansatz window at t = {t}")]
    WindowExit { t: f64 },

    #[error("coordinate degeneracy at u = {u}")]
    DegenerateCoordinate { u: f64 },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("malformed input: {0}")]
    Format(String),
}

impl Error {
    /// Short identifier printed on stderr by the CLI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::NonPositiveA { .. } => "NON_POSITIVE_A",
            Error::SingularA { .. } => "SINGULAR_A",
            Error::IntegrationFailure(_) => "INTEGRATION_FAILURE",
            Error::BadParams(_) => "BAD_PARAMS",
            Error::InadmissibleP { .. } => "INADMISSIBLE_P",
            Error::OutOfChart { .. } => "OUT_OF_CHART",
            Error::OutOfRange { .. } => "OUT_OF_RANGE",
            Error::NewtonDivergence { .. } => "NEWTON_DIVERGENCE",
            Error::WindowOutsideChart(_) => "WINDOW_OUTSIDE_CHART",
            Error::WindowExit { .. } => "WINDOW_EXIT",
            Error::DegenerateCoordinate { .. } => "DEGENERATE_COORDINATE",
            Error::Io(_) => "IO",
            Error::Format(_) => "FORMAT",
        }
    }

    /// Process exit status: 2 validation, 3 i/o, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::BadParams(_) | Error::InadmissibleP { .. } | Error::WindowOutsideChart(_) | Error::Format(_) => 2,
            Error::Io(_) => 3,
            _ => 4,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            Error::Io(e.to_string())
        } else {
            Error::Format(e.to_string())
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
