use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid scenario: {field} {reason}")]
    InvalidScenario { field: &'static str, reason: String },

    #[error("invalid band {band} Hz: must lie in (0, {w_total}] Hz")]
    InvalidBand { band: f64, w_total: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The resource constraint cannot be met by any allocation.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Target SINR is unreachable at any transmit power.
    #[error("interference limited: N_c/mu_t = {processing_margin} <= N_bar - 1 = {interferers}")]
    InterferenceLimited { processing_margin: f64, interferers: f64 },

    #[error("equal share {share} is below the floor {floor} of device {index}")]
    FloorViolation { index: usize, share: f64, floor: f64 },

    #[error("gains must be sorted ascending (violated at index {0})")]
    Unsorted(usize),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("solver did not converge after {0} iterations")]
    NonConvergence(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// True for errors that signal an unattainable design rather than bad input.
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            Error::Infeasible(_) | Error::InterferenceLimited { .. } | Error::FloorViolation { .. }
        )
    }
}

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

pub type Result<T> = std::result::Result<T, Error>;
