use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("eigensolver did not converge at q = {q}, depth s = {depth_s}")]
    EigensolverFailed { q: f64, depth_s: f64 },

    #[error("real-space grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("Fock-basis truncation insufficient: norm leak {leak:.3e} exceeds {limit:.1e}")]
    TruncationInsufficient { leak: f64, limit: f64 },

    #[error("envelope fit failed: {0}")]
    FitFailed(String),

    #[error("calibration target unreachable: {0}")]
    CalibrationUnreachable(String),

    #[error("mismatched time grids: {0}")]
    MismatchedGrids(String),

    #[error("empty search grid: {0}")]
    EmptyGrid(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
