use thiserror::Error;

/// Errors produced by model construction, spectral solvers, estimation, and I/O.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("singularity: alpha = {alpha} coincides with bulk atom t = {atom}")]
    Singularity { alpha: f64, atom: f64 },

    #[error("domain error: lambda = {lambda} lies inside the support of the companion law")]
    InsideSupport { lambda: f64 },

    #[error("branch ambiguity solving for m at lambda = {lambda}: candidate roots {roots:?}")]
    BranchAmbiguity { lambda: f64, roots: Vec<f64> },

    #[error("root finding failed: {0}")]
    RootFinding(String),

    #[error("inversion error: {0}")]
    Inversion(String),

    #[error("estimation degenerate: {0}")]
    EstimationDegenerate(String),

    #[error("singular resolvent: lambda = {lambda} is within {dist:.3e} of a sample eigenvalue")]
    SingularResolvent { lambda: f64, dist: f64 },

    #[error("degenerate scale after truncation: sd = {sd:.3e}")]
    DegenerateScale { sd: f64 },

    #[error("eigensolver failure: {0}")]
    Eigen(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("too many replication failures: {failed} of {total}")]
    TooManyFailures { failed: usize, total: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True when the failure stems from user input (arguments, config files,
    /// malformed data) rather than a numerical breakdown. Drives CLI exit codes.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_)
                | Error::InvalidDimension(_)
                | Error::Config(_)
                | Error::Parse { .. }
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
