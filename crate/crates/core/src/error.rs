use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("resource limit exceeded: requested {requested}, maximum {max}")]
    ResourceLimit { requested: usize, max: usize },

    #[error("value {value} outside supported range: {what}")]
    OutOfRange { what: &'static str, value: f64 },

    #[error("fiber map at theta = {theta} is not monotone on bin {bin}")]
    BranchResolution { theta: f64, bin: usize },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("degenerate zero of the averaged drift at theta = {theta} (slope {slope:e})")]
    DegenerateZero { theta: f64, slope: f64 },

    #[error("averaged drift has no stable zero")]
    NoStableZero,

    #[error("center-direction iteration is not contracting: {0}")]
    ContractionFailure(String),

    #[error("floating-point range exceeded in {0}")]
    Overflow(&'static str),

    #[error("histograms use different bin edges")]
    EdgeMismatch,

    #[error("leaf left the domain: {0}")]
    LeafEscape(String),

    #[error("conjugacy depth {depth} insufficient: residual {residual:e} above tolerance {tol:e}")]
    InsufficientDepth { depth: usize, residual: f64, tol: f64 },

    #[error("shooting failed for y = {y}: {reason}")]
    ShootingFailure { y: f64, reason: String },

    #[error("malformed fields file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
