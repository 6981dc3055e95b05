use thiserror::Error;

/// Failures raised by the simulation and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("ions {0} and {1} coincide")]
    CoincidentIons(usize, usize),

    #[error("invalid ion system: {0}")]
    InvalidSystem(String),

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("relaxation annealed back to a kink-free crystal")]
    NoKinkFormed,

    #[error("centre functional is degenerate (|grad g| = {0:.3e})")]
    ConstraintSingular(f64),

    #[error("curve has {0} interior extrema, need at least 3")]
    TooFewExtrema(usize),

    #[error("ions {0} and {1} are not on the same transverse side")]
    NotAKinkInterface(usize, usize),

    #[error("configuration carries no axial distortion relative to the reference")]
    NoDistortion,

    #[error("integration unstable at t = {time:.6e}: {reason}")]
    Instability { time: f64, reason: String },

    #[error("ion {ion} escaped the trap at t = {time:.6e}")]
    IonLoss { ion: usize, time: f64 },

    #[error("kink position {0:.6e} lies outside the sampled trajectory")]
    OutOfRange(f64),

    #[error("no kink position satisfies the orthogonality constraint")]
    NoRoot,

    #[error("density group for tau_Q = {0:.3e} s has no trials")]
    EmptyGroup(f64),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
