//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Total damping is not positive, or a simulated trajectory ran away.
    #[error("unstable system: {0}")]
    UnstableSystem(String),

    /// A parameter set or simulation configuration violates an invariant.
    #[error("configuration rejected: {0}")]
    ConfigRejected(String),

    /// An iterative solver did not converge.
    #[error("no convergence after {iterations} iterations")]
    NoConvergence { iterations: usize },

    /// The Jacobian carries no information about at least one parameter.
    #[error("singular Jacobian")]
    SingularJacobian,

    /// No optimum exists for vanishing phase noise.
    #[error("division by zero noise: sigma_phi = 0 admits no optimal gain")]
    DivisionByZeroNoise,

    /// The delay phase puts the loop on the heating side.
    #[error("heating delay: sin(omega*tau) <= 0")]
    HeatingDelay,

    /// Not enough samples for the requested estimate.
    #[error("record too short: need {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("band out of range: {0}")]
    BandOutOfRange(String),

    /// No resolvable peak above the floor.
    #[error("no peak: peak/floor ratio {ratio:.2} below threshold")]
    NoPeak { ratio: f64 },

    /// The data does not span enough of the relevant axis for the fit.
    #[error("insufficient span: {0}")]
    InsufficientSpan(String),

    /// A detector synthesis was handed a noise stream built from different
    /// parameters than the trajectory it is paired with.
    #[error("stream mismatch: phase-noise stream digest differs from trajectory record")]
    StreamMismatch,

    #[error("manifest missing or unreadable: {0}")]
    ManifestMissing(String),

    #[error("checksum mismatch: {0}")]
    ChecksumMismatch(String),

    /// Scenario file failed to parse or validate.
    #[error("config error: {0}")]
    ConfigError(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the command-line harness.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigError(_) | Error::ConfigRejected(_) => 2,
            Error::UnstableSystem(_) => 3,
            _ => 1,
        }
    }
}
