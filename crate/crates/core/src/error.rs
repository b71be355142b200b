use std::path::PathBuf;

/// Errors raised anywhere in the certification pipeline.
///
/// Each variant is classified as either an input problem (bad case file,
/// arguments outside the method's domain) or a numerical failure, which is
/// what the CLI exit-code contract distinguishes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("case schema violation at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("nonpositive line coefficient at `{path}`: phi = {value}")]
    NonpositiveLineCoefficient { path: String, value: f64 },

    #[error("nonpositive parameter at `{path}`: {value}")]
    NonpositiveParameter { path: String, value: f64 },

    #[error("duplicate line between buses {a} and {b}")]
    DuplicateLine { a: usize, b: usize },

    #[error("self-loop line at bus {bus}")]
    SelfLoop { bus: usize },

    #[error("grid graph is disconnected: bus {bus} is unreachable")]
    Disconnected { bus: usize },

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NewtonDiverged { iterations: usize, residual: f64 },

    #[error(
        "equilibrium lies outside the certifiable sector: line {line} has |phi*| = {phi_star:.6} > pi/2"
    )]
    SectorViolation { line: usize, phi_star: f64 },

    #[error(
        "linearized system is small-signal unstable: eigenvalue {re:.6e} + {im:.6e}i has nonnegative real part"
    )]
    SmallSignalUnstable { re: f64, im: f64 },

    #[error("impulse response of column {column} does not decay (envelope fit failed); check the model upstream")]
    NonDecayingImpulse { column: usize },

    #[error(
        "sector-bound hypothesis violated on line {line}: |phi*| + zbar = {sum:.6} exceeds pi; shrink zbar"
    )]
    CorollaryHypothesis { line: usize, sum: f64 },

    #[error("disturbance direction is zero or negative; at least one positive weight is required")]
    DegenerateDirection,

    #[error("frequency limit ybar must be positive; generator {row} has ybar = {value}")]
    InfeasibleYbar { row: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("probable loss of synchronism at t = {time:.3} s: line-angle deviation {z:.3} rad exceeded {threshold:.3} rad")]
    LossOfSynchronism { time: f64, z: f64, threshold: f64 },

    #[error("state became non-finite at t = {time:.3} s")]
    NonFiniteState { time: f64 },

    #[error("integrator step size underflow at t = {time:.3} s (stiff blow-up, probable loss of synchronism)")]
    StepUnderflow { time: f64 },
}

/// Coarse classification used by the CLI exit-code contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Malformed or out-of-domain input (exit code 2).
    Input,
    /// Numerical failure during computation (exit code 3).
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. }
            | Error::Schema { .. }
            | Error::NonpositiveLineCoefficient { .. }
            | Error::NonpositiveParameter { .. }
            | Error::DuplicateLine { .. }
            | Error::SelfLoop { .. }
            | Error::Disconnected { .. }
            | Error::SectorViolation { .. }
            | Error::CorollaryHypothesis { .. }
            | Error::DegenerateDirection
            | Error::InfeasibleYbar { .. }
            | Error::InvalidConfig(_) => ErrorClass::Input,
            Error::NewtonDiverged { .. }
            | Error::SmallSignalUnstable { .. }
            | Error::NonDecayingImpulse { .. }
            | Error::LossOfSynchronism { .. }
            | Error::NonFiniteState { .. }
            | Error::StepUnderflow { .. } => ErrorClass::Numerical,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
