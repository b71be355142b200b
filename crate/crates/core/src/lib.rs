//! Rigorous bounds on the external disturbances a power grid can absorb
//! without losing generator synchronism or violating frequency limits.
//!
//! The pipeline: parse a grid case and solve its lossless power-flow
//! equilibrium ([`network`]), put the swing dynamics in Lur'e form
//! ([`lure`]), compute element-wise L-infinity induced gains of the linear
//! block and sector gains of the nonlinearity ([`gain`]), evaluate
//! small-gain certificates ([`cert`]), maximize the admissible disturbance
//! magnitude by convex optimization ([`opt`]), and validate everything
//! against nonlinear time-domain simulation ([`sim`]).
//!
//! See the `examples/` directory for one runnable program per capability,
//! and the thin `gridcert` binary for the file-based front end.

pub mod error;
pub mod network;
pub mod lure;
pub mod gain;
pub mod cert;
pub mod ode;
pub mod sim;
pub mod opt;
pub mod report;
pub mod cli;

pub use error::{Error, ErrorClass, Result};
