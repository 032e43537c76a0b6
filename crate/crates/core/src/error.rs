use thiserror::Error;

/// Errors raised by the solvers and simulators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A scalar root could not be bracketed or did not converge.
    #[error("root finding failed: {0}")]
    RootFinding(String),

    /// The static equilibrium does not exist because `(K-1) beta* >= 1`.
    #[error("no finite equilibrium: (K-1)*beta* = {load} >= 1 for K = {k}")]
    Infeasible { k: usize, load: f64 },

    /// The explicit time step violates the stability bound.
    #[error("unstable time step: dt = {dt} exceeds bound {bound} ({detail})")]
    Stability { dt: f64, bound: f64, detail: String },

    /// A NaN or infinity appeared at a grid node.
    #[error("non-finite value {value} at slice {slice}, node {node:?}")]
    NonFinite { slice: usize, node: [usize; 3], value: f64 },

    /// The density went negative beyond round-off.
    #[error("negative density {value} at slice {slice}, node {node:?}")]
    NegativeDensity { slice: usize, node: [usize; 3], value: f64 },

    /// A configuration value is invalid.
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
