use thiserror::Error;

use crate::fit::FitResult;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("convergence failure: {0}")]
    Convergence(String),

    #[error(
        "branch tracking ambiguous at A = {amplitude:.6e} (best overlap {overlap:.3}); use a finer amplitude ramp"
    )]
    BranchAmbiguity { amplitude: f64, overlap: f64 },

    #[error("near resonance: level {level}, harmonic {harmonic}, denominator {denominator:.3e} rad/ns")]
    NearResonance {
        level: usize,
        harmonic: i64,
        denominator: f64,
    },

    #[error("fit did not converge (best gamma2 = {:.4e} /ns, omega = {:.6e} rad/ns)", .0.gamma2, .0.omega)]
    Fit(Box<FitResult>),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
