use thiserror::Error;

use crate::tensor3::TracelessSym3;

/// Which admissibility condition an input failed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Constraint {
    /// `|Q|^2 > eta` fails, so `E_Q` carries no admissible density.
    NormAboveEta,
    /// The smallest eigenvalue of `Q` is at or below `-1/3`.
    EigenvalueBound,
    /// `eta >= 2/3`: no finite-energy state exists.
    PackingLimit,
}

impl std::fmt::Display for Constraint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Constraint::NormAboveEta => write!(f, "|Q|^2 <= eta"),
            Constraint::EigenvalueBound => write!(f, "eigenvalue v_min(Q) <= -1/3"),
            Constraint::PackingLimit => write!(f, "eta >= 2/3"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain violation: {0}")]
    Domain(Constraint),
    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
        last: TracelessSym3,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("saturation limit: density {rho} >= {rho_s}")]
    Saturation { rho: f64, rho_s: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
