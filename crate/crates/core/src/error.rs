use thiserror::Error;

use crate::norms::RayleighReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid {nx}x{nz}: {reason}")]
    InvalidGrid { nx: usize, nz: usize, reason: &'static str },

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: (usize, usize), found: (usize, usize) },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("reality invariant violated (relative imaginary residue {residue:e})")]
    RealityViolated { residue: f64 },

    #[error("parity violation: {0}")]
    ParityViolation(String),

    #[error("nonintegrable vertical velocity: vertical mean of d_x u is {residual:e}, field is not in H")]
    NonintegrableVerticalVelocity { residual: f64 },

    #[error("Sobolev index {s} exceeds the supported maximum {max}")]
    SobolevIndexTooLarge { s: u32, max: u32 },

    #[error("local Rayleigh condition violated on the monitored set (min {:.6}, kappa {:.6})", .0.min_val, .0.kappa)]
    RayleighViolation(Box<RayleighReport>),

    #[error("empty monitored band [{lo}, {hi}]")]
    EmptyBand { lo: f64, hi: f64 },

    #[error("time step {dt:e} exceeds the explicit stability budget {budget:e}")]
    StabilityBudget { dt: f64, budget: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input or configuration).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::RealityViolated { .. }
                | Error::RayleighViolation(_)
                | Error::StabilityBudget { .. }
                | Error::NonintegrableVerticalVelocity { .. }
        )
    }
}
