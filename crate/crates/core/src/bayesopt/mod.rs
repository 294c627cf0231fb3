//! Black-box minimization with a Gaussian-process surrogate and expected
//! improvement, maximized by Monte Carlo candidate sampling.

mod gp;
mod optimize;

pub use gp::{
    ei_from_moments, expected_improvement, gp_fit, gp_posterior, GpConfig, GpModel, Observation,
    MAX_JITTER,
};
pub use optimize::{optimize, propose, Aborted, FailurePolicy, OptimizeTrace, TraceRecord};
