//! The joint longitudinal/survival model: parameter layout, priors,
//! reference likelihood, and the differentiable log posterior.

mod hazard;
mod likelihood;
mod params;
mod posterior;
mod smre;

pub use hazard::{HazardKind, HazardParams, HazardSpec, DEFAULT_QUADRATURE_NODES};
pub use likelihood::{
    cum_hazard, log_hazard, log_jacobian, log_prior, loglik_longitudinal, loglik_survival,
    loglik_survival_pointwise, rw2_precision,
};
pub use params::{default_noncentered, JointModel, Layout, ParameterVector, PriorConfig};
pub use posterior::Posterior;
pub use smre::{apply_smre_constraint, SmreOutcome};
