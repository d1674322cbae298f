//! Joint longitudinal and time-to-event models in which the hazard depends on
//! the curvature of each subject's latent biomarker trajectory.

pub mod config;
pub mod data;
pub mod error;
pub mod evalreport;
pub mod fpca;
pub mod io;
pub mod jointmodel;
pub mod pipeline;
pub mod quadrature;
pub mod sampler;
pub mod simgen;
pub mod stats;
pub mod trajectory;
pub mod splinecore;

pub use error::{Error, Result};
