//! Estimation of a controlled direct effect when a mediator can start at
//! several visits, with the simulation machinery to study the estimators.

pub mod config;
pub mod dag;
pub mod dgm;
pub mod error;
pub mod gest;
pub mod mmrm;
pub mod regress;
pub mod resample;
pub mod special;
pub mod stochastics;
pub mod study;

pub use error::{Error, Result};
