//! Estimation of parameters and solutions of linear ODEs from noisy,
//! incomplete observations.

pub mod baselines;
pub mod basis;
pub mod cli;
pub mod error;
pub mod fixtures;
pub mod inference;
pub mod inner;
pub mod ladder;
pub mod model;
pub mod optim;
pub mod outer;
pub mod simulation;

pub use error::{Error, Result};
