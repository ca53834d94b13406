//! Drug-release modelling: closed-form diffusion models, least-squares fits,
//! physics-informed networks and their uncertainty estimates.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod classical;
pub mod dataset;
pub mod error;
pub mod fick;
pub mod lm;
pub mod metrics;
pub mod nn;
pub mod oracle;
pub mod pinn;
pub mod rng;
pub mod uq;

pub use error::{Error, Result};
