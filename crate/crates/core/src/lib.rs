//! Core numerics for all-layer transfer of deep networks.
//!
//! A source network is a stacked denoising autoencoder with a linear output
//! layer over the source labels. Transfer keeps every layer: each target
//! label is mapped to a *relation vector* (its mean response at the source
//! output layer), all parameters are fine-tuned to pull target samples onto
//! their relation vectors, and new inputs are labelled by Mahalanobis distance
//! to the nearest relation vector.
//!
//! The crate is `no_std` with `alloc`; file formats, loaders and the command
//! line live in the companion `atdl` crate.
#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod atdl;
pub mod baselines;
pub mod dataset;
mod error;
pub mod metrics;
pub mod network;
pub mod numerics;
pub mod sda;

pub use error::{Error, Result};
pub use numerics::{Matrix, Rng};
