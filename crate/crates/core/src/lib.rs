//! Federated hypernetwork-generated conditional VAEs under differential privacy.
//!
//! A shared hypernetwork turns private per-client codes into row-scaled
//! decoder weights and class-conditional latent priors. Clients train their
//! encoders and codes locally and send only clipped, noised gradients for
//! the shared parameters; the server aggregates them FedAvg-style. After
//! training, a neutral meta-code fitted to privatized class statistics drives
//! global synthetic embedding generation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alignment;
pub mod cli;
pub mod config;
pub mod cvae;
pub mod data;
pub mod error;
pub mod evalbench;
pub mod federation;
pub mod hypernet;
pub mod model;
pub mod numerics;
pub mod privacy;
pub mod synthesis;

pub use error::{Error, Result};
