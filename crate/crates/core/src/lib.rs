//! Active-subspace fine-tuning of a pre-trained VAE-style generative model.
//!
//! The pipeline: build a low-dimensional active subspace over the decoder
//! weights from loss gradients, fit a diagonal Gaussian posterior over the
//! subspace coordinates, then search the neighbourhood of that posterior
//! with constrained Bayesian optimization or REINFORCE so that decoded
//! designs from a fixed latent design set score better.

pub mod error;
pub mod finetune;
pub mod nnet;
pub mod numkit;
pub mod posterior;
pub mod qoi;
pub mod subspace;
pub mod toygen;

pub use error::{CoreError, Result};
