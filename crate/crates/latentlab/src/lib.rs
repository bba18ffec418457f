//! Decoder-only representation learning.
//!
//! Autoencoders pair an encoder with a decoder, but the decoder can be
//! trained entirely on its own: treat the per-sample representations as
//! trainable parameters and minimize the reconstruction loss jointly over
//! decoder weights and representations. Representations for unseen samples
//! are then recovered by gradient descent against the frozen decoder. This
//! crate implements that training scheme from scratch, together with the
//! capacity ("load") bookkeeping that predicts when each model is
//! well-determined, a PCA oracle for the linear special case, and a
//! simulator for sparse regulatory-style data with known ground-truth
//! representations.
//!
//! The pieces:
//!
//! - [`tensor`], [`rng`], [`linalg`]: the deterministic numeric substrate.
//! - [`layer`], [`network`], [`loss`]: layers with exact forward/backward
//!   rules (dense, masked dense, conv2d, transposed conv2d, activations),
//!   assembled into sequential networks.
//! - [`optim`]: SGD with momentum and Adam, with optional L2 weight decay.
//! - [`latent`]: the trainable latent-code table and test-time inference.
//! - [`train`]: the four training regimes (decoder-only, autoencoder,
//!   encoder on a frozen decoder, denoising encoder) and evaluation.
//! - [`analysis`]: load formulas, PCA, and correlation scoring.
//! - [`data`]: the regulatory-data simulator, IDX image ingestion,
//!   subsampling, and the on-disk dataset container.
//! - [`checkpoint`]: versioned binary snapshots of networks, optimizer
//!   state, and latent tables.
//! - [`config`] / [`runner`]: the config-driven experiment runner behind
//!   the `latentlab` binary.
//!
//! See the `examples/` directory for one runnable program per capability
//! and `docs/formats.md` for the exact byte layout of every file format.

pub mod analysis;
pub mod arch;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod latent;
pub mod layer;
pub mod linalg;
pub mod loss;
pub mod network;
pub mod optim;
pub mod rng;
pub mod runner;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
