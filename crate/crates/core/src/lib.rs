//! Dual-branch CNN + quantum neural network classifier for multispectral
//! mangrove mapping.
//!
//! The crate bundles everything needed to train and run the model on a
//! single machine:
//!
//! * [`qsim`]: exact statevector simulation of a small gate set (RX, RY,
//!   Ising XX, Pauli-Z, NOT and an open-control Toffoli) with
//!   parameter-shift gradients.
//! * [`circuits`]: the quantum spatial encoder, spectral encoder, fusion
//!   module and feature fusion block that make up the QNN branch, plus the
//!   bicubic upsampler in [`upsample`].
//! * [`cnn`]: the lightweight convolutional branch with manual backprop.
//! * [`model`]: branch fusion, ablation variants and automatic thresholding.
//! * [`train`]: BCE loss, AdamW, cosine annealing and the training loop.
//! * [`metrics`] and [`indices`]: evaluation metrics and classical index
//!   baselines.
//! * [`data`]: raster container I/O, tiling and a synthetic scene generator.

pub mod circuits;
pub mod cnn;
pub mod data;
pub mod error;
pub mod indices;
pub mod metrics;
pub mod model;
pub mod qsim;
pub mod selftest;
pub mod train;
pub mod upsample;

pub use error::{Error, Result};
