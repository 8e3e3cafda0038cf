//! Lesion segmentation with a convolutional encoder, four-direction recurrent
//! patch sweeps and a transposed-convolution decoder, written from scratch
//! with explicit backward passes.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`], [`rng`], [`checkpoint`]: values, seeded randomness, binary
//!   serialization.
//! - [`layers`]: convolution, pooling, activations, dense, sparse-matrix
//!   transposed convolution, binary cross-entropy.
//! - [`renet`]: patch grids and the directional recurrent sweeps.
//! - [`model`]: network assembly, training and inference.
//! - [`metrics`]: pixel-wise confusion counts and AC/SE/SP/DI/JA reports.
//! - [`data`]: PNM IO, dataset loading, synthetic lesion images.
//! - [`gradcheck`]: finite-difference verification of every backward pass.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod renet;
pub mod rng;
pub mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use error::{Error, Result};
pub use rng::{glorot_init, rng_next, RngState};
pub use tensor::{tensor_create, Real, Tensor};
