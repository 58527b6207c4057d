//! Learned block compressed sensing for joint source-channel coding of images.
//!
//! The crate is `no_std` (with `alloc`). It carries the numeric substrate
//! (tensors, a small reverse-mode differentiation tape, Adam) and the
//! transmission pipeline built on it: block sampling, the encoder with its
//! average-power normalization, the AWGN channel, the two-stage decoder,
//! quality metrics and a single optimisation step. File formats, the training
//! loop and the command line live in the `csjscc` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod bcs;
pub mod channel;
pub mod decoder;
pub mod encoder;
mod error;
pub mod metrics;
pub mod model;
pub mod rng;
mod scalar;
mod tensor;
pub mod train;

pub use crate::autodiff::{AdamState, Graph, ParameterStore, Var};
pub use crate::error::{Error, Result};
pub use crate::model::{ArchitectureConfig, JsccModel};
pub use crate::scalar::Scalar;
pub use crate::tensor::Tensor;
