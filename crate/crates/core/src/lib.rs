//! Domain adaptation by modeling how class-conditional distributions change
//! across domains through a low-dimensional latent parameter.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptation;
pub mod causal;
pub mod cgdan;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod gdan;
pub mod kernels;
pub mod numerics;

pub use error::{Error, Result};
