//! Skeleton-based action recognition with adaptive graph convolutions and
//! spatial-temporal-channel attention.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`] and [`autodiff`]: a small dense tensor engine with tape-based
//!   reverse-mode differentiation, checked against [`gradcheck`].
//! - [`skeleton`]: topologies, NTU parsing, stream derivation, padding,
//!   augmentation, a synthetic action generator and the on-disk dataset
//!   format.
//! - [`model`]: fixed partition graphs, the adaptive graph convolution, the
//!   attention stack, blocks and the full classifier.
//! - [`train`]: loss, optimizer, schedule, training and evaluation loops,
//!   score fusion, checkpointing and the model gradient check.
//! - [`export`]: CSV dumps of learned graphs and attention maps.

pub mod autodiff;
pub mod error;
pub mod export;
pub mod gradcheck;
pub mod model;
pub mod param;
pub mod skeleton;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
