//! Cross-view low-rank self-supervised segmentation.
//!
//! The crate is organized bottom-up: [`tensor`] provides dense tensors with
//! reverse-mode differentiation; [`transforms`] produces invertible
//! augmented views; [`mf`] is collective matrix factorization over views;
//! [`cvlr`] wraps it as a network module; [`mvmc`] fuses per-view
//! predictions into pseudo-masks; [`losses`] and [`metrics`] hold the
//! objectives and evaluation; [`net`], [`data`] and [`train`] assemble a
//! trainable toy segmenter; [`config`], [`checkpoint`] and [`maskio`] are
//! the file formats.

pub mod checkpoint;
pub mod config;
pub mod cvlr;
pub mod data;
pub mod error;
pub mod label;
pub mod losses;
pub mod maskio;
pub mod metrics;
pub mod mf;
pub mod mvmc;
pub mod net;
pub mod nn;
pub mod report;
pub mod tensor;
pub mod train;
pub mod transforms;

pub use error::{Error, Result};
pub use tensor::{Gradients, Tape, Tensor, Var};
