//! CaraNet segmentation, built on a small reverse-mode autodiff engine.
//!
//! Modules, bottom-up:
//!
//! * [`tensor`]: dense tensors, kernels and the autodiff tape
//! * [`model`]: encoder, partial decoder, channel-wise feature pyramid,
//!   axial reverse attention and the assembled network
//! * [`train`]: deep-supervision loss, Adam, multi-scale steps, checkpoints
//! * [`metrics`]: Dice, IoU, weighted F-measure, S-measure, E-measure, MAE
//! * [`size`]: size-ratio curves, curve comparison and the stability threshold
//! * [`data`]: PGM/PPM I/O, manifests, resizing and the synthetic generator

pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod par;
pub mod size;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Real, Tape, Tensor, Var};
