//! One-step, time-conditioned future frame prediction.
//!
//! Given a single grayscale frame and a temporal displacement `dt`, the
//! network in [`model`] synthesizes the anticipated frame at `t0 + dt` in one
//! encoder/decoder pass. The crate also carries the pieces needed to train and
//! judge it without any IO:
//!
//! - [`data`]: frame preprocessing, actor-disjoint splits, `(input, dt, target)`
//!   tuple sampling and an analytic synthetic-scene renderer.
//! - [`training`]: L2 loss, Adam and the single-step update.
//! - [`baseline`]: the time-unaware network rolled out by feeding predictions back.
//! - [`evaluation`]: Canny-edge masks, masked MSE and report aggregation.
//!
//! Everything here is `no_std` with `alloc`; file formats, the training loop
//! with checkpointing and the command line live in the `framecast` crate.
#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

pub mod baseline;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod frame;
pub mod model;
pub mod training;

pub use error::{Error, Result};
pub use frame::{Frame, TemporalDisplacement};
pub use model::{ModelConfig, ModelParameters, Network};
