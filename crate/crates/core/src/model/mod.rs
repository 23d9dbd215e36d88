//! The time-conditioned encoder-decoder network.

pub mod arch;
mod config;
pub(crate) mod network;
mod ops;
mod params;

pub use arch::{Activation, Architecture, ConvGeometry, LayerKind, LayerSpec};
pub use config::{ModelConfig, OutputActivation};
pub use network::{ForwardTrace, Mode, Network, PassCounts};
pub use params::{LayerParams, ModelParameters};
