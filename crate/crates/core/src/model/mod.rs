//! The deconvolving network and its training state.

pub mod checkpoint;
pub mod layers;
pub mod optim;
pub mod unet;

pub use checkpoint::Checkpoint;
pub use layers::NormKind;
pub use optim::{Adam, AdamHyper};
pub use unet::{SkipMode, UNet, UNetCache, UNetConfig};
