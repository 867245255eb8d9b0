//! Conditioned 1D UNet denoiser with hand-written gradients.

pub mod layers;
pub mod tensor;
mod unet;

pub use layers::sinusoidal_embed;
pub use tensor::{Act, Real};
pub use unet::{Denoiser, ForwardCache, Init, LossEval, NetConfig, NetInput, Segment, GROUPS};
