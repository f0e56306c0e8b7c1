//! Volumetric image-to-image translation with a conditional GAN.
//!
//! The crate implements a 3D UNET generator and a 3D patch discriminator on
//! top of a small dense-tensor and reverse-mode differentiation core, the
//! adversarial + L1 training loop, landmark-based affine preprocessing of
//! paired volumes, 3D SSIM, a NIfTI-1 subset reader/writer and a synthetic
//! paired-volume generator for desk-scale experiments.

pub mod autograd;
pub mod metrics;
mod error;
pub mod nn;
pub mod register;
pub mod synthdata;
pub mod tensor;
pub mod training;
pub mod volumes;

pub use error::{Error, Result};
pub use tensor::Tensor;
