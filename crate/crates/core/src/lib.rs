//! Desk-scale style transfer for toy mel spectrograms.
//!
//! The stack mirrors a two-part text-to-speech style pipeline at a size
//! where every number can be checked by hand: a reference encoder feeds a
//! KL-controlled Gaussian posterior, the latent is vector-quantized against
//! an EMA codebook, a frame-wise decoder paints a coarse spectrogram, a
//! conditional denoising diffusion refiner sharpens it, and an unconditional
//! latent diffusion bridge allows sampling styles without a reference.
//!
//! All networks are plain feed-forward stacks over `f64` buffers with
//! hand-derived gradients; a central finite-difference checker is the
//! correctness oracle for every loss in the stack.

pub mod diffusion;
pub mod error;
pub mod evalmetrics;
pub mod numerics;
pub mod pipeline;
pub mod quantizer;
pub mod toydata;
pub mod vae;

pub use error::{CoreError, Result};
pub use numerics::array::Array;
