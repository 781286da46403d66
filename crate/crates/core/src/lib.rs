//! Triplane neural fields on a small reverse-mode tape.
//!
//! The crate covers the whole pipeline at desk scale:
//!
//! - [`numerics`]: tensors, the tape, finite-difference gradient checks.
//! - [`triplane`]: the three-plane feature grid and bilinear sampling.
//! - [`attention`]: orthogonal cross-plane attention, text cross-attention
//!   and the refinement transformer.
//! - [`render`]: cameras, ray sampling, density/color heads and volume
//!   integration.
//! - [`train`]: the composite render loss, AdamW and scene fitting.
//! - [`diffusion`]: a toy triplane DDPM with an orthogonal-attention denoiser.
//! - [`scenes`]: analytic scenes, the reference renderer, orbit cameras and
//!   the procedural box dataset.
//! - [`cli`]: the command implementations behind the `trifield` binary.

pub mod attention;
pub mod checks;
pub mod cli;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod nn;
pub mod numerics;
pub mod render;
pub mod scenes;
pub mod train;
pub mod triplane;

pub use error::{Error, Result};
pub use numerics::{Graph, Tensor, Var};
