//! Conditional autoregressive normalizing flows for paired image-to-image
//! translation.
//!
//! A conditioning image `y` and a target image `w` are encoded by two
//! multi-scale flows into latent pyramids `d` and `l`. The conditional density
//! of `l` given `d` is factorized autoregressively over scales, and each
//! factor is modelled by a multi-scale conditional flow. Everything is exact:
//! every layer is invertible and reports its log-determinant.

pub mod caflow;
pub mod config;
pub mod data;
pub mod error;
pub mod layers;
pub mod multiscale;
pub mod par;
pub mod params;
pub mod tensor;
pub mod toy;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Element, Graph, Rng, Tensor, Var};
