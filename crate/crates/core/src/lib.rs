//! Proximal splitting solvers and unfolded primal-dual networks for
//! ℓ1-analysis image denoising, with exact gradients, Lipschitz
//! certification and plug-and-play deblurring.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod image;
pub mod io;
pub mod linops;
pub mod pnn;
pub mod pnp;
pub mod prox;
pub mod rng;
pub mod robustness;
pub mod solvers;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{FeatureMap, Image, Tensor};
