//! Linear operators: convolution stacks (the analysis operator and its
//! adjoint), finite differences, blur kernels and power-iteration norms.

mod blur;
mod conv;
mod diff;
mod operator;
mod power;

pub use blur::BlurKernel;
pub use conv::{correlate_add, AdjointPolicy, ConvAnalysis, ConvStack};
pub use diff::FiniteDifference;
pub use operator::{adjoint_residual, adjoint_residual_op, FnOperator, LinearOperator, Scaled};
pub use power::{spectral_norm, spectral_norm_from, PowerConfig, SpectralNorm};
