//! Exact reverse-mode differentiation of the unrolled networks, the ℓ²
//! training loss, Adam and the training loop.

mod adam;
mod check;
mod grad;
mod loss;
mod trainer;

pub use adam::{adam_sidecar, adam_step, load_checkpoint, save_checkpoint, AdamState, ADAM_KIND};
pub use check::{
    grad_check, grad_check_with, linear_regime_check, GradCheckConfig, GradCheckReport,
};
pub use grad::{input_vjp, pnn_jvp, pnn_vjp, pnn_vjp_full, GradPack, LayerGrad, Vjp};
pub use loss::{batch_loss, loss_and_grad, BatchResult, TrainSample};
pub use trainer::{smoothed, train, train_from, NoiseSetting, TrainConfig, TrainOutput};
