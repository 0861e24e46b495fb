//! Images, noise models, patches, metrics and synthetic datasets.

mod dataset;
mod metrics;
mod noise;
mod patches;
mod synth;

pub use dataset::{Dataset, Sample};
pub use metrics::{mse, psnr, total_variation};
pub use noise::{add_noise, NoiseKind, NoiseSpec};
pub use patches::extract_patches;
pub use synth::synth_cartoon;
