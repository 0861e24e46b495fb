use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::psnr;
use crate::pnn::{pnn_forward_with, ForwardOptions, PnnModel};
use crate::tensor::Image;

use super::grad::{pnn_vjp, GradPack};

/// One training pair with its noise level `δ_s` (the network uses `ν = δ_s²`).
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub clean: Image,
    pub noisy: Image,
    pub delta: f64,
}

/// Batch loss, gradient and mean output PSNR.
#[derive(Clone, Debug)]
pub struct BatchResult {
    pub loss: f64,
    pub grads: GradPack,
    pub psnr: f64,
}

/// `(1/|B|)·Σ ½‖x̄_s − x_K(z_s, δ_s²)‖²` and its gradient.
pub fn loss_and_grad(model: &PnnModel, batch: &[TrainSample]) -> Result<(f64, GradPack)> {
    let r = batch_loss(model, batch)?;
    Ok((r.loss, r.grads))
}

/// [`loss_and_grad`] plus the mean PSNR of the outputs.
///
/// Samples are evaluated in parallel; the reduction runs in batch order so
/// the result does not depend on the thread count.
pub fn batch_loss(model: &PnnModel, batch: &[TrainSample]) -> Result<BatchResult> {
    let first = batch
        .first()
        .ok_or_else(|| Error::Parameter("empty batch".into()))?;
    for (i, s) in batch.iter().enumerate() {
        s.clean
            .ensure_same_shape(&s.noisy, &format!("batch sample {i}"))?;
        first
            .clean
            .ensure_same_shape(&s.clean, &format!("batch sample {i}"))?;
    }
    let opts = ForwardOptions {
        record: true,
        ..ForwardOptions::default()
    };
    let per: Vec<Result<(f64, Vec<f64>, f64)>> = batch
        .par_iter()
        .map(|s| {
            let nu = s.delta * s.delta;
            let out = pnn_forward_with(model, &s.noisy, nu, &opts)?;
            let resid = out.x.sub(&s.clean);
            let loss = 0.5 * resid.norm_sq();
            let tape = out.tape.as_ref().expect("recorded");
            let (g, _) = pnn_vjp(model, &s.noisy, nu, tape, &resid)?;
            let p = psnr(&s.clean, &out.x)?;
            Ok((loss, g.flatten(), p))
        })
        .collect();
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut psnr_sum = 0.0;
    let mut flat = vec![0.0; model.learnable_count()];
    for r in per {
        let (l, g, p) = r?;
        loss += l;
        psnr_sum += p;
        flat.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    flat.iter_mut().for_each(|v| *v /= n);
    Ok(BatchResult {
        loss: loss / n,
        grads: GradPack::from_flat(model, &flat)?,
        psnr: psnr_sum / n,
    })
}
