use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::Dataset;
use crate::io::TraceTable;
use crate::pnn::PnnModel;
use crate::rng;
use crate::tensor::Image;

use super::adam::{adam_step, save_checkpoint, AdamState};
use super::loss::{batch_loss, TrainSample};

/// Noise level used to corrupt training patches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseSetting {
    /// Constant `δ` (`ν = δ²` for every sample).
    Fixed(f64),
    /// `δ_s ~ U[lo, hi]`, redrawn for every sample of every batch.
    Variable(f64, f64),
}

impl NoiseSetting {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseSetting::Fixed(d) if d >= 0.0 && d.is_finite() => Ok(()),
            NoiseSetting::Variable(lo, hi) if 0.0 <= lo && lo < hi && hi.is_finite() => Ok(()),
            s => Err(Error::Parameter(format!("invalid noise setting {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub setting: NoiseSetting,
    pub epochs: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Where the model is dumped if training diverges (default: temp dir).
    pub dump_path: Option<PathBuf>,
    /// Checkpoint written after every epoch (weights + `.adam` sidecar).
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            setting: NoiseSetting::Fixed(0.08),
            epochs: 50,
            batch_size: 8,
            patch_size: 32,
            lr: 1e-3,
            seed: 0,
            dump_path: None,
            checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.setting.validate()?;
        if self.batch_size == 0 || self.patch_size == 0 {
            return Err(Error::Parameter(
                "batch and patch size must be positive".into(),
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Parameter(format!(
                "learning rate {} must be finite and >= 0",
                self.lr
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub model: PnnModel,
    pub adam: AdamState,
    /// Columns `epoch, batch, loss, psnr`.
    pub trace: TraceTable,
    pub losses: Vec<f64>,
}

fn draw_sample(clean: &Image, cfg: &TrainConfig, path: &[u64]) -> Result<TrainSample> {
    let mut r = rng::derive(cfg.seed, path);
    let p = cfg.patch_size;
    if p > clean.height() || p > clean.width() {
        return Err(Error::Shape(format!(
            "patch size {p} does not fit {}x{}",
            clean.height(),
            clean.width()
        )));
    }
    let y = r.random_range(0..=clean.height() - p);
    let x = r.random_range(0..=clean.width() - p);
    let clean = clean.crop(y, x, p, p)?;
    let delta = match cfg.setting {
        NoiseSetting::Fixed(d) => d,
        NoiseSetting::Variable(lo, hi) => r.random_range(lo..hi),
    };
    let mut noisy = clean.clone();
    if delta > 0.0 {
        let n = Normal::new(0.0, delta).map_err(|e| Error::Parameter(e.to_string()))?;
        noisy
            .data_mut()
            .iter_mut()
            .for_each(|v| *v += n.sample(&mut r));
    }
    Ok(TrainSample {
        clean,
        noisy,
        delta,
    })
}

fn dump(model: &PnnModel, cfg: &TrainConfig, message: String) -> Error {
    let path = cfg
        .dump_path
        .clone()
        .unwrap_or_else(|| std::env::temp_dir().join(format!("proxnn-diverged-{}.pnnw", cfg.seed)));
    let dump = model.save(&path).ok().map(|_| path);
    Error::Training { message, dump }
}

/// Adam on the batch-mean loss; fresh patches and noise for every batch.
pub fn train(model: &PnnModel, cfg: &TrainConfig, data: &Dataset) -> Result<TrainOutput> {
    train_from(model, AdamState::for_model(model, cfg.lr), cfg, data)
}

/// Resumes training with an existing optimizer state.
pub fn train_from(
    model: &PnnModel,
    mut adam: AdamState,
    cfg: &TrainConfig,
    data: &Dataset,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Parameter("empty training set".into()));
    }
    adam.lr = cfg.lr;
    let mut model = model.clone();
    let mut trace = TraceTable::new(&["epoch", "batch", "loss", "psnr"]);
    let mut losses = Vec::new();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng::derive(cfg.seed, &[2, epoch as u64]));
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = chunk
                .iter()
                .enumerate()
                .map(|(i, &s)| {
                    draw_sample(
                        &data.samples[s].clean,
                        cfg,
                        &[3, epoch as u64, b as u64, i as u64],
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let r = batch_loss(&model, &batch)?;
            if !r.loss.is_finite() {
                return Err(dump(
                    &model,
                    cfg,
                    format!("loss {} at epoch {epoch}, batch {b}", r.loss),
                ));
            }
            if let Err(e) = adam_step(&mut adam, &r.grads, &mut model) {
                return Err(match e {
                    Error::Training { message, .. } => dump(&model, cfg, message),
                    e => e,
                });
            }
            trace.push_row(vec![epoch.into(), b.into(), r.loss.into(), r.psnr.into()]);
            losses.push(r.loss);
        }
        if let Some(ck) = &cfg.checkpoint {
            save_checkpoint(ck, &model, &adam)?;
        }
    }
    Ok(TrainOutput {
        model,
        adam,
        trace,
        losses,
    })
}

/// Mean over windows of `w` consecutive values.
pub fn smoothed(values: &[f64], w: usize) -> Vec<f64> {
    if w == 0 || values.len() < w {
        return Vec::new();
    }
    values
        .windows(w)
        .map(|s| s.iter().sum::<f64>() / w as f64)
        .collect()
}
