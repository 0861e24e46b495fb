use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::{WeightsFile, WeightsManifest};
use crate::pnn::PnnModel;

use super::grad::GradPack;

pub const ADAM_KIND: &str = "adam-state";

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_model(model: &PnnModel, lr: f64) -> Self {
        Self::new(model.learnable_count(), lr)
    }

    /// One bias-corrected update of `params` in place.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam state has {} entries, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Training {
                message: format!("non-finite gradient at index {i}"),
                dump: None,
            });
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Applies one Adam step to the model and refreshes its LNO norms.
pub fn adam_step(state: &mut AdamState, grads: &GradPack, model: &mut PnnModel) -> Result<()> {
    let flat = grads.flatten();
    if let Some(i) = flat.iter().position(|g| !g.is_finite()) {
        let mut off = 0;
        let mut name = String::from("?");
        for (n, len) in model.parameter_groups() {
            if i < off + len {
                name = format!("{n}[{}]", i - off);
                break;
            }
            off += len;
        }
        return Err(Error::Training {
            message: format!("non-finite gradient for {name}"),
            dump: None,
        });
    }
    let mut p = model.parameters();
    state.update(&mut p, &flat)?;
    model.set_parameters(&p)
}

/// Sidecar path of a checkpoint's optimizer state.
pub fn adam_sidecar(weights: &Path) -> PathBuf {
    let mut s = weights.as_os_str().to_owned();
    s.push(".adam");
    PathBuf::from(s)
}

/// Writes the model and, next to it, the optimizer state.
pub fn save_checkpoint(path: &Path, model: &PnnModel, state: &AdamState) -> Result<()> {
    model.save(path)?;
    let mut man = WeightsManifest::new(
        ADAM_KIND,
        &model.arch.to_string(),
        &model.variant.to_string(),
        model.depth(),
        model.features,
        model.channels,
    );
    man.step = state.t;
    man.scalars.insert("lr".into(), vec![state.lr]);
    man.scalars
        .insert("betas".into(), vec![state.beta1, state.beta2]);
    man.scalars.insert("eps".into(), vec![state.eps]);
    let mut w = WeightsFile::new(man);
    let n = state.m.len();
    w.push("m", vec![n], state.m.iter().map(|&v| v as f32).collect())?;
    w.push("v", vec![n], state.v.iter().map(|&v| v as f32).collect())?;
    w.write(&adam_sidecar(path))
}

pub fn load_checkpoint(path: &Path) -> Result<(PnnModel, AdamState)> {
    let model = PnnModel::load(path)?;
    let w = WeightsFile::read(&adam_sidecar(path))?;
    if w.manifest.kind != ADAM_KIND {
        return Err(Error::Format(format!(
            "expected {ADAM_KIND}, found {:?}",
            w.manifest.kind
        )));
    }
    let n = model.learnable_count();
    let scalar = |k: &str, i: usize| -> Result<f64> {
        w.manifest
            .scalars
            .get(k)
            .and_then(|v| v.get(i).copied())
            .ok_or_else(|| Error::Format(format!("adam state lacks {k}")))
    };
    let state = AdamState {
        m: w.expect("m", &[n])?.iter().map(|&v| v as f64).collect(),
        v: w.expect("v", &[n])?.iter().map(|&v| v as f64).collect(),
        t: w.manifest.step,
        lr: scalar("lr", 0)?,
        beta1: scalar("betas", 0)?,
        beta2: scalar("betas", 1)?,
        eps: scalar("eps", 0)?,
    };
    Ok((model, state))
}
