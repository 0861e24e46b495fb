//! Lipschitz certification: Jacobian spectral norms by power iteration at
//! frozen activation patterns, the per-layer product bound, and the
//! firm-nonexpansiveness probe on `h = 2f − Id`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::TraceTable;
use crate::linops::{
    spectral_norm, AdjointPolicy, FnOperator, LinearOperator, PowerConfig, SpectralNorm,
};
use crate::pnn::{pnn_forward_with, ForwardOptions, LayerScalars, PnnLayerParams, PnnModel, Tape};
use crate::tensor::{Image, Tensor};
use crate::train::{input_vjp, pnn_jvp};

type Dims = (usize, usize, usize);

/// A map that is linear around the point of interest (a Jacobian).
pub trait LocalLinearMap: Sync {
    fn dims(&self) -> Dims;
    fn apply(&self, v: &Image) -> Result<Image>;
    fn adjoint(&self, w: &Image) -> Result<Image>;
}

/// Jacobian of `z ↦ x_K` at a base point, frozen at the recorded masks.
#[derive(Clone, Debug)]
pub struct JacobianProbe<'a> {
    pub model: &'a PnnModel,
    pub z: Image,
    pub nu: f64,
    pub tape: Tape,
    /// `f(z)`.
    pub output: Image,
}

impl<'a> JacobianProbe<'a> {
    pub fn new(model: &'a PnnModel, z: &Image, nu: f64) -> Result<Self> {
        let opts = ForwardOptions {
            record: true,
            ..ForwardOptions::default()
        };
        let out = pnn_forward_with(model, z, nu, &opts)?;
        Ok(JacobianProbe {
            model,
            z: z.clone(),
            nu,
            tape: out.tape.expect("recorded"),
            output: out.x,
        })
    }
}

/// `J·v` at the probe's base point.
pub fn jacobian_apply(p: &JacobianProbe<'_>, v: &Image) -> Result<Image> {
    pnn_jvp(p.model, &p.z, p.nu, &p.tape, v)
}

/// `Jᵀ·w` at the probe's base point.
pub fn jacobian_adjoint_apply(p: &JacobianProbe<'_>, w: &Image) -> Result<Image> {
    input_vjp(p.model, &p.z, p.nu, &p.tape, w)
}

impl LocalLinearMap for JacobianProbe<'_> {
    fn dims(&self) -> Dims {
        self.z.dims()
    }
    fn apply(&self, v: &Image) -> Result<Image> {
        jacobian_apply(self, v)
    }
    fn adjoint(&self, w: &Image) -> Result<Image> {
        jacobian_adjoint_apply(self, w)
    }
}

/// `2J − I`: the Jacobian of `h = 2f − Id`.
pub struct Reflected<M>(pub M);

impl<M: LocalLinearMap> LocalLinearMap for Reflected<M> {
    fn dims(&self) -> Dims {
        self.0.dims()
    }
    fn apply(&self, v: &Image) -> Result<Image> {
        Ok(self.0.apply(v)?.zip_map(v, |a, b| 2.0 * a - b))
    }
    fn adjoint(&self, w: &Image) -> Result<Image> {
        Ok(self.0.adjoint(w)?.zip_map(w, |a, b| 2.0 * a - b))
    }
}

/// `c·Id` (identity for `c = 1`, a constant map for `c = 0`).
#[derive(Clone, Copy, Debug)]
pub struct ScaledIdentity {
    pub dims: Dims,
    pub scale: f64,
}

impl LocalLinearMap for ScaledIdentity {
    fn dims(&self) -> Dims {
        self.dims
    }
    fn apply(&self, v: &Image) -> Result<Image> {
        check_dims(self.dims, v)?;
        Ok(v.scaled(self.scale))
    }
    fn adjoint(&self, w: &Image) -> Result<Image> {
        self.apply(w)
    }
}

/// Elementwise scaling by a fixed tensor.
#[derive(Clone, Debug)]
pub struct DiagonalMap(pub Tensor);

impl LocalLinearMap for DiagonalMap {
    fn dims(&self) -> Dims {
        self.0.dims()
    }
    fn apply(&self, v: &Image) -> Result<Image> {
        check_dims(self.0.dims(), v)?;
        Ok(v.zip_map(&self.0, |a, b| a * b))
    }
    fn adjoint(&self, w: &Image) -> Result<Image> {
        self.apply(w)
    }
}

fn check_dims(want: Dims, v: &Image) -> Result<()> {
    if v.dims() != want {
        return Err(Error::Shape(format!(
            "expected {want:?}, got {:?}",
            v.dims()
        )));
    }
    Ok(())
}

/// Power iteration on `JᵀJ`; `converged` is false when `max_iter` ran out.
pub fn jacobian_spectral_norm(map: &dyn LocalLinearMap, cfg: &PowerConfig) -> Result<SpectralNorm> {
    let d = map.dims();
    let op = FnOperator {
        input: d,
        output: d,
        forward: |v: &Tensor| map.apply(v),
        backward: |w: &Tensor| map.adjoint(w),
    };
    spectral_norm(&op, d, cfg)
}

/// Which map a report measures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// The denoiser `f`.
    F,
    /// `h = 2f − Id`; below 1 means `f` is firmly nonexpansive.
    H,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RobustnessSummary {
    pub max: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustnessReport {
    pub target: Target,
    pub norms: Vec<f64>,
    pub converged: Vec<bool>,
    pub summary: RobustnessSummary,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl RobustnessReport {
    pub fn from_norms(target: Target, norms: Vec<f64>, converged: Vec<bool>) -> Result<Self> {
        if norms.is_empty() {
            return Err(Error::Parameter("no samples to summarize".into()));
        }
        let mut s = norms.clone();
        s.sort_by(f64::total_cmp);
        let summary = RobustnessSummary {
            max: s[s.len() - 1],
            median: quantile(&s, 0.5),
            q1: quantile(&s, 0.25),
            q3: quantile(&s, 0.75),
        };
        Ok(RobustnessReport {
            target,
            norms,
            converged,
            summary,
        })
    }

    /// The Lipschitz estimate `χ` (largest per-sample norm).
    pub fn max(&self) -> f64 {
        self.summary.max
    }

    /// Columns `sample, norm, converged`.
    pub fn table(&self) -> TraceTable {
        let mut t = TraceTable::new(&["sample", "norm", "converged"]);
        for (i, (n, c)) in self.norms.iter().zip(&self.converged).enumerate() {
            t.push_row(vec![
                i.into(),
                (*n).into(),
                (if *c { "true" } else { "false" }).into(),
            ]);
        }
        t
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("plain numbers serialize")
    }
}

/// Per-sample Jacobian norms of `f` (or of `2f − Id`) at `(z_s, ν_s)`.
pub fn lipschitz_estimate(
    model: &PnnModel,
    samples: &[(Image, f64)],
    target: Target,
    cfg: &PowerConfig,
) -> Result<RobustnessReport> {
    let per: Vec<Result<SpectralNorm>> = samples
        .par_iter()
        .map(|(z, nu)| {
            let p = JacobianProbe::new(model, z, *nu)?;
            match target {
                Target::F => jacobian_spectral_norm(&p, cfg),
                Target::H => jacobian_spectral_norm(&Reflected(p), cfg),
            }
        })
        .collect();
    let mut norms = Vec::with_capacity(samples.len());
    let mut conv = Vec::with_capacity(samples.len());
    for r in per {
        let r = r?;
        norms.push(r.norm);
        conv.push(r.converged);
    }
    RobustnessReport::from_norms(target, norms, conv)
}

/// Per-sample `‖2J f(z_s) − Id‖`.
pub fn nonexpansiveness_score(
    model: &PnnModel,
    samples: &[(Image, f64)],
    cfg: &PowerConfig,
) -> Result<RobustnessReport> {
    lipschitz_estimate(model, samples, Target::H, cfg)
}

// Product bound. Each layer is written as masks interleaved with linear
// maps on a stacked state that also carries z, so that the bias paths and
// skip connections are part of the bounded operators:
//   in:       z                 -> (z, z, z, D₁z)
//   dual k:   (z, x_p, x̃, u)    -> (z, x, u, u + s·D x),  x = (1+α)x̃ − αx_p
//   primal k: (z, x, u, ũ)      -> (z, x, w_r(z − Aũ) + w_x x, (1+ρ)ũ − ρu)
//   out:      (z, x_p, x̃, u)    -> (1+α)x̃ − αx_p
// Clip and box masks act on one block with entries in {0, 1}, so the
// Jacobian norm is at most the product of the linear norms.

struct Blocks {
    c: usize,
    j: usize,
    h: usize,
    w: usize,
}

impl Blocks {
    fn zeros(&self, ch: usize) -> Tensor {
        Tensor::zeros(ch, self.h, self.w)
    }
}

fn adjoint_map(layer: &PnnLayerParams, u: &Tensor) -> Result<Tensor> {
    layer.apply_adjoint(u)
}

fn adjoint_map_t(layer: &PnnLayerParams, x: &Tensor) -> Result<Tensor> {
    match &layer.adjoint {
        AdjointPolicy::Tied => layer.d.apply(x),
        AdjointPolicy::Untied(p) => p.adjoint(x),
    }
}

fn op_norm(op: &dyn LinearOperator, input: Dims) -> Result<f64> {
    let cfg = PowerConfig::default().with_tol(1e-12, 20_000).with_block(4);
    Ok(spectral_norm(op, input, &cfg)?.norm)
}

fn in_norm(layer: &PnnLayerParams, b: &Blocks) -> Result<f64> {
    let (c, j) = (b.c, b.j);
    let op = FnOperator {
        input: (c, b.h, b.w),
        output: (3 * c + j, b.h, b.w),
        forward: |z: &Tensor| Tensor::concat_channels(&[z, z, z, &layer.d.apply(z)?]),
        backward: |g: &Tensor| {
            let p = g.split_channels(&[c, c, c, j])?;
            let mut out = p[0].add(&p[1]).add(&p[2]);
            out.axpy(1.0, &layer.d.adjoint(&p[3])?);
            Ok(out)
        },
    };
    op_norm(&op, (c, b.h, b.w))
}

fn dual_norm(layer: &PnnLayerParams, s: &LayerScalars, alpha_prev: f64, b: &Blocks) -> Result<f64> {
    let (c, j, a) = (b.c, b.j, alpha_prev);
    let op = FnOperator {
        input: (3 * c + j, b.h, b.w),
        output: (2 * c + 2 * j, b.h, b.w),
        forward: |t: &Tensor| {
            let p = t.split_channels(&[c, c, c, j])?;
            let x = p[2].zip_map(&p[1], |n, o| (1.0 + a) * n - a * o);
            let mut pre = layer.d.apply(&x)?.scaled(s.step);
            pre.axpy(1.0, &p[3]);
            Tensor::concat_channels(&[&p[0], &x, &p[3], &pre])
        },
        backward: |g: &Tensor| {
            let p = g.split_channels(&[c, c, j, j])?;
            let mut gx = p[1].clone();
            gx.axpy(s.step, &layer.d.adjoint(&p[3])?);
            let gu = p[2].add(&p[3]);
            Tensor::concat_channels(&[&p[0], &gx.scaled(-a), &gx.scaled(1.0 + a), &gu])
        },
    };
    op_norm(&op, (3 * c + j, b.h, b.w))
}

fn primal_norm(layer: &PnnLayerParams, s: &LayerScalars, b: &Blocks) -> Result<f64> {
    let (c, j) = (b.c, b.j);
    let (wr, wx) = if s.mu.is_infinite() {
        (1.0, 0.0)
    } else {
        (s.mu / (1.0 + s.mu), 1.0 / (1.0 + s.mu))
    };
    let rho = s.rho;
    let op = FnOperator {
        input: (2 * c + 2 * j, b.h, b.w),
        output: (3 * c + j, b.h, b.w),
        forward: |t: &Tensor| {
            let p = t.split_channels(&[c, c, j, j])?;
            let r = p[0].sub(&adjoint_map(layer, &p[3])?);
            let pre = r.zip_map(&p[1], |r, x| wr * r + wx * x);
            let un = p[3].zip_map(&p[2], |n, o| (1.0 + rho) * n - rho * o);
            Tensor::concat_channels(&[&p[0], &p[1], &pre, &un])
        },
        backward: |g: &Tensor| {
            let p = g.split_channels(&[c, c, c, j])?;
            let mut gz = p[0].clone();
            gz.axpy(wr, &p[2]);
            let mut gx = p[1].clone();
            gx.axpy(wx, &p[2]);
            let gu = p[3].scaled(-rho);
            let mut gut = p[3].scaled(1.0 + rho);
            gut.axpy(-wr, &adjoint_map_t(layer, &p[2])?);
            Tensor::concat_channels(&[&gz, &gx, &gu, &gut])
        },
    };
    op_norm(&op, (2 * c + 2 * j, b.h, b.w))
}

fn out_norm(alpha: f64, b: &Blocks) -> Result<f64> {
    let (c, j) = (b.c, b.j);
    let op = FnOperator {
        input: (3 * c + j, b.h, b.w),
        output: (c, b.h, b.w),
        forward: |t: &Tensor| {
            let p = t.split_channels(&[c, c, c, j])?;
            Ok(p[2].zip_map(&p[1], |n, o| (1.0 + alpha) * n - alpha * o))
        },
        backward: |g: &Tensor| {
            Tensor::concat_channels(&[
                &b.zeros(c),
                &g.scaled(-alpha),
                &g.scaled(1.0 + alpha),
                &b.zeros(j),
            ])
        },
    };
    op_norm(&op, (3 * c + j, b.h, b.w))
}

/// Product of the per-stage linear norms on the model's norm shape: an
/// upper bound on the Lipschitz constant of `z ↦ x_K` for any fixed `ν`.
pub fn lipschitz_product_bound(model: &PnnModel) -> Result<f64> {
    let scalars = model.layer_scalars()?;
    let b = Blocks {
        c: model.channels,
        j: model.features,
        h: model.norm_shape.0,
        w: model.norm_shape.1,
    };
    let mut bound = in_norm(&model.layers[0], &b)?;
    let mut alpha_prev = 0.0;
    for (layer, s) in model.layers.iter().zip(&scalars) {
        bound *= dual_norm(layer, s, alpha_prev, &b)?;
        bound *= primal_norm(layer, s, &b)?;
        alpha_prev = s.alpha;
    }
    Ok(bound * out_norm(alpha_prev, &b)?)
}
