//! Plug-and-play forward-backward deblurring with an unrolled denoiser:
//! `z_t = x_t − γAᵀ(Ax_t − y)`, `(x_{t+1}, u_{t+1}) = f(z_t, u_t)` with
//! `ν = λγ`, `λ = (βσ)²`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::psnr;
use crate::io::{Cell, TraceTable};
use crate::linops::{spectral_norm, BlurKernel, PowerConfig};
use crate::pnn::{pnn_forward_with, ForwardOptions, PnnModel};
use crate::tensor::Image;

/// `x − γ·Aᵀ(Ax − y)`.
pub fn grad_step(x: &Image, a: &BlurKernel, y: &Image, gamma: f64) -> Result<Image> {
    x.ensure_same_shape(y, "gradient step")?;
    let mut r = a.apply(x);
    r.axpy(-1.0, y);
    let mut out = x.clone();
    out.axpy(-gamma, &a.adjoint(&r));
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PnpConfig {
    /// Step size; `None` resolves to `1.99/‖A‖²`.
    pub gamma: Option<f64>,
    pub beta: f64,
    /// Measurement noise standard deviation.
    pub sigma: f64,
    pub iters: usize,
    /// Carry the dual state between denoiser calls; `None` picks the
    /// architecture default (on for DDFB/DDiFB, off for DCP/DScCP).
    pub warm: Option<bool>,
    /// Allow `γ ≥ 2/‖A‖²`.
    pub unsafe_gamma: bool,
    /// Stop once `‖x_{t+1} − x_t‖ ≤ stop·‖y‖`.
    pub stop: Option<f64>,
    pub norm_config: PowerConfig,
}

impl Default for PnpConfig {
    fn default() -> Self {
        PnpConfig {
            gamma: None,
            beta: 1.0,
            sigma: 0.0,
            iters: 500,
            warm: None,
            unsafe_gamma: false,
            stop: None,
            norm_config: PowerConfig::default().with_tol(1e-10, 20_000).with_block(4),
        }
    }
}

impl PnpConfig {
    pub fn lambda(&self) -> f64 {
        (self.beta * self.sigma) * (self.beta * self.sigma)
    }
}

/// Per-iteration record of a run plus the resolved settings.
#[derive(Clone, Debug, PartialEq)]
pub struct PnpTrace {
    /// PSNR of `x_{t+1}` against the ground truth, when one was given.
    pub psnr: Option<Vec<f64>>,
    /// `r_t = ‖x_{t+1} − x_t‖`.
    pub residuals: Vec<f64>,
    pub gamma: f64,
    pub nu: f64,
    pub norm_a: f64,
    pub warm: bool,
}

impl PnpTrace {
    pub fn len(&self) -> usize {
        self.residuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residuals.is_empty()
    }

    pub fn final_psnr(&self) -> Option<f64> {
        self.psnr.as_ref().and_then(|p| p.last().copied())
    }

    /// Columns `iter, psnr, residual` (psnr empty without ground truth).
    pub fn table(&self) -> TraceTable {
        let mut t = TraceTable::new(&["iter", "psnr", "residual"]);
        for (i, r) in self.residuals.iter().enumerate() {
            let p = match &self.psnr {
                Some(p) => Cell::Float(p[i]),
                None => Cell::Text(String::new()),
            };
            t.push_row(vec![(i + 1).into(), p, (*r).into()]);
        }
        t
    }
}

/// Resolves `γ` against `‖A‖` and validates the configuration.
fn resolve_gamma(
    cfg: &PnpConfig,
    a: &BlurKernel,
    dims: (usize, usize, usize),
) -> Result<(f64, f64)> {
    let norm = spectral_norm(a, dims, &cfg.norm_config)?.norm;
    if !(norm > 0.0) {
        return Err(Error::Domain("blur operator has zero norm".into()));
    }
    let limit = 2.0 / (norm * norm);
    let gamma = cfg.gamma.unwrap_or(1.99 / (norm * norm));
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::Parameter(format!(
            "gamma {gamma} must be finite and > 0"
        )));
    }
    if gamma >= limit && !cfg.unsafe_gamma {
        return Err(Error::Parameter(format!(
            "gamma {gamma} is not below 2/||A||^2 = {limit}; pass the unsafe override to allow it"
        )));
    }
    Ok((gamma, norm))
}

/// Runs `T` PnP-FB iterations from `x₀ = y`, `u₀ = D₁y`.
pub fn pnp_fb(
    y: &Image,
    a: &BlurKernel,
    cfg: &PnpConfig,
    denoiser: &PnnModel,
    truth: Option<&Image>,
) -> Result<(Image, PnpTrace)> {
    if !(cfg.beta > 0.0) || !(cfg.sigma >= 0.0) || !cfg.beta.is_finite() || !cfg.sigma.is_finite() {
        return Err(Error::Parameter(format!(
            "beta {} must be > 0 and sigma {} >= 0",
            cfg.beta, cfg.sigma
        )));
    }
    if cfg.iters == 0 {
        return Err(Error::Parameter("PnP needs at least one iteration".into()));
    }
    y.check_finite()?;
    if let Some(t) = truth {
        t.ensure_same_shape(y, "ground truth")?;
    }
    let (gamma, norm_a) = resolve_gamma(cfg, a, y.dims())?;
    let nu = cfg.lambda() * gamma;
    let warm = cfg.warm.unwrap_or(denoiser.arch.is_dual_fb());
    let stop = cfg.stop.map(|s| s * y.norm());

    let mut x = y.clone();
    let mut u = denoiser.layers[0].d.apply(y)?;
    let mut trace = PnpTrace {
        psnr: truth.map(|_| Vec::with_capacity(cfg.iters)),
        residuals: Vec::with_capacity(cfg.iters),
        gamma,
        nu,
        norm_a,
        warm,
    };
    let mut opts = ForwardOptions::default();
    for _ in 0..cfg.iters {
        let z = grad_step(&x, a, y, gamma)?;
        opts.u0 = warm.then(|| u.clone());
        let out = pnn_forward_with(denoiser, &z, nu, &opts)?;
        let r = out.x.sub(&x).norm();
        x = out.x;
        u = out.u;
        trace.residuals.push(r);
        if let (Some(p), Some(t)) = (trace.psnr.as_mut(), truth) {
            p.push(psnr(t, &x)?);
        }
        if stop.is_some_and(|s| r <= s) {
            break;
        }
    }
    Ok((x, trace))
}

/// Checks `r_t ≤ r_{t−1} + slack` for every `t ≥ 1`; returns the first
/// offending index.
pub fn residual_monotonicity(trace: &PnpTrace, slack: f64) -> (bool, Option<usize>) {
    let first = trace
        .residuals
        .windows(2)
        .position(|w| w[1] > w[0] + slack)
        .map(|i| i + 1);
    (first.is_none(), first)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BetaSweep {
    /// `(β, final PSNR)` in grid order.
    pub rows: Vec<(f64, f64)>,
    /// Highest PSNR; ties go to the smaller β.
    pub best: f64,
}

impl BetaSweep {
    pub fn table(&self) -> TraceTable {
        let mut t = TraceTable::new(&["beta", "psnr", "best"]);
        for &(b, p) in &self.rows {
            t.push_row(vec![b.into(), p.into(), Cell::Int((b == self.best) as i64)]);
        }
        t
    }
}

/// Runs [`pnp_fb`] for every β of the grid (in parallel).
pub fn beta_sweep(
    y: &Image,
    a: &BlurKernel,
    template: &PnpConfig,
    denoiser: &PnnModel,
    grid: &[f64],
    truth: &Image,
) -> Result<BetaSweep> {
    if grid.is_empty() {
        return Err(Error::Parameter("beta grid is empty".into()));
    }
    let rows = grid
        .par_iter()
        .map(|&beta| {
            let cfg = PnpConfig {
                beta,
                ..template.clone()
            };
            let (_, tr) = pnp_fb(y, a, &cfg, denoiser, Some(truth))?;
            Ok((beta, tr.final_psnr().expect("ground truth given")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = rows[0];
    for &r in &rows[1..] {
        if r.1 > best.1 || (r.1 == best.1 && r.0 < best.0) {
            best = r;
        }
    }
    Ok(BetaSweep { rows, best: best.0 })
}
