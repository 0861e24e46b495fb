//! Finite-difference validation of the reverse pass.

use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::pnn::{pnn_forward_with, ForwardOptions, PnnModel, Tape};
use crate::rng;
use crate::tensor::{Image, Tensor};

use super::grad::pnn_vjp;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub fd_step: f64,
    /// Random parameter coordinates to probe (all `log μ` entries are added).
    pub coords: usize,
    /// Denominator floor of the relative error.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            fd_step: 1e-5,
            coords: 64,
            floor: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Coordinate with the largest error.
    pub worst: Option<usize>,
    pub checked: usize,
    /// Coordinates whose ±step run changed an activation pattern.
    pub skipped: usize,
}

fn masks(t: &Tape) -> Vec<bool> {
    t.layers
        .iter()
        .flat_map(|l| l.dual_mask.iter().chain(&l.primal_mask).copied())
        .collect()
}

fn probe(model: &PnnModel, z: &Image, nu: f64, w: &Image) -> Result<(f64, Vec<bool>, Tape)> {
    let opts = ForwardOptions {
        record: true,
        ..ForwardOptions::default()
    };
    let out = pnn_forward_with(model, z, nu, &opts)?;
    let tape = out.tape.expect("recorded");
    Ok((w.dot(&out.x), masks(&tape), tape))
}

/// Compares [`pnn_vjp`] against central differences of `⟨w, x_K(θ)⟩` for a
/// random cotangent `w`. A coordinate is skipped when either perturbed run
/// changes any clip or projection mask, i.e. when the step crosses a kink.
/// LNO norms are recomputed to `1e-14` relative accuracy with block
/// iteration, so nearly degenerate spectra do not pollute the differences.
pub fn grad_check(
    model: &PnnModel,
    z: &Image,
    nu: f64,
    seed: u64,
    fd_step: f64,
) -> Result<GradCheckReport> {
    grad_check_with(
        model,
        z,
        nu,
        seed,
        &GradCheckConfig {
            fd_step,
            ..GradCheckConfig::default()
        },
    )
}

pub fn grad_check_with(
    model: &PnnModel,
    z: &Image,
    nu: f64,
    seed: u64,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    if !(cfg.fd_step > 0.0) {
        return Err(Error::Parameter(format!(
            "fd step {} must be > 0",
            cfg.fd_step
        )));
    }
    let mut base = model.clone();
    base.norm_config = base.norm_config.with_tol(1e-14, 100_000).with_block(8);
    base.refresh_norms()?;
    let (c, h, wd) = z.dims();
    let mut r = rng::derive(seed, &[0xC0]);
    let w = Tensor::from_vec(
        c,
        h,
        wd,
        (0..c * h * wd)
            .map(|_| StandardNormal.sample(&mut r))
            .collect(),
    )?;
    let (_, m0, tape) = probe(&base, z, nu, &w)?;
    let (g, _) = pnn_vjp(&base, z, nu, &tape, &w)?;
    let analytic = g.flatten();
    let theta = base.parameters();
    let n = theta.len();
    let n_mu = base.log_mu.len();
    let mut idx: Vec<usize> = sample(&mut r, n - n_mu, cfg.coords.min(n - n_mu)).into_vec();
    idx.sort_unstable();
    idx.extend(n - n_mu..n);

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
    };
    let mut pert = base.clone();
    for &i in &idx {
        let mut eval = |delta: f64| -> Result<(f64, Vec<bool>)> {
            let mut t = theta.clone();
            t[i] += delta;
            pert.set_parameters(&t)?;
            let (phi, m, _) = probe(&pert, z, nu, &w)?;
            Ok((phi, m))
        };
        let (fp, mp) = eval(cfg.fd_step)?;
        let (fm, mm) = eval(-cfg.fd_step)?;
        if mp != m0 || mm != m0 {
            report.skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * cfg.fd_step);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
        report.checked += 1;
        if report.worst.is_none() || err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst = Some(i);
        }
    }
    Ok(report)
}

/// With `ν = +∞` and an unbounded box the network is the linear map
/// `z ↦ Mz`. Builds `M` column by column and returns the relative max-norm
/// error of the reverse-mode input gradient against `Mᵀw`.
pub fn linear_regime_check(model: &PnnModel, z: &Image, seed: u64) -> Result<f64> {
    let mut m = model.clone();
    m.bounds = crate::prox::BoxConstraint::unbounded();
    let nu = f64::INFINITY;
    let (c, h, wd) = z.dims();
    let n = c * h * wd;
    let mut r = rng::derive(seed, &[0x11]);
    let w = Tensor::from_vec(
        c,
        h,
        wd,
        (0..n).map(|_| StandardNormal.sample(&mut r)).collect(),
    )?;
    let mut expected = Vec::with_capacity(n);
    for i in 0..n {
        let mut e = z.zeros_like();
        e.data_mut()[i] = 1.0;
        let col = pnn_forward_with(&m, &e, nu, &ForwardOptions::default())?.x;
        expected.push(col.dot(&w));
    }
    let (_, _, tape) = probe(&m, z, nu, &w)?;
    let (_, gz) = pnn_vjp(&m, z, nu, &tape, &w)?;
    let scale = expected.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let err = gz
        .data()
        .iter()
        .zip(&expected)
        .fold(0.0f64, |a, (g, e)| a.max((g - e).abs()));
    Ok(if scale > 0.0 { err / scale } else { err })
}
