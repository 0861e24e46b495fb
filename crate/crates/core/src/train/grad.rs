//! Reverse- and forward-mode derivatives of the unrolled network, computed
//! from a recorded [`Tape`]. Clip/projection kinks use the recorded masks
//! (the boundary itself has zero derivative).

use crate::error::{Error, Result};
use crate::linops::AdjointPolicy;
use crate::pnn::{ArchKind, PnnModel, Tape, VariantKind};
use crate::tensor::{FeatureMap, Image, Tensor};

/// Gradient of one layer's learnable stacks.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub d: Vec<f64>,
    /// Untied adjoint stack (LFO only).
    pub p: Option<Vec<f64>>,
}

/// Gradient with the same layout as the model's learnable parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GradPack {
    pub layers: Vec<LayerGrad>,
    pub log_mu: Vec<f64>,
}

impl GradPack {
    pub fn zeros(model: &PnnModel) -> Self {
        GradPack {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGrad {
                    d: vec![0.0; l.d.kernels().len()],
                    p: match &l.adjoint {
                        AdjointPolicy::Tied => None,
                        AdjointPolicy::Untied(p) => Some(vec![0.0; p.kernels().len()]),
                    },
                })
                .collect(),
            log_mu: vec![0.0; model.log_mu.len()],
        }
    }

    /// Same order as [`PnnModel::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for l in &self.layers {
            v.extend_from_slice(&l.d);
            if let Some(p) = &l.p {
                v.extend_from_slice(p);
            }
        }
        v.extend_from_slice(&self.log_mu);
        v
    }

    pub fn from_flat(model: &PnnModel, flat: &[f64]) -> Result<Self> {
        let mut g = GradPack::zeros(model);
        if flat.len() != model.learnable_count() {
            return Err(Error::Shape(format!(
                "{} gradient entries for {} parameters",
                flat.len(),
                model.learnable_count()
            )));
        }
        let mut it = flat.iter().copied();
        for l in &mut g.layers {
            l.d.iter_mut()
                .for_each(|v| *v = it.next().expect("length checked"));
            if let Some(p) = &mut l.p {
                p.iter_mut()
                    .for_each(|v| *v = it.next().expect("length checked"));
            }
        }
        g.log_mu
            .iter_mut()
            .for_each(|v| *v = it.next().expect("length checked"));
        Ok(g)
    }
}

/// Output of [`pnn_vjp_full`].
#[derive(Clone, Debug)]
pub struct Vjp {
    pub grads: GradPack,
    pub grad_z: Image,
    /// Cotangent reaching `u₀` (meaningful when `u₀` was supplied).
    pub grad_u0: FeatureMap,
}

fn check_tape(model: &PnnModel, z: &Image, nu: f64, tape: &Tape) -> Result<()> {
    if tape.layers.len() != model.depth() {
        return Err(Error::Shape(format!(
            "tape has {} layers, model has {}",
            tape.layers.len(),
            model.depth()
        )));
    }
    if tape.dims != z.dims() {
        return Err(Error::Shape(format!(
            "tape recorded {:?}, input is {:?}",
            tape.dims,
            z.dims()
        )));
    }
    if tape.nu.to_bits() != nu.to_bits() {
        return Err(Error::Parameter(format!(
            "tape recorded nu = {}, got {nu}",
            tape.nu
        )));
    }
    for (k, (t, l)) in tape.layers.iter().zip(&model.layers).enumerate() {
        if t.dx.channels() != l.d.filters() || t.x_prev.channels() != l.d.channels() {
            return Err(Error::Shape(format!(
                "tape layer {k} does not match the model"
            )));
        }
    }
    Ok(())
}

fn masked(g: &Tensor, mask: &[bool]) -> Tensor {
    let mut out = g.clone();
    for (v, &m) in out.data_mut().iter_mut().zip(mask) {
        if !m {
            *v = 0.0;
        }
    }
    out
}

/// Vector–Jacobian product of `x_K(θ, z)` with cotangent `cot`.
pub fn pnn_vjp(
    model: &PnnModel,
    z: &Image,
    nu: f64,
    tape: &Tape,
    cot: &Image,
) -> Result<(GradPack, Image)> {
    let v = pnn_vjp_full(model, z, nu, tape, cot)?;
    Ok((v.grads, v.grad_z))
}

/// [`pnn_vjp`] also returning the `u₀` cotangent.
pub fn pnn_vjp_full(model: &PnnModel, z: &Image, nu: f64, tape: &Tape, cot: &Image) -> Result<Vjp> {
    backward(model, z, nu, tape, cot, true)
}

/// `J_zᵀ w` only (parameter gradients skipped).
pub fn input_vjp(model: &PnnModel, z: &Image, nu: f64, tape: &Tape, cot: &Image) -> Result<Image> {
    Ok(backward(model, z, nu, tape, cot, false)?.grad_z)
}

fn backward(
    model: &PnnModel,
    z: &Image,
    nu: f64,
    tape: &Tape,
    cot: &Image,
    params: bool,
) -> Result<Vjp> {
    check_tape(model, z, nu, tape)?;
    cot.ensure_same_shape(z, "cotangent")?;
    let depth = model.depth();
    let mut grads = GradPack::zeros(model);
    let mut g_mu = vec![0.0; depth];
    let mut g_norm = vec![0.0; depth];
    let mut g_z = z.zeros_like();
    let mut g_x = cot.clone();
    let (_, h, w) = z.dims();
    let mut g_u = Tensor::zeros(model.features, h, w);

    for k in (0..depth).rev() {
        let t = &tape.layers[k];
        let s = t.scalars;
        let layer = &model.layers[k];

        // extrapolation x = (1+α)x̃ − αx_prev, u = (1+ρ)ũ − ρu_prev
        let g_xt = g_x.scaled(1.0 + s.alpha);
        let mut g_xp = g_x.scaled(-s.alpha);
        if params && model.arch == ArchKind::Dsccp {
            let diff = t.x_tilde.sub(&t.x_prev);
            g_mu[k] += g_x.dot(&diff) * -s.alpha.powi(3);
        }
        let mut g_ut = g_u.scaled(1.0 + s.rho);
        let mut g_up = g_u.scaled(-s.rho);

        // primal sublayer
        let g_pre = masked(&g_xt, &t.primal_mask);
        let g_r = if s.mu.is_infinite() {
            g_pre
        } else {
            let (wr, wx) = (s.mu / (1.0 + s.mu), 1.0 / (1.0 + s.mu));
            g_xp.axpy(wx, &g_pre);
            if params {
                let diff = t.residual.sub(&t.x_prev);
                g_mu[k] += g_pre.dot(&diff) / ((1.0 + s.mu) * (1.0 + s.mu));
            }
            g_pre.scaled(wr)
        };
        g_z.axpy(1.0, &g_r);
        // a = adjoint(ũ), r = z − a
        let g_a = g_r.scaled(-1.0);
        match &layer.adjoint {
            AdjointPolicy::Tied => {
                g_ut.axpy(1.0, &layer.d.apply(&g_a)?);
                if params {
                    layer
                        .d
                        .accumulate_kernel_grad(&mut grads.layers[k].d, 1.0, &g_a, &t.u_tilde);
                }
            }
            AdjointPolicy::Untied(p) => {
                g_ut.axpy(1.0, &p.adjoint(&g_a)?);
                if params {
                    let dst = grads.layers[k]
                        .p
                        .as_mut()
                        .expect("untied layer has P gradient");
                    p.accumulate_kernel_grad(dst, 1.0, &t.u_tilde, &g_a);
                }
            }
        }

        // dual sublayer ũ = clip(u + step·D x)
        let g_pre_d = masked(&g_ut, &t.dual_mask);
        g_up.axpy(1.0, &g_pre_d);
        let g_dx = g_pre_d.scaled(s.step);
        g_xp.axpy(1.0, &layer.d.adjoint(&g_dx)?);
        if params {
            layer
                .d
                .accumulate_kernel_grad(&mut grads.layers[k].d, 1.0, &t.x_prev, &g_dx);
            if model.variant == VariantKind::Lno {
                let g_step = g_pre_d.dot(&t.dx);
                // step = c/n² or c/(μn²)
                g_norm[k] += g_step * (-2.0 * s.step / layer.norm);
                if !s.mu.is_infinite() {
                    g_mu[k] += g_step * (-s.step / s.mu);
                }
            }
        }
        g_x = g_xp;
        g_u = g_up;
    }

    // x₀ = z, u₀ = D₁z
    g_z.axpy(1.0, &g_x);
    if tape.u0_from_z {
        let d1 = &model.layers[0].d;
        g_z.axpy(1.0, &d1.adjoint(&g_u)?);
        if params {
            d1.accumulate_kernel_grad(&mut grads.layers[0].d, 1.0, z, &g_u);
        }
    }

    if params {
        if model.variant == VariantKind::Lno && !model.stop_norm_grad {
            for (k, l) in model.layers.iter().enumerate() {
                if g_norm[k] == 0.0 {
                    continue;
                }
                let (left, right) = l.singular.as_ref().ok_or_else(|| {
                    Error::Precondition(format!("layer {k} has no cached singular pair"))
                })?;
                // ∂‖D‖/∂D = left ⊗ right
                l.d.accumulate_kernel_grad(&mut grads.layers[k].d, g_norm[k], right, left);
            }
        }
        let mus: Vec<f64> = tape.layers.iter().map(|t| t.scalars.mu).collect();
        match (model.arch, model.variant) {
            (ArchKind::Ddfb | ArchKind::Ddifb, _) => {}
            (ArchKind::Dcp, _) => {
                grads.log_mu[0] = g_mu.iter().zip(&mus).map(|(g, m)| g * m).sum();
            }
            (ArchKind::Dsccp, VariantKind::Lno) => {
                for k in 0..depth {
                    grads.log_mu[k] = g_mu[k] * mus[k];
                }
            }
            (ArchKind::Dsccp, VariantKind::Lfo) => {
                // μ_{k+1} = α(μ_k)μ_k, dμ_{k+1}/dμ_k = α − μα³
                let mut carry = 0.0;
                for k in (0..depth).rev() {
                    let a = tape.layers[k].scalars.alpha;
                    carry = g_mu[k] + carry * (a - mus[k] * a.powi(3));
                }
                grads.log_mu[0] = carry * mus[0];
            }
        }
    }

    Ok(Vjp {
        grads,
        grad_z: g_z,
        grad_u0: g_u,
    })
}

/// Jacobian–vector product `J_z v` with parameters and masks frozen.
pub fn pnn_jvp(model: &PnnModel, z: &Image, nu: f64, tape: &Tape, v: &Image) -> Result<Image> {
    check_tape(model, z, nu, tape)?;
    v.ensure_same_shape(z, "tangent")?;
    let mut dx = v.clone();
    let mut du = if tape.u0_from_z {
        model.layers[0].d.apply(v)?
    } else {
        Tensor::zeros(model.features, z.height(), z.width())
    };
    for (layer, t) in model.layers.iter().zip(&tape.layers) {
        let s = t.scalars;
        let mut pre_d = layer.d.apply(&dx)?;
        pre_d.scale(s.step);
        pre_d.axpy(1.0, &du);
        let dut = masked(&pre_d, &t.dual_mask);
        let dr = v.sub(&layer.apply_adjoint(&dut)?);
        let pre_p = if s.mu.is_infinite() {
            dr
        } else {
            let (wr, wx) = (s.mu / (1.0 + s.mu), 1.0 / (1.0 + s.mu));
            dr.zip_map(&dx, |a, b| wr * a + wx * b)
        };
        let dxt = masked(&pre_p, &t.primal_mask);
        dx = dxt.zip_map(&dx, |n, o| (1.0 + s.alpha) * n - s.alpha * o);
        du = dut.zip_map(&du, |n, o| (1.0 + s.rho) * n - s.rho * o);
    }
    Ok(dx)
}
