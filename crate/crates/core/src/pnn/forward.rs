use crate::error::{Error, Result};
use crate::linops::ConvStack;
use crate::prox::{hardtanh, project_box, BoxConstraint};
use crate::tensor::{FeatureMap, Image};

use super::{LayerScalars, PnnLayerParams, PnnModel};

/// Everything the reverse and tangent passes need from one layer.
#[derive(Clone, Debug)]
pub struct LayerTape {
    pub x_prev: Image,
    pub u_prev: FeatureMap,
    /// `D_k x_{k−1}` (before the step multiplier).
    pub dx: FeatureMap,
    pub u_tilde: FeatureMap,
    pub x_tilde: Image,
    /// `z − adjoint(ũ_k)`.
    pub residual: Image,
    /// Dual clip active (`|pre| < ν`, boundary counts as clipped).
    pub dual_mask: Vec<bool>,
    /// Primal pre-activation strictly inside the box.
    pub primal_mask: Vec<bool>,
    pub scalars: LayerScalars,
}

/// Activation pattern and intermediates of one forward evaluation.
#[derive(Clone, Debug)]
pub struct Tape {
    pub layers: Vec<LayerTape>,
    pub nu: f64,
    pub dims: (usize, usize, usize),
    /// `u₀ = D₁z` (false when an explicit `u₀` was supplied).
    pub u0_from_z: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ForwardOptions {
    /// Replaces the default `u₀ = D₁z` (PnP warm start).
    pub u0: Option<FeatureMap>,
    /// Record the tape for differentiation.
    pub record: bool,
    /// Replaces the model's derived per-layer scalars.
    pub scalars: Option<Vec<LayerScalars>>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub x: Image,
    pub u: FeatureMap,
    /// Last primal-sublayer output `x̃_K` (always in the box).
    pub x_tilde: Image,
    pub tape: Option<Tape>,
}

fn check_nu(nu: f64) -> Result<()> {
    if nu >= 0.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("nu = {nu} must be >= 0")))
    }
}

/// `HardTanh_ν(u + step·D x)`.
pub fn dual_sublayer(
    x: &Image,
    u: &FeatureMap,
    d: &ConvStack,
    step: f64,
    nu: f64,
) -> Result<FeatureMap> {
    check_nu(nu)?;
    let mut pre = d.apply(x)?;
    u.ensure_same_shape(&pre, "dual sublayer")?;
    pre.scale(step);
    pre.axpy(1.0, u);
    Ok(hardtanh(&pre, nu))
}

/// `P_C(μ/(1+μ)(z − adjoint(u)) + x/(1+μ))`; `μ = ∞` gives `P_C(z − adjoint(u))`.
pub fn primal_sublayer(
    x: &Image,
    u: &FeatureMap,
    layer: &PnnLayerParams,
    mu: f64,
    z: &Image,
    c: &BoxConstraint,
) -> Result<Image> {
    if !(mu > 0.0) {
        return Err(Error::Parameter(format!("mu = {mu} must be > 0")));
    }
    x.ensure_same_shape(z, "primal sublayer")?;
    let r = z.sub(&layer.apply_adjoint(u)?);
    Ok(project_box(&primal_pre(x, &r, mu), c))
}

fn primal_pre(x: &Image, r: &Image, mu: f64) -> Image {
    if mu.is_infinite() {
        r.clone()
    } else {
        let (wr, wx) = (mu / (1.0 + mu), 1.0 / (1.0 + mu));
        r.zip_map(x, |a, b| wr * a + wx * b)
    }
}

fn extrapolate(new: &Image, old: &Image, coef: f64) -> Image {
    if coef == 0.0 {
        new.clone()
    } else {
        new.zip_map(old, |n, o| (1.0 + coef) * n - coef * o)
    }
}

#[allow(clippy::too_many_arguments)]
fn run_layer(
    layer: &PnnLayerParams,
    s: &LayerScalars,
    x: &Image,
    u: &FeatureMap,
    z: &Image,
    nu: f64,
    c: &BoxConstraint,
    record: bool,
) -> Result<(Image, FeatureMap, Image, Option<LayerTape>)> {
    let dx = layer.d.apply(x)?;
    let mut pre_d = dx.scaled(s.step);
    pre_d.axpy(1.0, u);
    let ut = hardtanh(&pre_d, nu);
    let residual = z.sub(&layer.apply_adjoint(&ut)?);
    let pre_p = primal_pre(x, &residual, s.mu);
    let xt = project_box(&pre_p, c);
    let x_new = extrapolate(&xt, x, s.alpha);
    let u_new = extrapolate(&ut, u, s.rho);
    let tape = record.then(|| LayerTape {
        x_prev: x.clone(),
        u_prev: u.clone(),
        dual_mask: pre_d.data().iter().map(|v| v.abs() < nu).collect(),
        primal_mask: pre_p.data().iter().map(|&v| c.active(v)).collect(),
        dx,
        u_tilde: ut,
        x_tilde: xt.clone(),
        residual,
        scalars: *s,
    });
    Ok((x_new, u_new, xt, tape))
}

pub fn pnn_forward(model: &PnnModel, z: &Image, nu: f64) -> Result<ForwardOutput> {
    pnn_forward_with(model, z, nu, &ForwardOptions::default())
}

/// Runs the `K` layers from `x₀ = z`, `u₀ = D₁z` (or `opts.u0`).
pub fn pnn_forward_with(
    model: &PnnModel,
    z: &Image,
    nu: f64,
    opts: &ForwardOptions,
) -> Result<ForwardOutput> {
    check_nu(nu)?;
    if z.channels() != model.channels {
        return Err(Error::Shape(format!(
            "model expects {} channels, got {}",
            model.channels,
            z.channels()
        )));
    }
    z.check_finite()?;
    let derived;
    let scalars = match &opts.scalars {
        Some(s) => {
            if s.len() != model.depth() {
                return Err(Error::Parameter(format!(
                    "{} scalar sets for {} layers",
                    s.len(),
                    model.depth()
                )));
            }
            s
        }
        None => {
            derived = model.layer_scalars()?;
            &derived
        }
    };
    let mut u = match &opts.u0 {
        Some(u0) => {
            let want = (model.features, z.height(), z.width());
            if u0.dims() != want {
                return Err(Error::Shape(format!(
                    "u0 is {:?}, expected {want:?}",
                    u0.dims()
                )));
            }
            u0.clone()
        }
        None => model.layers[0].d.apply(z)?,
    };
    let mut x = z.clone();
    let mut x_tilde = z.clone();
    let mut tapes = Vec::with_capacity(if opts.record { model.depth() } else { 0 });
    for (layer, s) in model.layers.iter().zip(scalars) {
        let (xn, un, xt, t) = run_layer(layer, s, &x, &u, z, nu, &model.bounds, opts.record)?;
        x = xn;
        u = un;
        x_tilde = xt;
        tapes.extend(t);
    }
    let tape = opts.record.then(|| Tape {
        layers: tapes,
        nu,
        dims: z.dims(),
        u0_from_z: opts.u0.is_none(),
    });
    Ok(ForwardOutput {
        x,
        u,
        x_tilde,
        tape,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::AdjointPolicy;
    use crate::pnn::{ArchKind, VariantKind};
    use crate::tensor::Tensor;

    fn delta_layer() -> PnnLayerParams {
        PnnLayerParams::new(ConvStack::delta(1.0), AdjointPolicy::Tied).unwrap()
    }

    #[test]
    fn dual_sublayer_cases() {
        let d = ConvStack::delta(1.0);
        let z0 = Tensor::zeros(1, 2, 2);
        assert_eq!(dual_sublayer(&z0, &z0, &d, 1.99, 1.0).unwrap(), z0);
        let x = Tensor::filled(1, 2, 2, 0.2);
        let u = Tensor::from_vec(1, 2, 2, vec![5.0, -3.0, 0.1, 0.0]).unwrap();
        let lin = dual_sublayer(&x, &u, &d, 2.0, f64::INFINITY).unwrap();
        assert_eq!(lin.data(), &[5.4, -2.6, 0.1 + 0.4, 0.4]);
        let out = dual_sublayer(&x, &x, &d, 1.99, 1.0).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.598).abs() < 1e-15));
        assert!(dual_sublayer(&x, &x, &d, 1.0, -1.0).is_err());
    }

    #[test]
    fn primal_sublayer_cases() {
        let l = delta_layer();
        let c = BoxConstraint::default();
        let z = Tensor::from_vec(1, 1, 3, vec![-0.5, 0.3, 1.7]).unwrap();
        let zero = Tensor::zeros(1, 1, 3);
        assert_eq!(
            primal_sublayer(&zero, &zero, &l, f64::INFINITY, &z, &c)
                .unwrap()
                .data(),
            &[0.0, 0.3, 1.0]
        );
        let zc = Tensor::filled(1, 1, 3, 0.4);
        let out = primal_sublayer(&zc, &zero, &l, 1.0, &zc, &c).unwrap();
        assert!(out.max_abs_diff(&zc) < 1e-15);
        let z2 = Tensor::filled(1, 1, 3, 0.2);
        let u = Tensor::filled(1, 1, 3, 0.598);
        let out = primal_sublayer(&zero, &u, &l, f64::INFINITY, &z2, &c).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_layer_hand_trace() {
        let m = PnnModel::tied(ArchKind::Ddfb, &ConvStack::delta(1.0), 1, (2, 2)).unwrap();
        assert!((m.layers[0].norm - 1.0).abs() < 1e-15);
        let z = Tensor::filled(1, 2, 2, 0.2);
        let out = pnn_forward(&m, &z, 1.0).unwrap();
        assert!(out.x.data().iter().all(|&v| v == 0.0));
        assert!(out.u.data().iter().all(|&v| (v - 0.598).abs() < 1e-15));
    }

    #[test]
    fn zero_nu_projects() {
        let z = Tensor::from_vec(1, 2, 2, vec![-0.4, 0.2, 0.9, 1.6]).unwrap();
        let inside = Tensor::from_vec(1, 2, 2, vec![0.1, 0.2, 0.9, 0.6]).unwrap();
        let c = BoxConstraint::default();
        for a in ArchKind::ALL {
            for v in VariantKind::ALL {
                let m = PnnModel::new(a, v, 3, 2, 1, 4, (2, 2)).unwrap();
                if a.is_dual_fb() {
                    assert_eq!(pnn_forward(&m, &z, 0.0).unwrap().x, project_box(&z, &c));
                }
                let out = pnn_forward(&m, &inside, 0.0).unwrap();
                assert!(out.x.max_abs_diff(&inside) < 1e-12, "{a}-{v}");
                assert!(out.u.data().iter().all(|&u| u == 0.0));
            }
        }
    }

    #[test]
    fn outputs_stay_in_box() {
        let c = BoxConstraint::default();
        let z =
            Tensor::from_vec(1, 3, 3, vec![-1.0, 2.0, 0.5, 0.1, 0.9, 3.0, -2.0, 0.4, 0.6]).unwrap();
        for a in ArchKind::ALL {
            for v in VariantKind::ALL {
                let m = PnnModel::new(a, v, 4, 3, 1, 8, (3, 3)).unwrap();
                for nu in [0.05, 1.0] {
                    let out = pnn_forward(&m, &z, nu).unwrap();
                    assert!(out.x_tilde.data().iter().all(|&x| c.contains(x, 0.0)));
                    if a.is_dual_fb() {
                        assert!(out.x.data().iter().all(|&x| c.contains(x, 0.0)));
                    }
                    let zero = pnn_forward(&m, &Tensor::zeros(1, 3, 3), nu).unwrap();
                    assert!(zero.x_tilde.data().iter().all(|&x| c.contains(x, 0.0)));
                }
            }
        }
    }

    #[test]
    fn architecture_degeneracies() {
        let z =
            Tensor::from_vec(1, 3, 3, (0..9).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let ddifb = PnnModel::new(ArchKind::Ddifb, VariantKind::Lno, 4, 3, 1, 2, (3, 3)).unwrap();
        let mut ddfb = ddifb.clone();
        ddfb.arch = ArchKind::Ddfb;
        let mut s = ddifb.layer_scalars().unwrap();
        s.iter_mut().for_each(|l| l.rho = 0.0);
        let opts = ForwardOptions {
            scalars: Some(s.clone()),
            ..Default::default()
        };
        let a = pnn_forward_with(&ddifb, &z, 0.1, &opts).unwrap();
        let b = pnn_forward_with(&ddfb, &z, 0.1, &opts).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.u, b.u);

        let mut dsccp =
            PnnModel::new(ArchKind::Dsccp, VariantKind::Lno, 4, 3, 1, 2, (3, 3)).unwrap();
        dsccp.log_mu = vec![0.0; 4];
        let mut dcp = PnnModel::from_layers(
            ArchKind::Dcp,
            VariantKind::Lno,
            dsccp.layers.clone(),
            vec![0.0],
            (3, 3),
        )
        .unwrap();
        dcp.layers = dsccp.layers.clone();
        let mut s = dsccp.layer_scalars().unwrap();
        s.iter_mut().for_each(|l| l.alpha = 1.0);
        let a = pnn_forward_with(
            &dsccp,
            &z,
            0.1,
            &ForwardOptions {
                scalars: Some(s),
                ..Default::default()
            },
        )
        .unwrap();
        let b = pnn_forward(&dcp, &z, 0.1).unwrap();
        assert_eq!(a.x, b.x);

        // α ≡ 0 is the bare dual-then-primal block
        let mut s = dsccp.layer_scalars().unwrap();
        s.iter_mut().for_each(|l| l.alpha = 0.0);
        let a = pnn_forward_with(
            &dsccp,
            &z,
            0.1,
            &ForwardOptions {
                scalars: Some(s.clone()),
                ..Default::default()
            },
        )
        .unwrap();
        let (mut x, mut u) = (z.clone(), dsccp.layers[0].d.apply(&z).unwrap());
        for (l, sc) in dsccp.layers.iter().zip(&s) {
            u = dual_sublayer(&x, &u, &l.d, sc.step, 0.1).unwrap();
            x = primal_sublayer(&x, &u, l, sc.mu, &z, &dsccp.bounds).unwrap();
        }
        assert_eq!(a.x, x);
        assert_eq!(a.u, u);
    }

    #[test]
    fn warm_start_and_errors() {
        let m = PnnModel::new(ArchKind::Ddfb, VariantKind::Lno, 2, 3, 1, 0, (4, 4)).unwrap();
        let z = Tensor::filled(1, 4, 4, 0.5);
        let cold = pnn_forward(&m, &z, 0.1).unwrap();
        let u0 = m.layers[0].d.apply(&z).unwrap();
        let warm = pnn_forward_with(
            &m,
            &z,
            0.1,
            &ForwardOptions {
                u0: Some(u0),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(cold.x, warm.x);
        assert!(pnn_forward(&m, &z, -0.1).is_err());
        assert!(pnn_forward(&m, &Tensor::zeros(2, 4, 4), 0.1).is_err());
        let bad = ForwardOptions {
            u0: Some(Tensor::zeros(1, 4, 4)),
            ..Default::default()
        };
        assert!(pnn_forward_with(&m, &z, 0.1, &bad).is_err());
    }
}
