use proxnn::image::{add_noise, synth_cartoon, NoiseSpec};
use proxnn::pnn::{pnn_forward_with, ArchKind, ForwardOptions, PnnModel, VariantKind};
use proxnn::prox::BoxConstraint;
use proxnn::train::{
    grad_check, linear_regime_check, loss_and_grad, pnn_jvp, pnn_vjp, GradPack, TrainSample,
};
use proxnn::{Image, Tensor};
use rand_distr::{Distribution, StandardNormal};

fn combos() -> impl Iterator<Item = (ArchKind, VariantKind)> {
    ArchKind::ALL
        .into_iter()
        .flat_map(|a| VariantKind::ALL.into_iter().map(move |v| (a, v)))
}

fn noisy(seed: u64, h: usize) -> (Image, Image) {
    let clean = synth_cartoon(h, h, seed).unwrap();
    let z = add_noise(&clean, &NoiseSpec::gaussian(0.1, seed + 100)).unwrap();
    (clean, z)
}

fn recorded() -> ForwardOptions {
    ForwardOptions {
        record: true,
        ..ForwardOptions::default()
    }
}

fn gauss(seed: u64, c: usize, h: usize, w: usize) -> Tensor {
    let mut r = proxnn::rng::rng(seed);
    Tensor::from_vec(
        c,
        h,
        w,
        (0..c * h * w)
            .map(|_| StandardNormal.sample(&mut r))
            .collect(),
    )
    .unwrap()
}

#[test]
fn linear_network_input_gradient_is_the_transpose() {
    for (a, v) in combos() {
        let m = PnnModel::new(a, v, 3, 4, 1, 11, (8, 8)).unwrap();
        let (_, z) = noisy(1, 8);
        let err = linear_regime_check(&m, &z, 5).unwrap();
        assert!(err <= 1e-10, "{a}-{v}: {err:e}");
    }
}

#[test]
fn vjp_and_jvp_are_adjoint() {
    for (a, v) in combos() {
        let m = PnnModel::new(a, v, 4, 4, 1, 3, (8, 8)).unwrap();
        let (_, z) = noisy(2, 8);
        let nu = 0.01;
        let out = pnn_forward_with(&m, &z, nu, &recorded()).unwrap();
        let tape = out.tape.unwrap();
        let t = gauss(1, 1, 8, 8);
        let w = gauss(2, 1, 8, 8);
        let jv = pnn_jvp(&m, &z, nu, &tape, &t).unwrap();
        let (_, jtw) = pnn_vjp(&m, &z, nu, &tape, &w).unwrap();
        let (l, r) = (jv.dot(&w), t.dot(&jtw));
        assert!(
            (l - r).abs() <= 1e-10 * l.abs().max(r.abs()).max(1.0),
            "{a}-{v}: {l} vs {r}"
        );
    }
}

#[test]
fn zero_cotangent_gives_zero_gradient() {
    for (a, v) in combos() {
        let m = PnnModel::new(a, v, 3, 4, 1, 3, (8, 8)).unwrap();
        let (_, z) = noisy(3, 8);
        let tape = pnn_forward_with(&m, &z, 0.02, &recorded())
            .unwrap()
            .tape
            .unwrap();
        let (g, gz) = pnn_vjp(&m, &z, 0.02, &tape, &z.zeros_like()).unwrap();
        assert!(g.flatten().iter().all(|&x| x == 0.0), "{a}-{v}");
        assert!(gz.data().iter().all(|&x| x == 0.0));
    }
}

#[test]
fn random_dsccp_lfo_passes_finite_differences() {
    for seed in 0..3 {
        let m = PnnModel::new(ArchKind::Dsccp, VariantKind::Lfo, 3, 4, 1, seed, (8, 8)).unwrap();
        let (_, z) = noisy(seed, 8);
        let r = grad_check(&m, &z, 0.01, seed, 1e-5).unwrap();
        assert!(r.checked >= 50, "{r:?}");
        assert!(r.max_rel_err <= 1e-4, "{r:?}");
    }
}

#[test]
fn stop_gradient_only_touches_the_norm_chain() {
    let (_, z) = noisy(4, 8);
    for (a, v) in combos() {
        let m = PnnModel::new(a, v, 3, 4, 1, 7, (8, 8)).unwrap();
        let mut s = m.clone();
        s.stop_norm_grad = true;
        let tape = pnn_forward_with(&m, &z, 0.01, &recorded())
            .unwrap()
            .tape
            .unwrap();
        let (g, gz) = pnn_vjp(&m, &z, 0.01, &tape, &z).unwrap();
        let (gs, gzs) = pnn_vjp(&s, &z, 0.01, &tape, &z).unwrap();
        assert_eq!(gz, gzs);
        assert_eq!(g.log_mu, gs.log_mu);
        match v {
            VariantKind::Lfo => assert_eq!(g, gs),
            VariantKind::Lno => assert_ne!(g.layers, gs.layers, "{a}"),
        }
    }
}

#[test]
fn tape_mismatch_is_rejected() {
    let m = PnnModel::new(ArchKind::Ddfb, VariantKind::Lno, 3, 4, 1, 1, (8, 8)).unwrap();
    let short = PnnModel::new(ArchKind::Ddfb, VariantKind::Lno, 2, 4, 1, 1, (8, 8)).unwrap();
    let (_, z) = noisy(5, 8);
    let tape = pnn_forward_with(&m, &z, 0.01, &recorded())
        .unwrap()
        .tape
        .unwrap();
    assert!(pnn_vjp(&short, &z, 0.01, &tape, &z).is_err());
    assert!(pnn_vjp(&m, &z, 0.02, &tape, &z).is_err());
    let (_, z12) = noisy(5, 12);
    assert!(pnn_vjp(&m, &z12, 0.01, &tape, &z12).is_err());
}

#[test]
fn loss_examples() {
    let m = PnnModel::new(ArchKind::Ddfb, VariantKind::Lno, 3, 4, 1, 1, (4, 4)).unwrap();
    // ν = 0 makes the dual family return P_C(z) = z for z in the box
    let clean = Tensor::filled(1, 4, 4, 0.4);
    let at_target = TrainSample {
        clean: clean.clone(),
        noisy: clean.clone(),
        delta: 0.0,
    };
    let (l, g) = loss_and_grad(&m, std::slice::from_ref(&at_target)).unwrap();
    assert_eq!(l, 0.0);
    assert!(g.flatten().iter().all(|&x| x == 0.0));

    let off = TrainSample {
        clean,
        noisy: Tensor::filled(1, 4, 4, 0.5),
        delta: 0.0,
    };
    let (l1, g1) = loss_and_grad(&m, std::slice::from_ref(&off)).unwrap();
    assert!((l1 - 0.08).abs() < 1e-12, "{l1}");
    let (l2, g2) = loss_and_grad(&m, &[off.clone(), off]).unwrap();
    assert!((l1 - l2).abs() < 1e-15);
    assert_eq!(g1.flatten().len(), g2.flatten().len());
    for (a, b) in g1.flatten().iter().zip(g2.flatten()) {
        assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
    }
    assert!(loss_and_grad(&m, &[]).is_err());
}

#[test]
fn batch_gradient_is_the_weighted_mean() {
    let m = PnnModel::new(ArchKind::Dsccp, VariantKind::Lno, 3, 4, 1, 9, (8, 8)).unwrap();
    let samples: Vec<TrainSample> = (0..5)
        .map(|s| {
            let (clean, noisy) = noisy(s, 8);
            TrainSample {
                clean,
                noisy,
                delta: 0.1,
            }
        })
        .collect();
    let (la, ga) = loss_and_grad(&m, &samples[..2]).unwrap();
    let (lb, gb) = loss_and_grad(&m, &samples[2..]).unwrap();
    let (l, g) = loss_and_grad(&m, &samples).unwrap();
    assert!((l - (2.0 * la + 3.0 * lb) / 5.0).abs() <= 1e-12 * l.abs());
    let mix: Vec<f64> = ga
        .flatten()
        .iter()
        .zip(gb.flatten())
        .map(|(a, b)| (2.0 * a + 3.0 * b) / 5.0)
        .collect();
    let g = g.flatten();
    let scale = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for (x, y) in g.iter().zip(&mix) {
        assert!((x - y).abs() <= 1e-12 * scale);
    }
    let mismatched = TrainSample {
        clean: Tensor::zeros(1, 6, 6),
        noisy: Tensor::zeros(1, 6, 6),
        delta: 0.1,
    };
    assert!(loss_and_grad(&m, &[samples[0].clone(), mismatched]).is_err());
}

#[test]
fn gradpack_round_trips_through_flat_layout() {
    let m = PnnModel::new(ArchKind::Dcp, VariantKind::Lfo, 2, 3, 2, 4, (8, 8)).unwrap();
    let flat: Vec<f64> = (0..m.learnable_count()).map(|i| i as f64).collect();
    let g = GradPack::from_flat(&m, &flat).unwrap();
    assert_eq!(g.flatten(), flat);
    assert!(GradPack::from_flat(&m, &flat[1..]).is_err());
}

#[test]
fn box_default_keeps_primal_output_inside() {
    let m = PnnModel::new(ArchKind::Ddifb, VariantKind::Lfo, 3, 4, 1, 2, (8, 8)).unwrap();
    let (_, z) = noisy(6, 8);
    let out = pnn_forward_with(&m, &z, 0.05, &recorded()).unwrap();
    let c = BoxConstraint::default();
    assert!(out.x_tilde.data().iter().all(|&v| c.contains(v, 0.0)));
}
