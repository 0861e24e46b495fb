//! Acceptance suite: one PASS/FAIL line per criterion, at the stated
//! tolerances. Run with `cargo test --test acceptance -- --nocapture`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use proxnn::image::{add_noise, psnr, synth_cartoon, Dataset, NoiseSpec};
use proxnn::io::{write_image, BitDepth};
use proxnn::linops::{
    adjoint_residual, adjoint_residual_op, spectral_norm, AdjointPolicy, BlurKernel, ConvStack,
    FiniteDifference, PowerConfig,
};
use proxnn::pnn::{param_count, pnn_forward, ArchKind, PnnModel, VariantKind};
use proxnn::pnp::{pnp_fb, residual_monotonicity, PnpConfig};
use proxnn::prox::{hardtanh, prox_quadratic_box, soft_threshold, BoxConstraint};
use proxnn::robustness::{
    jacobian_adjoint_apply, jacobian_apply, jacobian_spectral_norm, lipschitz_product_bound,
    JacobianProbe, LocalLinearMap,
};
use proxnn::solvers::{difb_schedule, difb_solve, objective, sccp_schedule, sccp_solve};
use proxnn::train::{grad_check, linear_regime_check, smoothed, train, TrainConfig};
use proxnn::{Image, Tensor};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn verdict(n: usize, ok: bool, detail: String) {
    println!(
        "criterion {n:>2}: {}  {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {n} failed: {detail}");
}

fn combos() -> Vec<(ArchKind, VariantKind)> {
    ArchKind::ALL
        .into_iter()
        .flat_map(|a| VariantKind::ALL.into_iter().map(move |v| (a, v)))
        .collect()
}

fn gauss(seed: u64, d: (usize, usize, usize)) -> Tensor {
    let mut r = proxnn::rng::rng(seed);
    Tensor::from_vec(
        d.0,
        d.1,
        d.2,
        (0..d.0 * d.1 * d.2)
            .map(|_| StandardNormal.sample(&mut r))
            .collect(),
    )
    .unwrap()
}

fn uniform_image(seed: u64, h: usize, w: usize) -> Image {
    let mut r = proxnn::rng::rng(seed);
    Tensor::from_vec(1, h, w, (0..h * w).map(|_| r.random::<f64>()).collect()).unwrap()
}

fn noisy(seed: u64, h: usize, delta: f64) -> Image {
    add_noise(
        &synth_cartoon(h, h, seed).unwrap(),
        &NoiseSpec::gaussian(delta, seed + 500),
    )
    .unwrap()
}

fn tight() -> PowerConfig {
    PowerConfig::default()
        .with_tol(1e-14, 100_000)
        .with_block(4)
}

#[test]
fn c01_parameter_counts() {
    use ArchKind::*;
    use VariantKind::*;
    let want = [
        (Ddfb, Lno, 34_560),
        (Dcp, Lno, 34_561),
        (Dsccp, Lno, 34_580),
        (Ddfb, Lfo, 69_120),
        (Ddifb, Lfo, 69_121),
        (Dsccp, Lfo, 69_160),
    ];
    let got: Vec<_> = want
        .iter()
        .map(|&(a, v, _)| param_count(a, v, 20, 64, 3))
        .collect();
    let ok = want.iter().zip(&got).all(|(w, g)| w.2 == *g);
    verdict(1, ok, format!("{got:?}"));
}

#[test]
fn c02_map_oracle() {
    let z = Tensor::from_vec(1, 1, 2, vec![1.0, 0.0]).unwrap();
    let d = FiniteDifference::horizontal();
    let c = BoxConstraint::default();
    let nu = 0.25;
    let n = spectral_norm(&d, z.dims(), &tight()).unwrap().norm;
    let want = Tensor::from_vec(1, 1, 2, vec![0.75, 0.25]).unwrap();
    let dfb = difb_solve(
        &z,
        &d,
        nu,
        &c,
        &difb_schedule(3.0, n, false, 2000).unwrap(),
        2000,
        0.0,
    )
    .unwrap();
    let cp = sccp_solve(
        &z,
        &d,
        nu,
        &c,
        &sccp_schedule(1.0, n, false, 2000).unwrap(),
        2000,
        0.0,
    )
    .unwrap();
    let acc = sccp_solve(
        &z,
        &d,
        nu,
        &c,
        &sccp_schedule(1.0, n, true, 2000).unwrap(),
        2000,
        0.0,
    )
    .unwrap();
    let (e1, e2) = (dfb.x.max_abs_diff(&want), cp.x.max_abs_diff(&want));
    let f = objective(&dfb.x, &z, &d, nu, &c).unwrap();
    let ok = e1 <= 1e-6 && e2 <= 1e-6 && (f - 0.1875).abs() <= 1e-9;
    verdict(
        2,
        ok,
        format!(
            "dfb err {e1:.1e}, sccp_solve (cp schedule) err {e2:.1e}, F = {f:.12}; accelerated schedule err {:.1e} (info)",
            acc.x.max_abs_diff(&want)
        ),
    );
}

struct Instance {
    z: Image,
    d: ConvStack,
    n: f64,
}

fn instance(seed: u64) -> Instance {
    let z = uniform_image(seed, 8, 8);
    let d = ConvStack::random(4, 1, 100 + seed);
    let n = spectral_norm(&d, z.dims(), &tight()).unwrap().norm;
    Instance { z, d, n }
}

#[test]
fn c03_cross_solver_agreement() {
    let (k, nu, c) = (5000, 0.05, BoxConstraint::default());
    let mut worst = 0.0f64;
    let mut worst_cp = 0.0f64;
    for seed in 0..20 {
        let i = instance(seed);
        let dfb = difb_solve(
            &i.z,
            &i.d,
            nu,
            &c,
            &difb_schedule(3.0, i.n, false, k).unwrap(),
            k,
            0.0,
        )
        .unwrap();
        let sccp = sccp_solve(
            &i.z,
            &i.d,
            nu,
            &c,
            &sccp_schedule(1.0, i.n, true, k).unwrap(),
            k,
            0.0,
        )
        .unwrap();
        let cp = sccp_solve(
            &i.z,
            &i.d,
            nu,
            &c,
            &sccp_schedule(1.0, i.n, false, k).unwrap(),
            k,
            0.0,
        )
        .unwrap();
        worst = worst.max(dfb.x.max_abs_diff(&sccp.x));
        worst_cp = worst_cp.max(dfb.x.max_abs_diff(&cp.x));
    }
    verdict(
        3,
        worst <= 1e-5,
        format!(
            "max |dfb - sccp| = {worst:.2e} (need 1e-5); plain cp schedule {worst_cp:.2e} (info)"
        ),
    );
}

#[test]
fn c04_unrolled_limit() {
    let (k, nu, c) = (2000, 0.05, BoxConstraint::default());
    let mut e_dfb = 0.0f64;
    let mut e_sccp = 0.0f64;
    let mut e_same_k = 0.0f64;
    for seed in 0..5 {
        let i = instance(seed);
        let mut m = PnnModel::tied(ArchKind::Ddfb, &i.d, k, (8, 8)).unwrap();
        m.norm_config = tight();
        m.reset_norms().unwrap();
        let n = m.layers[0].norm;
        let net = pnn_forward(&m, &i.z, nu).unwrap().x;
        let dfb = difb_solve(
            &i.z,
            &i.d,
            nu,
            &c,
            &difb_schedule(3.0, n, false, k).unwrap(),
            k,
            0.0,
        )
        .unwrap();
        e_dfb = e_dfb.max(net.max_abs_diff(&dfb.x));

        let sch = sccp_schedule(1.0, n, true, k).unwrap();
        let mut s = PnnModel::tied(ArchKind::Dsccp, &i.d, k, (8, 8)).unwrap();
        s.norm_config = tight();
        s.reset_norms().unwrap();
        s.log_mu = sch.steps.iter().map(|st| st.mu.ln()).collect();
        let net = pnn_forward(&s, &i.z, nu).unwrap().x;
        let big = 50_000;
        let map = sccp_solve(
            &i.z,
            &i.d,
            nu,
            &c,
            &sccp_schedule(1.0, n, false, big).unwrap(),
            big,
            0.0,
        )
        .unwrap();
        e_sccp = e_sccp.max(net.max_abs_diff(&map.x));
        let same = sccp_solve(&i.z, &i.d, nu, &c, &sch, k, 0.0).unwrap();
        e_same_k = e_same_k.max(net.max_abs_diff(&same.x));
    }
    verdict(
        4,
        e_dfb <= 1e-4 && e_sccp <= 1e-4,
        format!(
            "ddfb-lno vs difb_solve {e_dfb:.1e}; dsccp-lno vs converged sccp_solve {e_sccp:.1e}; \
             vs same-K accelerated sccp_solve {e_same_k:.1e} (info)"
        ),
    );
}

#[test]
fn c05_gradient_correctness() {
    let mut worst = 0.0f64;
    let mut worst_lin = 0.0f64;
    let mut lines = Vec::new();
    for (a, v) in combos() {
        let mut w = 0.0f64;
        let mut checked = 0;
        for seed in 0..20 {
            let m = PnnModel::new(a, v, 3, 4, 1, seed, (8, 8)).unwrap();
            let z = add_noise(
                &synth_cartoon(8, 8, seed).unwrap(),
                &NoiseSpec::gaussian(0.1, seed),
            )
            .unwrap();
            let r = grad_check(&m, &z, 0.01, seed, 1e-5).unwrap();
            w = w.max(r.max_rel_err);
            checked += r.checked;
            worst_lin = worst_lin.max(linear_regime_check(&m, &z, seed).unwrap());
        }
        worst = worst.max(w);
        lines.push(format!("{a}-{v} {w:.1e}/{checked}"));
    }
    verdict(
        5,
        worst <= 1e-4 && worst_lin <= 1e-9,
        format!(
            "max rel err {worst:.2e}, linear regime {worst_lin:.2e} [{}]",
            lines.join(", ")
        ),
    );
}

fn dense(p: &dyn LocalLinearMap) -> DMatrix<f64> {
    let d = p.dims();
    let n = d.0 * d.1 * d.2;
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut e = Tensor::zeros(d.0, d.1, d.2);
        e.data_mut()[i] = 1.0;
        for (r, v) in p.apply(&e).unwrap().data().iter().enumerate() {
            m[(r, i)] = *v;
        }
    }
    m
}

#[test]
fn c06_jacobian_power_iteration() {
    let cs = combos();
    let mut worst = 0.0f64;
    let mut worst_adj = 0.0f64;
    for seed in 0..10u64 {
        let (a, v) = cs[seed as usize % cs.len()];
        let m = PnnModel::new(a, v, 3, 4, 1, seed, (8, 8)).unwrap();
        let z = noisy(seed, 8, 0.08);
        let p = JacobianProbe::new(&m, &z, 0.0064).unwrap();
        let svd = dense(&p)
            .singular_values()
            .iter()
            .fold(0.0f64, |x, &y| x.max(y));
        let est = jacobian_spectral_norm(&p, &PowerConfig::default().with_tol(1e-12, 20_000))
            .unwrap()
            .norm;
        worst = worst.max((est - svd).abs() / svd.max(1e-300));
        let (x, w) = (gauss(seed, z.dims()), gauss(seed + 99, z.dims()));
        let l = jacobian_apply(&p, &x).unwrap().dot(&w);
        let r = x.dot(&jacobian_adjoint_apply(&p, &w).unwrap());
        worst_adj = worst_adj.max((l - r).abs() / l.abs().max(r.abs()).max(1.0));
    }
    verdict(
        6,
        worst <= 1e-3 && worst_adj <= 1e-10,
        format!("power vs svd rel err {worst:.1e}, adjoint identity {worst_adj:.1e}"),
    );
}

#[test]
fn c07_product_bound() {
    let cs = combos();
    let mut min_gap = f64::INFINITY;
    let mut ok = true;
    for i in 0..20u64 {
        let (a, v) = cs[i as usize % cs.len()];
        let m = PnnModel::new(a, v, 3, 4, 1, 200 + i, (8, 8)).unwrap();
        let bound = lipschitz_product_bound(&m).unwrap();
        let z = noisy(i, 8, 0.08);
        let p = JacobianProbe::new(&m, &z, 0.0064).unwrap();
        let chi = jacobian_spectral_norm(&p, &PowerConfig::default().with_tol(1e-12, 20_000))
            .unwrap()
            .norm;
        ok &= chi <= bound + 1e-9;
        min_gap = min_gap.min(bound - chi);
    }
    verdict(
        7,
        ok,
        format!("smallest bound - chi over 20 models: {min_gap:.3e}"),
    );
}

#[test]
fn c08_prox_identities() {
    let u = gauss(8, (1, 1000, 1000)).scaled(2.0);
    let mut moreau = 0.0f64;
    for nu in [0.0, 0.1, 0.5, 3.0] {
        let sum = soft_threshold(&u, nu).add(&hardtanh(&u, nu));
        moreau = moreau.max(sum.max_abs_diff(&u));
    }
    let c = BoxConstraint::default();
    let mut r = proxnn::rng::rng(88);
    let mut prox_err = 0.0f64;
    for _ in 0..1000 {
        let v: f64 = r.random_range(-1.0..2.0);
        let z: f64 = r.random_range(-0.5..1.5);
        let mu: f64 = r.random_range(0.01..10.0);
        let got = prox_quadratic_box(
            &Tensor::filled(1, 1, 1, v),
            mu,
            &Tensor::filled(1, 1, 1, z),
            &c,
        )
        .unwrap()
        .data()[0];
        let cost = |x: f64| mu * 0.5 * (x - z) * (x - z) + 0.5 * (x - v) * (x - v);
        let best = (0..=10_000)
            .map(|i| i as f64 * 1e-4)
            .min_by(|a, b| cost(*a).total_cmp(&cost(*b)))
            .unwrap();
        prox_err = prox_err.max((got - best).abs());
    }
    verdict(
        8,
        moreau <= 1e-12 && prox_err <= 1e-3,
        format!("moreau {moreau:.1e} on 1e6 entries, prox vs grid {prox_err:.1e} on 1e3 triples"),
    );
}

#[test]
fn c09_adjoints() {
    let mut conv = 0.0f64;
    let mut blur = 0.0f64;
    for seed in 0..50u64 {
        let d = ConvStack::random(1 + (seed as usize % 8), 1 + (seed as usize % 3), seed);
        conv = conv.max(adjoint_residual(&d, &AdjointPolicy::Tied, 4, seed).unwrap());
        let mut r = proxnn::rng::rng(seed + 1000);
        let size = [1, 3, 5, 7][seed as usize % 4];
        let taps = (0..size * size).map(|_| r.random_range(0.0..1.0)).collect();
        let k = BlurKernel::new(size, size, taps).unwrap();
        blur = blur.max(adjoint_residual_op(&k, (1 + seed as usize % 3, 16, 16), 4, seed).unwrap());
    }
    verdict(
        9,
        conv <= 1e-10 && blur <= 1e-10,
        format!("tied stacks {conv:.1e}, blur kernels {blur:.1e}"),
    );
}

const TRAIN_SEED: u64 = 2024;

struct Trained {
    ddfb: PnnModel,
    dsccp: PnnModel,
    /// (start, end) of the 10-batch smoothed loss.
    loss: [(f64, f64); 2],
}

fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let data = Dataset::synthetic(200, 32, 32, 0.08, TRAIN_SEED).unwrap();
        let cfg = TrainConfig {
            seed: TRAIN_SEED,
            ..TrainConfig::default()
        };
        let run = |a: ArchKind| {
            let m = PnnModel::new(a, VariantKind::Lno, 5, 8, 1, TRAIN_SEED, (32, 32)).unwrap();
            let out = train(&m, &cfg, &data).unwrap();
            let s = smoothed(&out.losses, 10);
            (out.model, (s[0], s[s.len() - 1]))
        };
        let ((ddfb, l0), (dsccp, l1)) =
            rayon::join(|| run(ArchKind::Ddfb), || run(ArchKind::Dsccp));
        Trained {
            ddfb,
            dsccp,
            loss: [l0, l1],
        }
    })
}

fn holdout() -> Dataset {
    Dataset::synthetic(40, 32, 32, 0.08, TRAIN_SEED + 1).unwrap()
}

fn mean_psnr(m: &PnnModel, pairs: &[(Image, Image)], nu: f64) -> (f64, f64) {
    let n = pairs.len() as f64;
    let noisy: f64 = pairs.iter().map(|(c, z)| psnr(c, z).unwrap()).sum::<f64>() / n;
    let den: f64 = pairs
        .iter()
        .map(|(c, z)| psnr(c, &pnn_forward(m, z, nu).unwrap().x).unwrap())
        .sum::<f64>()
        / n;
    (noisy, den)
}

#[test]
fn c10_desk_training() {
    let t = trained();
    let pairs: Vec<_> = holdout()
        .samples
        .into_iter()
        .map(|s| (s.clean, s.noisy))
        .collect();
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, m, (l0, l1)) in [
        ("ddfb-lno", &t.ddfb, t.loss[0]),
        ("dsccp-lno", &t.dsccp, t.loss[1]),
    ] {
        let (noisy, den) = mean_psnr(m, &pairs, 0.08 * 0.08);
        ok &= den >= noisy + 2.0 && l1 < l0;
        parts.push(format!(
            "{name}: {den:.2} dB vs noisy {noisy:.2} dB, smoothed loss {l0:.2e} -> {l1:.2e}"
        ));
    }
    verdict(10, ok, parts.join("; "));
}

#[test]
fn c11_noise_mismatch() {
    let t = trained();
    let spec = |seed| NoiseSpec::laplace_gauss(0.05, 0.04, seed);
    let nu = spec(0).effective_sigma(0.0).powi(2);
    let pairs: Vec<_> = holdout()
        .samples
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let z = add_noise(&s.clean, &spec(7000 + i as u64)).unwrap();
            (s.clean, z)
        })
        .collect();
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, m) in [("ddfb-lno", &t.ddfb), ("dsccp-lno", &t.dsccp)] {
        let (noisy, den) = mean_psnr(m, &pairs, nu);
        ok &= den >= noisy + 1.0;
        parts.push(format!("{name}: {den:.2} dB vs noisy {noisy:.2} dB"));
    }
    verdict(
        11,
        ok,
        format!("laplace-gauss (sigma 0.05, b 0.04): {}", parts.join("; ")),
    );
}

fn deblur_instance(seed: u64) -> (Image, Image, BlurKernel) {
    let a = BlurKernel::builtin("gauss5-1.0").unwrap();
    let clean = synth_cartoon(32, 32, 300 + seed).unwrap();
    let y = add_noise(&a.apply(&clean), &NoiseSpec::gaussian(0.03, 400 + seed)).unwrap();
    (clean, y, a)
}

#[test]
fn c12_pnp_convergent_regime() {
    let m = PnnModel::tied(
        ArchKind::Ddfb,
        &ConvStack::finite_differences(1),
        500,
        (32, 32),
    )
    .unwrap();
    let cfg = PnpConfig {
        sigma: 0.03,
        beta: 1.0,
        iters: 200,
        ..PnpConfig::default()
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for seed in 0..5 {
        let (clean, y, a) = deblur_instance(seed);
        let (_, tr) = pnp_fb(&y, &a, &cfg, &m, Some(&clean)).unwrap();
        let (mono, first) = residual_monotonicity(&tr, 1e-7);
        let (p0, p1) = (psnr(&clean, &y).unwrap(), tr.final_psnr().unwrap());
        ok &= mono && p1 >= p0;
        parts.push(format!(
            "{p0:.2}->{p1:.2} dB{}",
            if mono {
                String::new()
            } else {
                format!(" (violation at {first:?})")
            }
        ));
    }
    verdict(
        12,
        ok,
        format!("monotone residuals within 1e-7; {}", parts.join(", ")),
    );
}

#[test]
fn c13_pnp_trained() {
    let t = trained();
    let cfg = PnpConfig {
        sigma: 0.03,
        beta: 1.0,
        iters: 200,
        ..PnpConfig::default()
    };
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in 0..5 {
        let (clean, y, a) = deblur_instance(seed);
        let (_, tr) = pnp_fb(&y, &a, &cfg, &t.ddfb, Some(&clean)).unwrap();
        let (p0, p1) = (psnr(&clean, &y).unwrap(), tr.final_psnr().unwrap());
        if p1 >= p0 + 1.0 {
            wins += 1;
        }
        let (mono, _) = residual_monotonicity(&tr, 1e-7);
        parts.push(format!("{p0:.2}->{p1:.2} dB (monotone: {mono})"));
    }
    verdict(
        13,
        wins >= 4,
        format!("{wins}/5 seeds gain >= 1 dB; {}", parts.join(", ")),
    );
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            let b = std::fs::read(&p).unwrap();
            (p, b)
        })
        .collect()
}

#[test]
fn c14_replay_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    let clean = synth_cartoon(24, 24, 1).unwrap();
    write_image(Path::new(&p("clean.png")), &clean, BitDepth::Sixteen).unwrap();
    write_image(
        Path::new(&p("z.png")),
        &noisy(1, 24, 0.08),
        BitDepth::Sixteen,
    )
    .unwrap();
    let k = BlurKernel::builtin("gauss5-1.0").unwrap();
    let y = add_noise(&k.apply(&clean), &NoiseSpec::gaussian(0.03, 2)).unwrap();
    write_image(Path::new(&p("y.png")), &y, BitDepth::Sixteen).unwrap();

    let commands: Vec<(&str, Vec<String>)> = vec![
        (
            "denoise-map",
            vec![
                "denoise-map".into(),
                "--in".into(),
                p("z.png"),
                "--out".into(),
                p("map.png"),
                "--solver".into(),
                "sccp".into(),
                "--nu".into(),
                "0.05".into(),
                "--iters".into(),
                "300".into(),
            ],
        ),
        (
            "train",
            vec![
                "train".into(),
                "--arch".into(),
                "dsccp".into(),
                "--variant".into(),
                "lno".into(),
                "--K".into(),
                "3".into(),
                "--J".into(),
                "4".into(),
                "--data".into(),
                "synth:16".into(),
                "--size".into(),
                "16".into(),
                "--patch".into(),
                "16".into(),
                "--epochs".into(),
                "2".into(),
                "--holdout".into(),
                "4".into(),
                "--seed".into(),
                "9".into(),
                "--out".into(),
                p("w.pnnw"),
            ],
        ),
        (
            "denoise",
            vec![
                "denoise".into(),
                "--in".into(),
                p("z.png"),
                "--weights".into(),
                p("w.pnnw"),
                "--delta".into(),
                "0.08".into(),
                "--out".into(),
                p("den.png"),
            ],
        ),
        (
            "certify",
            vec![
                "certify".into(),
                "--weights".into(),
                p("w.pnnw"),
                "--data".into(),
                "synth:6".into(),
                "--size".into(),
                "16".into(),
                "--samples".into(),
                "4".into(),
                "--seed".into(),
                "3".into(),
                "--out".into(),
                p("cert.csv"),
            ],
        ),
        (
            "pnp",
            vec![
                "pnp".into(),
                "--y".into(),
                p("y.png"),
                "--kernel".into(),
                "gauss5-1.0".into(),
                "--weights".into(),
                p("w.pnnw"),
                "--sigma".into(),
                "0.03".into(),
                "--beta-sweep".into(),
                "0.8,1.0".into(),
                "--truth".into(),
                p("clean.png"),
                "--iters".into(),
                "20".into(),
                "--out".into(),
                p("pnp.png"),
            ],
        ),
    ];
    let bin = env!("CARGO_BIN_EXE_proxnn");
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, args) in &commands {
        let first = Command::new(bin).args(args).output().unwrap();
        assert!(
            first.status.success(),
            "{name}: {}",
            String::from_utf8_lossy(&first.stderr)
        );
        let before = snapshot(dir.path());
        let out = args
            .iter()
            .position(|a| a == "--out")
            .map(|i| PathBuf::from(&args[i + 1]))
            .unwrap();
        let manifest = out.with_extension("manifest.json");
        let again = Command::new(bin)
            .arg("replay")
            .arg(&manifest)
            .output()
            .unwrap();
        let same = again.status.success() && snapshot(dir.path()) == before;
        ok &= same;
        parts.push(format!(
            "{name} {}",
            if same { "identical" } else { "DIFFERS" }
        ));
    }
    verdict(14, ok, parts.join(", "));
}
