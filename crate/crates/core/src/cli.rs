//! Command-line driver: MAP and network denoising, training, Lipschitz
//! certification, PnP deblurring, and bit-exact replay from a run manifest.
//!
//! Exit codes: 0 success, 1 numerical failure, 2 usage or validation error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::{psnr, Dataset};
use crate::io::{load_kernel, read_image, write_image, BitDepth, RunManifest};
use crate::linops::{spectral_norm, ConvStack, FiniteDifference, LinearOperator, PowerConfig};
use crate::pnn::{pnn_forward, ArchKind, PnnModel, VariantKind};
use crate::pnp::{beta_sweep, pnp_fb, residual_monotonicity, PnpConfig};
use crate::prox::BoxConstraint;
use crate::rng;
use crate::robustness::{
    jacobian_spectral_norm, lipschitz_estimate, lipschitz_product_bound, Reflected,
    RobustnessReport, ScaledIdentity, Target,
};
use crate::solvers::{difb_schedule, difb_solve, sccp_schedule, sccp_solve};
use crate::tensor::Image;
use crate::train::{train, NoiseSetting, TrainConfig};

/// Weights argument selecting the `½·Id` stub denoiser in `certify`.
pub const HALF_IDENTITY_STUB: &str = "stub:half-identity";

#[derive(Parser, Debug)]
#[command(
    name = "proxnn",
    version,
    about = "Proximal denoising solvers and unfolded primal-dual networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// MAP denoising with a proximal splitting solver
    DenoiseMap(DenoiseMapArgs),
    /// Denoising with a trained network
    Denoise(DenoiseArgs),
    /// Train a network on clean images
    Train(TrainArgs),
    /// Per-sample Jacobian norms and the layerwise product bound
    Certify(CertifyArgs),
    /// Plug-and-play forward-backward deblurring
    Pnp(PnpArgs),
    /// Re-run a command from its run manifest
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Serialize)]
struct DenoiseMapArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "dfb", value_parser = ["dfb", "difb", "cp", "sccp"])]
    solver: String,
    #[arg(long)]
    nu: f64,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    /// Relative primal-change stopping threshold (0 runs all iterations)
    #[arg(long, default_value_t = 0.0)]
    tol: f64,
    /// "grad" (finite differences) or a weights file whose layer supplies D
    #[arg(long, default_value = "grad")]
    filters: String,
    /// Layer of the weights file used as D
    #[arg(long, default_value_t = 0)]
    layer: usize,
    /// Constraint box "lo,hi" or "none"
    #[arg(long = "box", default_value = "0,1")]
    bounds: String,
    /// Initial primal weight of the CP schedules
    #[arg(long, default_value_t = 1.0)]
    mu0: f64,
    /// Inertia parameter of the accelerated dual scheme
    #[arg(long, default_value_t = 3.0)]
    a: f64,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 8, value_parser = depth_parser())]
    depth: u8,
}

#[derive(Args, Debug, Serialize)]
#[command(group(clap::ArgGroup::new("level").required(true).args(["nu", "delta"])))]
struct DenoiseArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    nu: Option<f64>,
    /// Noise level δ; uses ν = δ²
    #[arg(long)]
    delta: Option<f64>,
    /// Clean reference for PSNR reporting
    #[arg(long)]
    clean: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 8, value_parser = depth_parser())]
    depth: u8,
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[arg(long, value_parser = ["ddfb", "ddifb", "dcp", "dsccp"])]
    arch: String,
    #[arg(long, value_parser = ["lno", "lfo"])]
    variant: String,
    #[arg(long = "K", default_value_t = 5)]
    k: usize,
    #[arg(long = "J", default_value_t = 8)]
    j: usize,
    /// Constraint box of the network "lo,hi" or "none"
    #[arg(long = "box", default_value = "0,1")]
    bounds: String,
    /// "synth:N", a directory of images, or a dataset manifest (.json)
    #[arg(long, default_value = "synth:200")]
    data: String,
    /// Side of synthetic images
    #[arg(long, default_value_t = 32)]
    size: usize,
    /// "fixed:δ" or "uniform:lo,hi"
    #[arg(long, default_value = "fixed:0.08")]
    setting: String,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 32)]
    patch: usize,
    /// Held-out synthetic images for the final evaluation
    #[arg(long, default_value_t = 40)]
    holdout: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct CertifyArgs {
    /// Weights file, or "stub:half-identity"
    #[arg(long)]
    weights: String,
    /// "synth:N", a directory of images, or a dataset manifest (.json)
    #[arg(long, default_value = "synth:20")]
    data: String,
    #[arg(long, default_value_t = 32)]
    size: usize,
    /// Noise level of the probe inputs; ν = δ²
    #[arg(long, default_value_t = 0.08)]
    delta: f64,
    #[arg(long, default_value = "f", value_parser = ["f", "h"])]
    target: String,
    #[arg(long, default_value_t = 20)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    power_tol: f64,
    #[arg(long, default_value_t = 5000)]
    power_iters: usize,
    /// Per-sample report CSV
    #[arg(long)]
    out: PathBuf,
    /// JSON summary (default: report path with .json)
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct PnpArgs {
    #[arg(long)]
    y: PathBuf,
    /// Built-in kernel name (delta, uniform3, gauss5-1.0, ...) or a text file
    #[arg(long)]
    kernel: String,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Comma-separated β grid; needs --truth
    #[arg(long)]
    beta_sweep: Option<String>,
    /// "auto" (1.99/‖A‖²) or a value
    #[arg(long, default_value = "auto")]
    gamma: String,
    #[arg(long, default_value_t = 500)]
    iters: usize,
    #[arg(long, default_value = "auto", value_parser = ["on", "off", "auto"])]
    warm: String,
    /// Allow γ ≥ 2/‖A‖²
    #[arg(long)]
    unsafe_gamma: bool,
    /// Stop once the residual drops below stop·‖y‖
    #[arg(long)]
    stop: Option<f64>,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 8, value_parser = depth_parser())]
    depth: u8,
}

#[derive(Args, Debug, Serialize)]
struct ReplayArgs {
    manifest: PathBuf,
}

fn depth_parser() -> clap::builder::RangedI64ValueParser<u8> {
    clap::value_parser!(u8).range(8..=16)
}

fn bit_depth(d: u8) -> Result<BitDepth> {
    match d {
        8 => Ok(BitDepth::Eight),
        16 => Ok(BitDepth::Sixteen),
        _ => Err(Error::Parameter(format!("bit depth {d} must be 8 or 16"))),
    }
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Training { .. } | Error::Precondition(_) => 1,
        _ => 2,
    }
}

/// Caps the global worker pool at `PROXNN_THREADS` when set.
fn init_threads() {
    if let Some(n) = std::env::var("PROXNN_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        if n > 0 {
            // already-initialized pools keep their size
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
}

/// Parses `argv` (program name first), runs the command, returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    init_threads();
    let rest: Vec<String> = argv
        .iter()
        .skip(1)
        .map(|s| s.to_string_lossy().into_owned())
        .collect();
    match dispatch(cli.command, rest) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Training { dump: Some(p), .. } = &e {
                eprintln!("model state written to {}", p.display());
            }
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command, argv: Vec<String>) -> Result<()> {
    match cmd {
        Command::DenoiseMap(a) => denoise_map(&a, argv),
        Command::Denoise(a) => denoise(&a, argv),
        Command::Train(a) => cmd_train(&a, argv),
        Command::Certify(a) => certify(&a, argv),
        Command::Pnp(a) => pnp(&a, argv),
        Command::Replay(a) => replay(&a),
    }
}

/// `out` with its extension replaced by `ext`.
fn sibling(out: &Path, ext: &str) -> PathBuf {
    out.with_extension(ext)
}

/// Writes the manifest before any computation.
fn start<A: Serialize>(
    command: &str,
    argv: Vec<String>,
    args: &A,
    out: &Path,
    manifest: &Option<PathBuf>,
    inputs: &[&Path],
    seeds: &[(&str, u64)],
) -> Result<()> {
    let cwd = std::env::current_dir().map_err(|e| Error::io(".", e))?;
    let config = serde_json::json!({ "args": args, "cwd": cwd });
    let mut m = RunManifest::new(command, argv, config);
    for p in inputs {
        m.record_input(p)?;
    }
    for (k, v) in seeds {
        m.seeds.insert((*k).into(), *v);
    }
    m.write(
        &manifest
            .clone()
            .unwrap_or_else(|| sibling(out, "manifest.json")),
    )
}

fn parse_box(s: &str) -> Result<BoxConstraint> {
    if s == "none" {
        return Ok(BoxConstraint::unbounded());
    }
    let (lo, hi) = s
        .split_once(',')
        .ok_or_else(|| Error::Parameter(format!("box {s:?} is not \"lo,hi\"")))?;
    let num = |v: &str| {
        v.trim()
            .parse::<f64>()
            .map_err(|_| Error::Parameter(format!("bad box bound {v:?}")))
    };
    BoxConstraint::new(num(lo)?, num(hi)?)
}

fn parse_setting(s: &str) -> Result<NoiseSetting> {
    let bad = || Error::Parameter(format!("setting {s:?} is not fixed:δ or uniform:lo,hi"));
    let num = |v: &str| v.trim().parse::<f64>().map_err(|_| bad());
    let setting = if let Some(d) = s.strip_prefix("fixed:") {
        NoiseSetting::Fixed(num(d)?)
    } else if let Some(r) = s.strip_prefix("uniform:") {
        let (lo, hi) = r.split_once(',').ok_or_else(bad)?;
        NoiseSetting::Variable(num(lo)?, num(hi)?)
    } else {
        return Err(bad());
    };
    setting.validate()?;
    Ok(setting)
}

/// Representative noise level of a setting (midpoint for ranges).
fn eval_delta(s: NoiseSetting) -> f64 {
    match s {
        NoiseSetting::Fixed(d) => d,
        NoiseSetting::Variable(lo, hi) => 0.5 * (lo + hi),
    }
}

fn synth_count(spec: &str) -> Result<Option<usize>> {
    spec.strip_prefix("synth:")
        .map(|n| {
            n.parse::<usize>()
                .map_err(|_| Error::Parameter(format!("bad synthetic count in {spec:?}")))
        })
        .transpose()
}

/// Loads `synth:N`, a directory, or a dataset manifest.
fn load_data(spec: &str, size: usize, sigma: f64, seed: u64, patch: usize) -> Result<Dataset> {
    if let Some(n) = synth_count(spec)? {
        return Dataset::synthetic(n, size, size, sigma, seed);
    }
    let p = Path::new(spec);
    if p.is_dir() {
        Dataset::from_dir(p, sigma, seed, patch)
    } else {
        Dataset::from_manifest(p, patch)
    }
}

/// File inputs among the data specs (synthetic data has none).
fn data_inputs(spec: &str) -> Vec<&Path> {
    if spec.starts_with("synth:") {
        vec![]
    } else {
        vec![Path::new(spec)]
    }
}

fn denoise_map(a: &DenoiseMapArgs, argv: Vec<String>) -> Result<()> {
    let weights_input = (a.filters != "grad").then(|| Path::new(&a.filters));
    let mut inputs = vec![a.input.as_path()];
    inputs.extend(weights_input);
    start("denoise-map", argv, a, &a.out, &a.manifest, &inputs, &[])?;
    let depth = bit_depth(a.depth)?;
    if !(a.nu >= 0.0) {
        return Err(Error::Parameter(format!("nu {} must be >= 0", a.nu)));
    }
    if a.iters == 0 {
        return Err(Error::Parameter("iters must be positive".into()));
    }
    let c = parse_box(&a.bounds)?;
    let z = read_image(&a.input)?;
    let fd;
    let stack: ConvStack;
    let d: &dyn LinearOperator = match weights_input {
        None => {
            fd = FiniteDifference::gradient();
            &fd
        }
        Some(p) => {
            let m = PnnModel::load(p)?;
            let layer = m.layers.get(a.layer).ok_or_else(|| {
                Error::Parameter(format!(
                    "layer {} out of range (model has {})",
                    a.layer,
                    m.depth()
                ))
            })?;
            stack = layer.d.clone();
            &stack
        }
    };
    let norm = spectral_norm(
        d,
        z.dims(),
        &PowerConfig::default().with_tol(1e-10, 20_000).with_block(4),
    )?
    .norm;
    let sol = match a.solver.as_str() {
        "dfb" | "difb" => {
            let s = difb_schedule(a.a, norm, a.solver == "difb", a.iters)?;
            difb_solve(&z, d, a.nu, &c, &s, a.iters, a.tol)?
        }
        _ => {
            let s = sccp_schedule(a.mu0, norm, a.solver == "sccp", a.iters)?;
            sccp_solve(&z, d, a.nu, &c, &s, a.iters, a.tol)?
        }
    };
    if sol.x.check_finite().is_err() {
        return Err(Error::Precondition(
            "solver produced non-finite values".into(),
        ));
    }
    write_image(&a.out, &sol.x, depth)?;
    sol.trace
        .table()
        .write(&a.trace.clone().unwrap_or_else(|| sibling(&a.out, "csv")))?;
    println!(
        "{} iterations, final objective {:.10e}",
        sol.trace.len(),
        sol.trace.objective.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn denoise(a: &DenoiseArgs, argv: Vec<String>) -> Result<()> {
    let mut inputs = vec![a.input.as_path(), a.weights.as_path()];
    inputs.extend(a.clean.as_deref());
    start("denoise", argv, a, &a.out, &a.manifest, &inputs, &[])?;
    let depth = bit_depth(a.depth)?;
    let nu = match (a.nu, a.delta) {
        (Some(nu), _) => nu,
        (None, Some(d)) => d * d,
        (None, None) => unreachable!("clap requires one of --nu/--delta"),
    };
    let model = PnnModel::load(&a.weights)?;
    let z = read_image(&a.input)?;
    let x = pnn_forward(&model, &z, nu)?.x;
    if x.check_finite().is_err() {
        return Err(Error::Precondition(
            "network produced non-finite values".into(),
        ));
    }
    write_image(&a.out, &x, depth)?;
    if let Some(c) = &a.clean {
        let clean = read_image(c)?;
        println!(
            "psnr noisy {:.4} dB, denoised {:.4} dB",
            psnr(&clean, &z)?,
            psnr(&clean, &x)?
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainEval {
    holdout: usize,
    delta: f64,
    psnr_noisy: f64,
    psnr_denoised: f64,
    loss_start: f64,
    loss_end: f64,
}

fn cmd_train(a: &TrainArgs, argv: Vec<String>) -> Result<()> {
    start(
        "train",
        argv,
        a,
        &a.out,
        &a.manifest,
        &data_inputs(&a.data),
        &[("train", a.seed)],
    )?;
    let arch: ArchKind = a.arch.parse().map_err(Error::Parameter)?;
    let variant: VariantKind = a.variant.parse().map_err(Error::Parameter)?;
    let setting = parse_setting(&a.setting)?;
    let delta = eval_delta(setting);
    let data_seed = rng::derive(a.seed, &[10]).random::<u64>();
    let data = load_data(&a.data, a.size, delta, data_seed, a.patch)?;
    let channels = data
        .samples
        .first()
        .map(|s| s.clean.channels())
        .ok_or_else(|| Error::Parameter("empty training set".into()))?;
    let mut model = PnnModel::new(
        arch,
        variant,
        a.k,
        a.j,
        channels,
        a.seed,
        (a.patch, a.patch),
    )?;
    model.bounds = parse_box(&a.bounds)?;
    let cfg = TrainConfig {
        setting,
        epochs: a.epochs,
        batch_size: a.batch,
        patch_size: a.patch,
        lr: a.lr,
        seed: a.seed,
        dump_path: Some(sibling(&a.out, "diverged.pnnw")),
        checkpoint: a.checkpoint.clone(),
    };
    let out = train(&model, &cfg, &data)?;
    out.model.save(&a.out)?;
    out.trace
        .write(&a.trace.clone().unwrap_or_else(|| sibling(&a.out, "csv")))?;

    let holdout = if synth_count(&a.data)?.is_some() {
        Dataset::synthetic(
            a.holdout,
            a.size,
            a.size,
            delta,
            rng::derive(a.seed, &[11]).random::<u64>(),
        )?
    } else {
        data
    };
    let nu = delta * delta;
    let scores = holdout
        .samples
        .par_iter()
        .map(|s| {
            Ok((
                psnr(&s.clean, &s.noisy)?,
                psnr(&s.clean, &pnn_forward(&out.model, &s.noisy, nu)?.x)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = scores.len().max(1) as f64;
    let eval = TrainEval {
        holdout: scores.len(),
        delta,
        psnr_noisy: scores.iter().map(|s| s.0).sum::<f64>() / n,
        psnr_denoised: scores.iter().map(|s| s.1).sum::<f64>() / n,
        loss_start: out.losses.first().copied().unwrap_or(f64::NAN),
        loss_end: out.losses.last().copied().unwrap_or(f64::NAN),
    };
    let json = serde_json::to_string_pretty(&eval).expect("plain numbers serialize");
    crate::io::write_atomic(&sibling(&a.out, "eval.json"), json.as_bytes())?;
    println!(
        "held-out psnr: noisy {:.4} dB, denoised {:.4} dB ({} images)",
        eval.psnr_noisy, eval.psnr_denoised, eval.holdout
    );
    Ok(())
}

#[derive(Serialize)]
struct CertifySummary<'a> {
    target: Target,
    samples: usize,
    #[serde(flatten)]
    summary: &'a crate::robustness::RobustnessSummary,
    /// Layerwise bound on the Lipschitz constant of the target map.
    product_bound: f64,
    all_converged: bool,
}

/// The `½·Id` stub: `f` has norm ½ and `2f − Id` vanishes.
fn stub_report(
    samples: &[(Image, f64)],
    target: Target,
    cfg: &PowerConfig,
) -> Result<(RobustnessReport, f64)> {
    let mut norms = Vec::new();
    let mut conv = Vec::new();
    for (z, _) in samples {
        let f = ScaledIdentity {
            dims: z.dims(),
            scale: 0.5,
        };
        let r = match target {
            Target::F => jacobian_spectral_norm(&f, cfg)?,
            Target::H => jacobian_spectral_norm(&Reflected(f), cfg)?,
        };
        norms.push(r.norm);
        conv.push(r.converged);
    }
    let bound = match target {
        Target::F => 0.5,
        Target::H => 0.0,
    };
    Ok((RobustnessReport::from_norms(target, norms, conv)?, bound))
}

fn certify(a: &CertifyArgs, argv: Vec<String>) -> Result<()> {
    let stub = a.weights == HALF_IDENTITY_STUB;
    let mut inputs = data_inputs(&a.data);
    if !stub {
        inputs.push(Path::new(&a.weights));
    }
    start(
        "certify",
        argv,
        a,
        &a.out,
        &a.manifest,
        &inputs,
        &[("certify", a.seed)],
    )?;
    let target = if a.target == "h" {
        Target::H
    } else {
        Target::F
    };
    let data = load_data(
        &a.data,
        a.size,
        a.delta,
        rng::derive(a.seed, &[20]).random::<u64>(),
        a.size,
    )?;
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut rng::derive(a.seed, &[21]));
    idx.truncate(a.samples);
    idx.sort_unstable();
    let samples: Vec<(Image, f64)> = idx
        .iter()
        .map(|&i| {
            (
                data.samples[i].noisy.clone(),
                data.samples[i].sigma * data.samples[i].sigma,
            )
        })
        .collect();
    let cfg = PowerConfig {
        seed: a.seed,
        ..PowerConfig::default().with_tol(a.power_tol, a.power_iters)
    };
    let (report, bound) = if stub {
        stub_report(&samples, target, &cfg)?
    } else {
        let model = PnnModel::load(Path::new(&a.weights))?;
        let f_bound = lipschitz_product_bound(&model)?;
        let bound = match target {
            Target::F => f_bound,
            Target::H => 2.0 * f_bound + 1.0,
        };
        (lipschitz_estimate(&model, &samples, target, &cfg)?, bound)
    };
    report.table().write(&a.out)?;
    let summary = CertifySummary {
        target,
        samples: report.norms.len(),
        summary: &report.summary,
        product_bound: bound,
        all_converged: report.converged.iter().all(|&c| c),
    };
    let json = serde_json::to_string_pretty(&summary).expect("plain numbers serialize");
    crate::io::write_atomic(
        &a.summary.clone().unwrap_or_else(|| sibling(&a.out, "json")),
        json.as_bytes(),
    )?;
    println!(
        "max {:.6e}, median {:.6e}, product bound {:.6e}",
        report.summary.max, report.summary.median, bound
    );
    Ok(())
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parameter(format!("bad number {v:?} in list")))
        })
        .collect()
}

fn pnp(a: &PnpArgs, argv: Vec<String>) -> Result<()> {
    let kernel_path = Path::new(&a.kernel);
    let mut inputs = vec![a.y.as_path(), a.weights.as_path()];
    if kernel_path.is_file() {
        inputs.push(kernel_path);
    }
    inputs.extend(a.truth.as_deref());
    start("pnp", argv, a, &a.out, &a.manifest, &inputs, &[])?;
    let depth = bit_depth(a.depth)?;
    let gamma =
        match a.gamma.as_str() {
            "auto" => None,
            g => Some(g.parse::<f64>().map_err(|_| {
                Error::Parameter(format!("gamma {g:?} is neither auto nor a number"))
            })?),
        };
    let kernel = load_kernel(&a.kernel)?;
    let model = PnnModel::load(&a.weights)?;
    let y = read_image(&a.y)?;
    let truth = a.truth.as_deref().map(read_image).transpose()?;
    let mut cfg = PnpConfig {
        gamma,
        beta: a.beta,
        sigma: a.sigma,
        iters: a.iters,
        warm: match a.warm.as_str() {
            "on" => Some(true),
            "off" => Some(false),
            _ => None,
        },
        unsafe_gamma: a.unsafe_gamma,
        stop: a.stop,
        ..PnpConfig::default()
    };
    if let Some(grid) = &a.beta_sweep {
        let grid = parse_list(grid)?;
        let truth = truth
            .as_ref()
            .ok_or_else(|| Error::Parameter("--beta-sweep needs --truth".into()))?;
        let sweep = beta_sweep(&y, &kernel, &cfg, &model, &grid, truth)?;
        sweep.table().write(&sibling(&a.out, "sweep.csv"))?;
        for (b, p) in &sweep.rows {
            println!(
                "beta {b}: psnr {p:.4} dB{}",
                if *b == sweep.best { " (best)" } else { "" }
            );
        }
        cfg.beta = sweep.best;
    }
    let (x, trace) = pnp_fb(&y, &kernel, &cfg, &model, truth.as_ref())?;
    if x.check_finite().is_err() {
        return Err(Error::Precondition("PnP iterates became non-finite".into()));
    }
    write_image(&a.out, &x, depth)?;
    trace
        .table()
        .write(&a.trace.clone().unwrap_or_else(|| sibling(&a.out, "csv")))?;
    let (mono, first) = residual_monotonicity(&trace, 0.0);
    println!(
        "gamma {:.6e}, nu {:.6e}, {} iterations, residuals monotone: {}",
        trace.gamma,
        trace.nu,
        trace.len(),
        if mono {
            "yes".to_string()
        } else {
            format!("no (first at {})", first.unwrap_or(0))
        }
    );
    if let (Some(t), Some(p)) = (&truth, trace.final_psnr()) {
        println!("psnr observed {:.4} dB, restored {:.4} dB", psnr(t, &y)?, p);
    }
    Ok(())
}

fn replay(a: &ReplayArgs) -> Result<()> {
    let m = RunManifest::read(&a.manifest)?;
    if m.command == "replay" {
        return Err(Error::Parameter(
            "a replay manifest cannot be replayed".into(),
        ));
    }
    if let Some(cwd) = m.config.get("cwd").and_then(|v| v.as_str()) {
        std::env::set_current_dir(cwd).map_err(|e| Error::io(cwd, e))?;
    }
    for (path, digest) in &m.inputs {
        let mut check = RunManifest::new("", vec![], serde_json::Value::Null);
        check.record_input(Path::new(path))?;
        if check.inputs.get(path) != Some(digest) {
            return Err(Error::Domain(format!(
                "input {path} changed since the manifest was written"
            )));
        }
    }
    let mut argv = vec![m.tool.clone()];
    argv.extend(m.argv.iter().cloned());
    let cli = Cli::try_parse_from(&argv)
        .map_err(|e| Error::Format(format!("manifest arguments: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(Error::Parameter(
            "a replay manifest cannot be replayed".into(),
        ));
    }
    dispatch(cli.command, m.argv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_parsers() {
        assert_eq!(parse_box("0,1").unwrap(), BoxConstraint::default());
        assert_eq!(parse_box("none").unwrap(), BoxConstraint::unbounded());
        assert!(parse_box("1").is_err());
        assert!(parse_box("1,0").is_err());
        assert_eq!(
            parse_setting("fixed:0.08").unwrap(),
            NoiseSetting::Fixed(0.08)
        );
        assert_eq!(
            parse_setting("uniform:0.01,0.1").unwrap(),
            NoiseSetting::Variable(0.01, 0.1)
        );
        assert!(parse_setting("uniform:0.1,0.01").is_err());
        assert!(parse_setting("gauss:1").is_err());
        assert_eq!(parse_list("0.6, 0.8,1").unwrap(), vec![0.6, 0.8, 1.0]);
        assert_eq!(synth_count("synth:12").unwrap(), Some(12));
        assert!(synth_count("synth:x").is_err());
        assert_eq!(synth_count("dir").unwrap(), None);
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(
            run(["proxnn", "denoise-map", "--out", "x.png", "--nu", "0.1"]),
            2
        );
        assert_eq!(
            run([
                "proxnn",
                "train",
                "--arch",
                "resnet",
                "--variant",
                "lno",
                "--out",
                "w"
            ]),
            2
        );
        assert_eq!(run(["proxnn", "bogus"]), 2);
        assert_eq!(run(["proxnn", "--help"]), 0);
    }

    #[test]
    fn error_classes() {
        assert_eq!(exit_code(&Error::Parameter("x".into())), 2);
        assert_eq!(
            exit_code(&Error::Training {
                message: "nan".into(),
                dump: None
            }),
            1
        );
    }
}
