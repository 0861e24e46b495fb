use crate::error::Result;
use crate::rng;
use crate::tensor::Tensor;

use super::operator::random_normal;
use super::LinearOperator;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PowerConfig {
    /// Stop once successive estimates differ by less than `tol·σ`.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Subspace size; above 1 the iteration keeps an orthonormal block and
    /// extracts the leading pair by Rayleigh–Ritz, which converges much
    /// faster when the top singular values are nearly degenerate.
    pub block: usize,
}

impl Default for PowerConfig {
    fn default() -> Self {
        PowerConfig {
            tol: 1e-6,
            max_iter: 500,
            seed: 0,
            block: 1,
        }
    }
}

impl PowerConfig {
    pub fn with_tol(self, tol: f64, max_iter: usize) -> Self {
        PowerConfig {
            tol,
            max_iter,
            ..self
        }
    }

    pub fn with_block(self, block: usize) -> Self {
        PowerConfig { block, ..self }
    }
}

/// Largest singular value with its singular pair: `op(right) = norm·left`.
#[derive(Clone, Debug)]
pub struct SpectralNorm {
    pub norm: f64,
    pub left: Tensor,
    pub right: Tensor,
    pub converged: bool,
    pub iterations: usize,
}

/// Power iteration on `op*·op` from a seeded Gaussian start.
///
/// A start that lands in the null space is retried once with another seed;
/// a zero operator yields norm 0 with zero vectors.
pub fn spectral_norm(
    op: &dyn LinearOperator,
    input: (usize, usize, usize),
    cfg: &PowerConfig,
) -> Result<SpectralNorm> {
    let mut first = None;
    for attempt in 0..2u64 {
        let start = random_normal(input, &mut rng::stream(cfg.seed, attempt));
        let res = spectral_norm_from(op, start, cfg)?;
        if res.norm > 0.0 {
            return Ok(res);
        }
        first.get_or_insert(res);
    }
    Ok(first.expect("two attempts"))
}

/// Power iteration from a given start vector (warm start).
pub fn spectral_norm_from(
    op: &dyn LinearOperator,
    start: Tensor,
    cfg: &PowerConfig,
) -> Result<SpectralNorm> {
    if cfg.block > 1 && start.len() > 1 {
        return block_iteration(op, start, cfg);
    }
    let zero = |v: &Tensor, w: Result<Tensor>| -> Result<SpectralNorm> {
        Ok(SpectralNorm {
            norm: 0.0,
            left: w?.zeros_like(),
            right: v.zeros_like(),
            converged: true,
            iterations: 0,
        })
    };
    let n0 = start.norm();
    if n0 == 0.0 || !n0.is_finite() {
        let w = op.apply(&start);
        return zero(&start, w);
    }
    let mut v = start.scaled(1.0 / n0);
    let mut prev = 0.0;
    let mut sigma;
    let mut w;
    let mut it = 0;
    loop {
        it += 1;
        w = op.apply(&v)?;
        sigma = w.norm();
        if sigma == 0.0 {
            return zero(&v, Ok(w));
        }
        let converged = it > 1 && (sigma - prev).abs() <= cfg.tol * sigma;
        if converged || it >= cfg.max_iter.max(1) {
            let left = w.scaled(1.0 / sigma);
            return Ok(SpectralNorm {
                norm: sigma,
                left,
                right: v,
                converged,
                iterations: it,
            });
        }
        let s = op.adjoint(&w)?;
        let ns = s.norm();
        if ns == 0.0 {
            return zero(&v, Ok(w));
        }
        v = s.scaled(1.0 / ns);
        prev = sigma;
    }
}

/// Modified Gram–Schmidt; drops vectors that become numerically dependent.
fn orthonormalize(vs: Vec<Tensor>) -> Vec<Tensor> {
    let mut out: Vec<Tensor> = Vec::with_capacity(vs.len());
    for mut v in vs {
        let n0 = v.norm();
        for q in &out {
            let c = q.dot(&v);
            v.axpy(-c, q);
        }
        let n = v.norm();
        if n > 1e-10 * n0 && n > 0.0 {
            v.scale(1.0 / n);
            out.push(v);
        }
    }
    out
}

fn combine(vs: &[Tensor], coef: impl Fn(usize) -> f64) -> Tensor {
    let mut out = vs[0].zeros_like();
    for (i, v) in vs.iter().enumerate() {
        out.axpy(coef(i), v);
    }
    out
}

fn block_iteration(
    op: &dyn LinearOperator,
    start: Tensor,
    cfg: &PowerConfig,
) -> Result<SpectralNorm> {
    let dims = start.dims();
    let b = cfg.block.min(start.len());
    let mut r = rng::stream(cfg.seed, 0xB10C);
    let mut vs = vec![start];
    vs.extend((1..b).map(|_| random_normal(dims, &mut r)));
    let mut vs = orthonormalize(vs);
    if vs.is_empty() {
        vs = orthonormalize(vec![random_normal(dims, &mut r)]);
    }
    let mut prev = 0.0;
    let mut it = 0;
    loop {
        it += 1;
        let ws = vs.iter().map(|v| op.apply(v)).collect::<Result<Vec<_>>>()?;
        let m = vs.len();
        let gram = nalgebra::DMatrix::from_fn(m, m, |i, j| ws[i].dot(&ws[j]));
        let eig = gram.symmetric_eigen();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let sigma = eig.eigenvalues[order[0]].max(0.0).sqrt();
        let ritz: Vec<Tensor> = order
            .iter()
            .map(|&c| combine(&vs, |i| eig.eigenvectors[(i, c)]))
            .collect();
        let converged = it > 1 && (sigma - prev).abs() <= cfg.tol * sigma;
        if sigma == 0.0 || converged || it >= cfg.max_iter.max(1) {
            let v = ritz[0].scaled(1.0 / ritz[0].norm());
            let w = op.apply(&v)?;
            let norm = w.norm();
            if norm == 0.0 {
                return Ok(SpectralNorm {
                    norm: 0.0,
                    left: w,
                    right: v.zeros_like(),
                    converged: true,
                    iterations: it,
                });
            }
            return Ok(SpectralNorm {
                norm,
                left: w.scaled(1.0 / norm),
                right: v,
                converged,
                iterations: it,
            });
        }
        let next = ritz
            .iter()
            .map(|v| op.adjoint(&op.apply(v)?))
            .collect::<Result<Vec<_>>>()?;
        vs = orthonormalize(next);
        if vs.is_empty() {
            vs = orthonormalize(vec![random_normal(dims, &mut r)]);
        }
        prev = sigma;
    }
}
