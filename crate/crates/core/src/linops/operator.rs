use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::rng;
use crate::tensor::Tensor;

type Dims = (usize, usize, usize);

/// A linear map between tensor spaces together with an adjoint-like map.
///
/// `adjoint` is the exact adjoint unless [`LinearOperator::exact_adjoint`]
/// says otherwise (learned untied adjoints).
pub trait LinearOperator {
    fn output_dims(&self, input: Dims) -> Result<Dims>;
    fn apply(&self, x: &Tensor) -> Result<Tensor>;
    fn adjoint(&self, y: &Tensor) -> Result<Tensor>;
    fn exact_adjoint(&self) -> bool {
        true
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn output_dims(&self, input: Dims) -> Result<Dims> {
        (**self).output_dims(input)
    }
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        (**self).apply(x)
    }
    fn adjoint(&self, y: &Tensor) -> Result<Tensor> {
        (**self).adjoint(y)
    }
    fn exact_adjoint(&self) -> bool {
        (**self).exact_adjoint()
    }
}

/// Operator given by a pair of closures on fixed shapes.
pub struct FnOperator<F, G> {
    pub input: Dims,
    pub output: Dims,
    pub forward: F,
    pub backward: G,
}

impl<F, G> LinearOperator for FnOperator<F, G>
where
    F: Fn(&Tensor) -> Result<Tensor>,
    G: Fn(&Tensor) -> Result<Tensor>,
{
    fn output_dims(&self, _input: Dims) -> Result<Dims> {
        Ok(self.output)
    }
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        (self.forward)(x)
    }
    fn adjoint(&self, y: &Tensor) -> Result<Tensor> {
        (self.backward)(y)
    }
}

/// `factor · op`.
pub struct Scaled<O> {
    pub op: O,
    pub factor: f64,
}

impl<O: LinearOperator> LinearOperator for Scaled<O> {
    fn output_dims(&self, input: Dims) -> Result<Dims> {
        self.op.output_dims(input)
    }
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.op.apply(x)?.scaled(self.factor))
    }
    fn adjoint(&self, y: &Tensor) -> Result<Tensor> {
        Ok(self.op.adjoint(y)?.scaled(self.factor))
    }
    fn exact_adjoint(&self) -> bool {
        self.op.exact_adjoint()
    }
}

pub(crate) fn random_normal(dims: Dims, r: &mut rng::Rng) -> Tensor {
    let (c, h, w) = dims;
    let data = (0..c * h * w).map(|_| StandardNormal.sample(r)).collect();
    Tensor::from_vec(c, h, w, data).expect("nonempty dims")
}

/// Worst relative adjoint mismatch
/// `|⟨Ax, u⟩ − ⟨x, A*u⟩| / (‖Ax‖·‖u‖ + tiny)` over random probes.
pub fn adjoint_residual_op(
    op: &dyn LinearOperator,
    input: Dims,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let output = op.output_dims(input)?;
    let mut worst = 0.0f64;
    for t in 0..trials.max(1) {
        let mut r = rng::stream(seed, t as u64);
        let x = random_normal(input, &mut r);
        let u = random_normal(output, &mut r);
        let ax = op.apply(&x)?;
        let atu = op.adjoint(&u)?;
        let num = (ax.dot(&u) - x.dot(&atu)).abs();
        let den = ax.norm() * u.norm() + 1e-300;
        worst = worst.max(num / den);
    }
    Ok(worst)
}

/// [`adjoint_residual_op`] for a convolution stack on 16×16 probes.
pub fn adjoint_residual(
    stack: &super::ConvStack,
    policy: &super::AdjointPolicy,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let op = super::ConvAnalysis::new(stack, policy)?;
    adjoint_residual_op(&op, (stack.channels(), 16, 16), trials, seed)
}
