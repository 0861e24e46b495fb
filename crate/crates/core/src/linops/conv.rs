use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{FeatureMap, Image, Tensor};

use super::LinearOperator;

/// `out += kernel ⋆ inp` on one `h×w` plane: cross-correlation with a
/// `kh×kw` kernel centered at `(kh/2, kw/2)`, zero padding, same size.
pub fn correlate_add(
    out: &mut [f64],
    inp: &[f64],
    h: usize,
    w: usize,
    kernel: &[f64],
    kh: usize,
    kw: usize,
) {
    let (ch, cw) = ((kh / 2) as isize, (kw / 2) as isize);
    let (hi, wi) = (h as isize, w as isize);
    for a in 0..kh {
        let dy = a as isize - ch;
        let y0 = (-dy).max(0);
        let y1 = (hi - dy).min(hi);
        if y0 >= y1 {
            continue;
        }
        for b in 0..kw {
            let k = kernel[a * kw + b];
            if k == 0.0 {
                continue;
            }
            let dx = b as isize - cw;
            let x0 = (-dx).max(0);
            let x1 = (wi - dx).min(wi);
            if x0 >= x1 {
                continue;
            }
            for y in y0..y1 {
                let orow = (y * wi) as usize;
                let irow = ((y + dy) * wi) as usize;
                let o = &mut out[orow + x0 as usize..orow + x1 as usize];
                let i =
                    &inp[(irow as isize + x0 + dx) as usize..(irow as isize + x1 + dx) as usize];
                for (ov, iv) in o.iter_mut().zip(i) {
                    *ov += k * iv;
                }
            }
        }
    }
}

/// `grad[a,b] += Σ_{y,x} g[y,x]·inp[y+a−1, x+b−1]`: the kernel gradient of
/// a 3×3 correlation with zero padding.
fn correlate_kernel_grad(grad: &mut [f64], inp: &[f64], g: &[f64], h: usize, w: usize) {
    let (hi, wi) = (h as isize, w as isize);
    for a in 0..3 {
        let dy = a as isize - 1;
        let y0 = (-dy).max(0);
        let y1 = (hi - dy).min(hi);
        for b in 0..3 {
            let dx = b as isize - 1;
            let x0 = (-dx).max(0);
            let x1 = (wi - dx).min(wi);
            let mut acc = 0.0;
            for y in y0..y1 {
                let grow = (y * wi) as usize;
                let irow = ((y + dy) * wi) as usize;
                let gs = &g[grow + x0 as usize..grow + x1.max(x0) as usize];
                let is = &inp[(irow as isize + x0 + dx) as usize
                    ..(irow as isize + x1.max(x0) + dx) as usize];
                acc += gs.iter().zip(is).map(|(p, q)| p * q).sum::<f64>();
            }
            grad[a * 3 + b] += acc;
        }
    }
}

/// Bank of `J` bias-free 3×3 filters over `C` input channels.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvStack {
    filters: usize,
    channels: usize,
    kernels: Vec<f64>,
}

impl ConvStack {
    pub const TAPS: usize = 9;

    pub fn new(filters: usize, channels: usize, kernels: Vec<f64>) -> Result<Self> {
        if filters == 0 || channels == 0 {
            return Err(Error::Shape("conv stack needs J, C >= 1".into()));
        }
        if kernels.len() != filters * channels * Self::TAPS {
            return Err(Error::Shape(format!(
                "{} kernel entries for a {filters}x{channels}x3x3 stack",
                kernels.len()
            )));
        }
        if let Some(v) = kernels.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite kernel entry {v}")));
        }
        Ok(ConvStack {
            filters,
            channels,
            kernels,
        })
    }

    pub fn zeros(filters: usize, channels: usize) -> Self {
        ConvStack {
            filters,
            channels,
            kernels: vec![0.0; filters * channels * Self::TAPS],
        }
    }

    /// Single filter, single channel, `scale` at the center tap.
    pub fn delta(scale: f64) -> Self {
        let mut k = vec![0.0; 9];
        k[4] = scale;
        ConvStack {
            filters: 1,
            channels: 1,
            kernels: k,
        }
    }

    /// Entries i.i.d. uniform in `[-b, b]` with `b = 1/√(9C)`.
    pub fn random(filters: usize, channels: usize, seed: u64) -> Self {
        let bound = 1.0 / ((Self::TAPS * channels) as f64).sqrt();
        let mut r = rng::rng(seed);
        let kernels = (0..filters * channels * Self::TAPS)
            .map(|_| r.random_range(-bound..=bound))
            .collect();
        ConvStack {
            filters,
            channels,
            kernels,
        }
    }

    /// Zero-padded forward differences along x and y for every channel
    /// (`J = 2C`).
    pub fn finite_differences(channels: usize) -> Self {
        let mut s = Self::zeros(2 * channels, channels);
        for c in 0..channels {
            let kx = s.kernel_mut(2 * c, c);
            kx[4] = -1.0;
            kx[5] = 1.0;
            let ky = s.kernel_mut(2 * c + 1, c);
            ky[4] = -1.0;
            ky[7] = 1.0;
        }
        s
    }

    pub fn filters(&self) -> usize {
        self.filters
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn kernels(&self) -> &[f64] {
        &self.kernels
    }
    pub fn kernels_mut(&mut self) -> &mut [f64] {
        &mut self.kernels
    }
    pub fn kernel(&self, j: usize, c: usize) -> &[f64] {
        let o = (j * self.channels + c) * Self::TAPS;
        &self.kernels[o..o + Self::TAPS]
    }
    pub fn kernel_mut(&mut self, j: usize, c: usize) -> &mut [f64] {
        let o = (j * self.channels + c) * Self::TAPS;
        &mut self.kernels[o..o + Self::TAPS]
    }

    pub fn scaled(&self, s: f64) -> ConvStack {
        ConvStack {
            filters: self.filters,
            channels: self.channels,
            kernels: self.kernels.iter().map(|k| k * s).collect(),
        }
    }

    /// The stack realizing the exact adjoint as a correlation: `C` filters
    /// over `J` channels with spatially flipped kernels.
    pub fn transposed(&self) -> ConvStack {
        let mut t = ConvStack::zeros(self.channels, self.filters);
        for j in 0..self.filters {
            for c in 0..self.channels {
                let src = self.kernel(j, c);
                let dst = t.kernel_mut(c, j);
                for (i, d) in dst.iter_mut().enumerate() {
                    *d = src[8 - i];
                }
            }
        }
        t
    }

    /// `out_j = Σ_c kernel_{j,c} ⋆ x_c`.
    pub fn apply(&self, x: &Image) -> Result<FeatureMap> {
        if x.channels() != self.channels {
            return Err(Error::Shape(format!(
                "conv stack expects {} channels, got {}",
                self.channels,
                x.channels()
            )));
        }
        let (h, w) = (x.height(), x.width());
        let mut out = Tensor::zeros(self.filters, h, w);
        for j in 0..self.filters {
            let o = out.plane_mut(j);
            for c in 0..self.channels {
                correlate_add(o, x.plane(c), h, w, self.kernel(j, c), 3, 3);
            }
        }
        Ok(out)
    }

    /// Exact adjoint of [`ConvStack::apply`] (transposed correlation).
    pub fn adjoint(&self, u: &FeatureMap) -> Result<Image> {
        if u.channels() != self.filters {
            return Err(Error::Shape(format!(
                "adjoint expects {} features, got {}",
                self.filters,
                u.channels()
            )));
        }
        self.transposed().apply(u)
    }

    /// Gradient of `⟨g, apply(x)⟩` with respect to the kernel entries.
    pub fn kernel_grad(&self, x: &Image, g: &FeatureMap) -> Vec<f64> {
        let mut grad = vec![0.0; self.kernels.len()];
        self.accumulate_kernel_grad(&mut grad, 1.0, x, g);
        grad
    }

    /// `grad += scale · ∂⟨g, apply(x)⟩/∂kernels`.
    pub fn accumulate_kernel_grad(&self, grad: &mut [f64], scale: f64, x: &Image, g: &FeatureMap) {
        debug_assert_eq!(x.channels(), self.channels);
        debug_assert_eq!(g.channels(), self.filters);
        let (h, w) = (x.height(), x.width());
        let mut tmp = [0.0; 9];
        for j in 0..self.filters {
            for c in 0..self.channels {
                tmp.iter_mut().for_each(|t| *t = 0.0);
                correlate_kernel_grad(&mut tmp, x.plane(c), g.plane(j), h, w);
                let o = (j * self.channels + c) * Self::TAPS;
                for (dst, t) in grad[o..o + 9].iter_mut().zip(&tmp) {
                    *dst += scale * t;
                }
            }
        }
    }
}

/// How the adjoint of a learned analysis operator is realized.
#[derive(Clone, Debug, PartialEq)]
pub enum AdjointPolicy {
    /// Exact transpose of the forward stack.
    Tied,
    /// Independent stack mapping `J` feature channels back to `C` channels.
    Untied(ConvStack),
}

impl AdjointPolicy {
    pub fn validate_for(&self, forward: &ConvStack) -> Result<()> {
        match self {
            AdjointPolicy::Tied => Ok(()),
            AdjointPolicy::Untied(s)
                if s.filters == forward.channels && s.channels == forward.filters =>
            {
                Ok(())
            }
            AdjointPolicy::Untied(s) => Err(Error::Shape(format!(
                "untied stack is {}x{}, expected {}x{}",
                s.filters, s.channels, forward.channels, forward.filters
            ))),
        }
    }

    pub fn is_tied(&self) -> bool {
        matches!(self, AdjointPolicy::Tied)
    }

    /// Applies the adjoint-side map to a feature map.
    pub fn apply(&self, forward: &ConvStack, u: &FeatureMap) -> Result<Image> {
        match self {
            AdjointPolicy::Tied => forward.adjoint(u),
            AdjointPolicy::Untied(s) => s.apply(u),
        }
    }
}

/// A convolution stack paired with its adjoint policy, as an operator.
pub struct ConvAnalysis<'a> {
    stack: &'a ConvStack,
    policy: &'a AdjointPolicy,
}

impl<'a> ConvAnalysis<'a> {
    pub fn new(stack: &'a ConvStack, policy: &'a AdjointPolicy) -> Result<Self> {
        policy.validate_for(stack)?;
        Ok(ConvAnalysis { stack, policy })
    }
}

impl LinearOperator for ConvStack {
    fn output_dims(&self, input: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        if input.0 != self.channels {
            return Err(Error::Shape(format!(
                "conv stack expects {} channels, got {}",
                self.channels, input.0
            )));
        }
        Ok((self.filters, input.1, input.2))
    }
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        ConvStack::apply(self, x)
    }
    fn adjoint(&self, y: &Tensor) -> Result<Tensor> {
        ConvStack::adjoint(self, y)
    }
}

impl LinearOperator for ConvAnalysis<'_> {
    fn output_dims(&self, input: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        LinearOperator::output_dims(self.stack, input)
    }
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.stack.apply(x)
    }
    fn adjoint(&self, y: &Tensor) -> Result<Tensor> {
        self.policy.apply(self.stack, y)
    }
    fn exact_adjoint(&self) -> bool {
        self.policy.is_tied()
    }
}
