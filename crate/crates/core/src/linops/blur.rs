use crate::error::{Error, Result};
use crate::tensor::{Image, Tensor};

use super::{correlate_add, LinearOperator};

/// Normalized odd-sized blur kernel, applied channel-wise by correlation
/// with zero padding.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurKernel {
    height: usize,
    width: usize,
    taps: Vec<f64>,
}

impl BlurKernel {
    /// Builds a kernel from raw taps, rescaled to sum to one.
    pub fn new(height: usize, width: usize, taps: Vec<f64>) -> Result<Self> {
        if height.is_multiple_of(2) || width.is_multiple_of(2) {
            return Err(Error::Shape(format!(
                "blur kernel must be odd-sized, got {height}x{width}"
            )));
        }
        if taps.len() != height * width {
            return Err(Error::Shape(format!(
                "{} taps for a {height}x{width} kernel",
                taps.len()
            )));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::Domain("non-finite blur tap".into()));
        }
        let sum: f64 = taps.iter().sum();
        if !(sum.abs() > 1e-12) {
            return Err(Error::Domain(format!(
                "blur taps sum to {sum}, cannot normalize"
            )));
        }
        Ok(BlurKernel {
            height,
            width,
            taps: taps.into_iter().map(|t| t / sum).collect(),
        })
    }

    pub fn delta() -> Self {
        BlurKernel {
            height: 1,
            width: 1,
            taps: vec![1.0],
        }
    }

    pub fn uniform(size: usize) -> Result<Self> {
        Self::new(size, size, vec![1.0; size * size])
    }

    /// Sampled isotropic Gaussian of the given odd size and standard deviation.
    pub fn gaussian(size: usize, std: f64) -> Result<Self> {
        if !(std > 0.0) {
            return Err(Error::Parameter(format!("gaussian std {std} must be > 0")));
        }
        let c = (size / 2) as f64;
        let taps = (0..size * size)
            .map(|i| {
                let (y, x) = ((i / size) as f64 - c, (i % size) as f64 - c);
                (-(x * x + y * y) / (2.0 * std * std)).exp()
            })
            .collect();
        Self::new(size, size, taps)
    }

    /// Built-in kernels: `delta`, `uniform<N>`, `gauss<N>-<std>`.
    pub fn builtin(name: &str) -> Result<Self> {
        if name == "delta" {
            return Ok(Self::delta());
        }
        if let Some(n) = name.strip_prefix("uniform") {
            let n: usize = n
                .parse()
                .map_err(|_| Error::Parameter(format!("bad kernel name {name}")))?;
            return Self::uniform(n);
        }
        if let Some(rest) = name.strip_prefix("gauss") {
            if let Some((n, s)) = rest.split_once('-') {
                let n: usize = n
                    .parse()
                    .map_err(|_| Error::Parameter(format!("bad kernel name {name}")))?;
                let s: f64 = s
                    .parse()
                    .map_err(|_| Error::Parameter(format!("bad kernel name {name}")))?;
                return Self::gaussian(n, s);
            }
        }
        Err(Error::Parameter(format!("unknown kernel {name}")))
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    fn flipped(&self) -> Vec<f64> {
        self.taps.iter().rev().copied().collect()
    }

    fn correlate(&self, x: &Image, taps: &[f64]) -> Image {
        let (c, h, w) = x.dims();
        let mut out = Tensor::zeros(c, h, w);
        for ch in 0..c {
            correlate_add(
                out.plane_mut(ch),
                x.plane(ch),
                h,
                w,
                taps,
                self.height,
                self.width,
            );
        }
        out
    }

    pub fn apply(&self, x: &Image) -> Image {
        self.correlate(x, &self.taps)
    }

    pub fn adjoint(&self, y: &Image) -> Image {
        self.correlate(y, &self.flipped())
    }
}

impl LinearOperator for BlurKernel {
    fn output_dims(&self, input: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        Ok(input)
    }
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        Ok(BlurKernel::apply(self, x))
    }
    fn adjoint(&self, y: &Tensor) -> Result<Tensor> {
        Ok(BlurKernel::adjoint(self, y))
    }
}
