use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::LinearOperator;

/// Forward finite differences with the last difference along each axis set
/// to zero (Neumann boundary), the usual discrete gradient of total
/// variation. Feature layout: per channel, horizontal then (optionally)
/// vertical.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FiniteDifference {
    pub vertical: bool,
}

impl FiniteDifference {
    /// Horizontal and vertical differences (`J = 2C`).
    pub fn gradient() -> Self {
        FiniteDifference { vertical: true }
    }

    /// Horizontal differences only (`J = C`).
    pub fn horizontal() -> Self {
        FiniteDifference { vertical: false }
    }

    fn per_channel(&self) -> usize {
        if self.vertical {
            2
        } else {
            1
        }
    }
}

impl LinearOperator for FiniteDifference {
    fn output_dims(&self, (c, h, w): (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        Ok((c * self.per_channel(), h, w))
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let (c, h, w) = x.dims();
        let k = self.per_channel();
        let mut out = Tensor::zeros(c * k, h, w);
        for ch in 0..c {
            let p = x.plane(ch).to_vec();
            {
                let o = out.plane_mut(ch * k);
                for y in 0..h {
                    for xx in 0..w.saturating_sub(1) {
                        o[y * w + xx] = p[y * w + xx + 1] - p[y * w + xx];
                    }
                }
            }
            if self.vertical {
                let o = out.plane_mut(ch * k + 1);
                for y in 0..h.saturating_sub(1) {
                    for xx in 0..w {
                        o[y * w + xx] = p[(y + 1) * w + xx] - p[y * w + xx];
                    }
                }
            }
        }
        Ok(out)
    }

    fn adjoint(&self, u: &Tensor) -> Result<Tensor> {
        let (j, h, w) = u.dims();
        let k = self.per_channel();
        if j % k != 0 {
            return Err(Error::Shape(format!("{j} features not divisible by {k}")));
        }
        let c = j / k;
        let mut out = Tensor::zeros(c, h, w);
        for ch in 0..c {
            let gx = u.plane(ch * k).to_vec();
            let gy = if self.vertical {
                Some(u.plane(ch * k + 1).to_vec())
            } else {
                None
            };
            let o = out.plane_mut(ch);
            for y in 0..h {
                for xx in 0..w.saturating_sub(1) {
                    let g = gx[y * w + xx];
                    o[y * w + xx + 1] += g;
                    o[y * w + xx] -= g;
                }
            }
            if let Some(gy) = gy {
                for y in 0..h.saturating_sub(1) {
                    for xx in 0..w {
                        let g = gy[y * w + xx];
                        o[(y + 1) * w + xx] += g;
                        o[y * w + xx] -= g;
                    }
                }
            }
        }
        Ok(out)
    }
}
