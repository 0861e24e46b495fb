use rand::Rng as _;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    Gaussian,
    LaplaceGauss,
    PoissonGauss,
}

/// Additive noise model.
///
/// * `gaussian`: `z = x + N(0, δ²)`
/// * `laplace-gauss`: `z = x + Laplace(0, b) + N(0, δ²)`
/// * `poisson-gauss`: `z = Poisson(x/ℓ)·ℓ + N(0, δ²)` with `ℓ` the poisson
///   level (e.g. `50/255`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub sigma: f64,
    pub laplace_scale: f64,
    pub poisson_level: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        NoiseSpec {
            kind: NoiseKind::Gaussian,
            sigma,
            laplace_scale: 0.0,
            poisson_level: 1.0,
            seed,
        }
    }

    pub fn laplace_gauss(sigma: f64, scale: f64, seed: u64) -> Self {
        NoiseSpec {
            kind: NoiseKind::LaplaceGauss,
            laplace_scale: scale,
            ..Self::gaussian(sigma, seed)
        }
    }

    pub fn poisson_gauss(sigma: f64, level: f64, seed: u64) -> Self {
        NoiseSpec {
            kind: NoiseKind::PoissonGauss,
            poisson_level: level,
            ..Self::gaussian(sigma, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Parameter(format!(
                "sigma {} must be >= 0",
                self.sigma
            )));
        }
        if !(self.laplace_scale >= 0.0 && self.laplace_scale.is_finite()) {
            return Err(Error::Parameter(format!(
                "laplace scale {} must be >= 0",
                self.laplace_scale
            )));
        }
        if self.kind == NoiseKind::PoissonGauss
            && !(self.poisson_level > 0.0 && self.poisson_level.is_finite())
        {
            return Err(Error::Parameter(format!(
                "poisson level {} must be > 0",
                self.poisson_level
            )));
        }
        Ok(())
    }

    /// Standard deviation of the total additive noise for an image at level
    /// `x` (the Poisson part depends on the signal).
    pub fn effective_sigma(&self, x: f64) -> f64 {
        let extra = match self.kind {
            NoiseKind::Gaussian => 0.0,
            NoiseKind::LaplaceGauss => 2.0 * self.laplace_scale * self.laplace_scale,
            NoiseKind::PoissonGauss => x.max(0.0) * self.poisson_level,
        };
        (self.sigma * self.sigma + extra).sqrt()
    }
}

/// Returns `img` plus a noise realization. The output is not clipped.
pub fn add_noise(img: &Image, spec: &NoiseSpec) -> Result<Image> {
    img.check_finite()?;
    spec.validate()?;
    let mut r = rng::rng(spec.seed);
    let mut out = img.clone();
    for v in out.data_mut() {
        match spec.kind {
            NoiseKind::Gaussian => {}
            NoiseKind::LaplaceGauss => {
                if spec.laplace_scale > 0.0 {
                    // inverse CDF on u ∈ (-1/2, 1/2)
                    let u: f64 = r.random::<f64>() - 0.5;
                    let mag = -(1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln();
                    *v += spec.laplace_scale * u.signum() * mag;
                }
            }
            NoiseKind::PoissonGauss => {
                let rate = v.max(0.0) / spec.poisson_level;
                let count = if rate > 0.0 {
                    Poisson::new(rate)
                        .map_err(|e| Error::Domain(format!("poisson rate {rate}: {e}")))?
                        .sample(&mut r)
                } else {
                    0.0
                };
                *v = count * spec.poisson_level;
            }
        }
        if spec.sigma > 0.0 {
            let n: f64 = StandardNormal.sample(&mut r);
            *v += spec.sigma * n;
        }
    }
    Ok(out)
}
