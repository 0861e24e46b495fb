use crate::error::Result;
use crate::tensor::Image;

/// Mean squared difference over all `C·H·W` entries.
pub fn mse(reference: &Image, estimate: &Image) -> Result<f64> {
    reference.ensure_same_shape(estimate, "mse")?;
    let sum: f64 = reference
        .data()
        .iter()
        .zip(estimate.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / reference.len() as f64)
}

/// Peak signal-to-noise ratio in dB for peak value 1.
///
/// Returns `f64::INFINITY` when the images are identical.
pub fn psnr(reference: &Image, estimate: &Image) -> Result<f64> {
    let m = mse(reference, estimate)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / m).log10())
}

/// Anisotropic total variation: ℓ1 mass of horizontal and vertical
/// forward differences inside each channel.
pub fn total_variation(img: &Image) -> f64 {
    let (c, h, w) = img.dims();
    let mut tv = 0.0;
    for ch in 0..c {
        let p = img.plane(ch);
        for y in 0..h {
            for x in 0..w {
                let v = p[y * w + x];
                if x + 1 < w {
                    tv += (p[y * w + x + 1] - v).abs();
                }
                if y + 1 < h {
                    tv += (p[(y + 1) * w + x] - v).abs();
                }
            }
        }
    }
    tv
}
