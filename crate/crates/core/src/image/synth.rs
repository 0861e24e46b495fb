use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Image, Tensor};

/// Piecewise-constant single-channel test image.
///
/// A random background level plus 2–7 rectangles or ellipses painted on
/// top, each with its own constant level in `[0, 1]`: at most 8 distinct
/// values overall.
pub fn synth_cartoon(h: usize, w: usize, seed: u64) -> Result<Image> {
    if h < 8 || w < 8 {
        return Err(Error::Shape(format!(
            "cartoon needs h, w >= 8, got {h}x{w}"
        )));
    }
    let mut r = rng::rng(seed);
    let regions = r.random_range(3..=8usize);
    let mut img = Tensor::filled(1, h, w, r.random::<f64>());
    let (hf, wf) = (h as f64, w as f64);
    for _ in 1..regions {
        let level: f64 = r.random();
        let cy = r.random::<f64>() * hf;
        let cx = r.random::<f64>() * wf;
        let ry = (0.1 + 0.3 * r.random::<f64>()) * hf;
        let rx = (0.1 + 0.3 * r.random::<f64>()) * wf;
        let ellipse = r.random::<bool>();
        for y in 0..h {
            for x in 0..w {
                let dy = (y as f64 + 0.5 - cy) / ry;
                let dx = (x as f64 + 0.5 - cx) / rx;
                let inside = if ellipse {
                    dy * dy + dx * dx <= 1.0
                } else {
                    dy.abs() <= 1.0 && dx.abs() <= 1.0
                };
                if inside {
                    img.set(0, y, x, level);
                }
            }
        }
    }
    Ok(img)
}
