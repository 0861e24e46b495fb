use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Image;

/// Draws `count` square patches at uniformly random valid offsets.
pub fn extract_patches(img: &Image, size: usize, count: usize, seed: u64) -> Result<Vec<Image>> {
    if size == 0 || size > img.height() || size > img.width() {
        return Err(Error::Shape(format!(
            "patch size {size} does not fit {}x{}",
            img.height(),
            img.width()
        )));
    }
    let mut r = rng::rng(seed);
    (0..count)
        .map(|_| {
            let y = r.random_range(0..=img.height() - size);
            let x = r.random_range(0..=img.width() - size);
            img.crop(y, x, size, size)
        })
        .collect()
}
