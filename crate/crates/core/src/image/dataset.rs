use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{add_noise, synth_cartoon, NoiseSpec};
use crate::io;
use crate::rng;
use crate::tensor::Image;

use rand::Rng as _;

#[derive(Clone, Debug)]
pub struct Sample {
    pub clean: Image,
    pub noisy: Image,
    /// Gaussian level actually injected into `noisy`.
    pub sigma: f64,
}

/// Clean/noisy pairs used for training and evaluation.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub patch_size: usize,
    pub source: String,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, patch_size: usize, source: impl Into<String>) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            s.clean
                .ensure_same_shape(&s.noisy, &format!("sample {i}"))?;
        }
        Ok(Dataset {
            samples,
            patch_size,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `n` cartoons of size `h×w`, each corrupted with Gaussian noise of
    /// level `sigma`. Per-sample seeds derive from `(seed, index)`.
    pub fn synthetic(n: usize, h: usize, w: usize, sigma: f64, seed: u64) -> Result<Self> {
        let samples = (0..n)
            .map(|i| {
                let img_seed = rng::derive(seed, &[0, i as u64]).random::<u64>();
                let noise_seed = rng::derive(seed, &[1, i as u64]).random::<u64>();
                let clean = synth_cartoon(h, w, img_seed)?;
                let noisy = add_noise(&clean, &NoiseSpec::gaussian(sigma, noise_seed))?;
                Ok(Sample {
                    clean,
                    noisy,
                    sigma,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(samples, h.min(w), format!("synth:{n}"))
    }

    /// Loads a JSON manifest `[{"clean": path, "sigma": s, "seed": n}, ...]`;
    /// relative paths resolve against the manifest's directory.
    pub fn from_manifest(path: &Path, patch_size: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries = io::parse_dataset_manifest(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let samples = entries
            .iter()
            .map(|e| {
                let clean = io::read_image(&base.join(&e.clean))?;
                let noisy = add_noise(&clean, &NoiseSpec::gaussian(e.sigma, e.seed))?;
                Ok(Sample {
                    clean,
                    noisy,
                    sigma: e.sigma,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(samples, patch_size, path.display().to_string())
    }

    /// Every PNG/PGM/PPM file of a directory (sorted by name) with Gaussian
    /// noise of level `sigma`.
    pub fn from_dir(dir: &Path, sigma: f64, seed: u64, patch_size: usize) -> Result<Self> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                matches!(
                    p.extension()
                        .and_then(|s| s.to_str())
                        .map(str::to_ascii_lowercase)
                        .as_deref(),
                    Some("png" | "pgm" | "ppm")
                )
            })
            .collect();
        paths.sort();
        let samples = paths
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let clean = io::read_image(p)?;
                let noise_seed = rng::derive(seed, &[1, i as u64]).random::<u64>();
                let noisy = add_noise(&clean, &NoiseSpec::gaussian(sigma, noise_seed))?;
                Ok(Sample {
                    clean,
                    noisy,
                    sigma,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(samples, patch_size, dir.display().to_string())
    }
}
