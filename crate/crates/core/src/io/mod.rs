//! File formats: images (PNG, PGM/PPM), the weights container, blur kernel
//! text, dataset/run manifests and CSV traces.

mod kernel;
mod manifest;
mod pngfmt;
mod pnm;
mod table;
mod weights;

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Image;

pub use kernel::{load_kernel, parse_kernel_text};
pub use manifest::{parse_dataset_manifest, sha256_hex, DatasetEntry, RunManifest};
pub use pngfmt::{decode_png, encode_png};
pub use pnm::{decode_pnm, encode_pnm};
pub use table::{Cell, TraceTable};
pub use weights::{TensorEntry, WeightsFile, WeightsManifest, MAGIC};

/// Sample depth used when writing images.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub(crate) fn max_value(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

/// Maps `[0,1]` to integer levels, clamping out-of-range values.
pub(crate) fn quantize(v: f64, depth: BitDepth) -> u16 {
    let m = depth.max_value();
    (v.clamp(0.0, 1.0) * m).round() as u16
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|s| s.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default()
}

/// Reads a PNG, PGM or PPM file (chosen by content, not extension).
pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"\x89PNG") {
        decode_png(&bytes)
    } else if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        decode_pnm(&bytes)
    } else {
        Err(Error::Format(format!(
            "{}: unrecognized image format",
            path.display()
        )))
    }
}

/// Writes by extension: `.png`, `.pgm`/`.ppm`/`.pnm`.
pub fn write_image(path: &Path, img: &Image, depth: BitDepth) -> Result<()> {
    let bytes = match extension(path).as_str() {
        "png" => encode_png(img, depth)?,
        "pgm" | "ppm" | "pnm" => encode_pnm(img, depth)?,
        other => {
            return Err(Error::Format(format!(
                "unsupported image extension {other:?}"
            )))
        }
    };
    write_atomic(path, &bytes)
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Domain(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}
