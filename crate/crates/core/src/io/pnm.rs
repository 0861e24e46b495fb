//! Binary PGM (P5) and PPM (P6), 8- or 16-bit.

use crate::error::{Error, Result};
use crate::tensor::Image;

use super::{quantize, BitDepth};

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(format!("pnm: {}", msg.into()))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(bad("expected a header number"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("header number out of range"))
    }
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(bad("missing P5/P6 magic")),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number()?;
    let height = cur.number()?;
    let maxval = cur.number()?;
    if width == 0 || height == 0 {
        return Err(bad("zero dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(bad(format!("maxval {maxval} outside 1..=65535")));
    }
    if !bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("missing whitespace after header"));
    }
    cur.pos += 1;
    let bps = if maxval < 256 { 1 } else { 2 };
    let n = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| bad("dimensions overflow"))?;
    let need = n
        .checked_mul(bps)
        .ok_or_else(|| bad("dimensions overflow"))?;
    let raster = &bytes[cur.pos..];
    if raster.len() < need {
        return Err(bad(format!(
            "raster truncated: {} of {need} bytes",
            raster.len()
        )));
    }
    let plane = width * height;
    let mut data = vec![0.0; n];
    let m = maxval as f64;
    for i in 0..n {
        let v = if bps == 1 {
            raster[i] as usize
        } else {
            u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as usize
        };
        if v > maxval {
            return Err(bad(format!("sample {v} exceeds maxval {maxval}")));
        }
        let (pix, c) = (i / channels, i % channels);
        data[c * plane + pix] = v as f64 / m;
    }
    Image::from_vec(channels, height, width, data)
}

pub fn encode_pnm(img: &Image, depth: BitDepth) -> Result<Vec<u8>> {
    let magic = match img.channels() {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::Shape(format!("pnm needs 1 or 3 channels, got {c}"))),
    };
    let (c, h, w) = img.dims();
    let mut out = format!("{magic}\n{w} {h}\n{}\n", depth.max_value() as u32).into_bytes();
    for pix in 0..h * w {
        for ch in 0..c {
            let q = quantize(img.plane(ch)[pix], depth);
            match depth {
                BitDepth::Eight => out.push(q as u8),
                BitDepth::Sixteen => out.extend_from_slice(&q.to_be_bytes()),
            }
        }
    }
    Ok(out)
}
