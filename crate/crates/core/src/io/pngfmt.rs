//! PNG via the `png` crate: gray/RGB (alpha dropped), 8- or 16-bit.

use std::io::Cursor;

use crate::error::{Error, Result};
use crate::tensor::Image;

use super::{quantize, BitDepth};

fn bad(e: impl std::fmt::Display) -> Error {
    Error::Format(format!("png: {e}"))
}

pub fn decode_png(bytes: &[u8]) -> Result<Image> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    // Palette and sub-byte depths expand to 8 bits; 16-bit is kept.
    dec.set_transformations(png::Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(bad)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| bad("image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let samples = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(bad("unexpanded palette")),
    };
    let channels = if samples >= 3 { 3 } else { 1 };
    let (bps, max) = match info.bit_depth {
        png::BitDepth::Sixteen => (2, 65535.0),
        png::BitDepth::Eight => (1, 255.0),
        d => return Err(bad(format!("unexpected bit depth {d:?}"))),
    };
    let plane = w * h;
    let mut data = vec![0.0; channels * plane];
    for y in 0..h {
        let row = &buf[y * info.line_size..];
        for x in 0..w {
            for c in 0..channels {
                let s = (x * samples + c) * bps;
                let v = if bps == 1 {
                    row[s] as f64
                } else {
                    u16::from_be_bytes([row[s], row[s + 1]]) as f64
                };
                data[c * plane + y * w + x] = v / max;
            }
        }
    }
    Image::from_vec(channels, h, w, data)
}

pub fn encode_png(img: &Image, depth: BitDepth) -> Result<Vec<u8>> {
    let (c, h, w) = img.dims();
    let color = match c {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        _ => return Err(Error::Shape(format!("png needs 1 or 3 channels, got {c}"))),
    };
    let mut raw = Vec::with_capacity(c * h * w * 2);
    for pix in 0..h * w {
        for ch in 0..c {
            let q = quantize(img.plane(ch)[pix], depth);
            match depth {
                BitDepth::Eight => raw.push(q as u8),
                BitDepth::Sixteen => raw.extend_from_slice(&q.to_be_bytes()),
            }
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(color);
        enc.set_depth(match depth {
            BitDepth::Eight => png::BitDepth::Eight,
            BitDepth::Sixteen => png::BitDepth::Sixteen,
        });
        let mut writer = enc.write_header().map_err(bad)?;
        writer.write_image_data(&raw).map_err(bad)?;
        writer.finish().map_err(bad)?;
    }
    Ok(out)
}
