//! Image decoding (binary PPM and 8-bit PNG) and bilinear resizing.
//!
//! The resize convention is pinned: output pixel centers map to
//! (i + 0.5) * src / dst - 0.5 in source coordinates (corner-aligned false),
//! clamped at the edges. Loading an image that is already the target size is
//! an exact identity.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// RGB image as three planes of [0,1] floats.
#[derive(Debug)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Plane-major: [3, height, width].
    pub data: Vec<f64>,
}

/// Parses a binary (P6) PPM with 8-bit samples.
pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        // skip whitespace and '#' comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::invalid("ppm: truncated header".to_string()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    let magic = token(bytes)?;
    if magic != "P6" {
        return Err(Error::invalid(format!("ppm: expected magic P6, found {magic:?}")));
    }
    let width: usize = token(bytes)?
        .parse()
        .map_err(|_| Error::invalid("ppm: bad width".to_string()))?;
    let height: usize = token(bytes)?
        .parse()
        .map_err(|_| Error::invalid("ppm: bad height".to_string()))?;
    let maxval: usize = token(bytes)?
        .parse()
        .map_err(|_| Error::invalid("ppm: bad maxval".to_string()))?;
    if maxval != 255 {
        return Err(Error::invalid(format!(
            "ppm: unsupported maxval {maxval} (only 8-bit, 255, is supported)"
        )));
    }
    // exactly one whitespace byte separates header from raster
    pos += 1;
    let need = width * height * 3;
    if bytes.len() < pos + need {
        return Err(Error::invalid(format!(
            "ppm: raster truncated, need {need} bytes, have {}",
            bytes.len().saturating_sub(pos)
        )));
    }
    let raster = &bytes[pos..pos + need];
    let mut data = vec![0.0; 3 * width * height];
    let plane = width * height;
    for (i, px) in raster.chunks_exact(3).enumerate() {
        data[i] = px[0] as f64 / 255.0;
        data[plane + i] = px[1] as f64 / 255.0;
        data[2 * plane + i] = px[2] as f64 / 255.0;
    }
    Ok(RgbImage { width, height, data })
}

/// Serializes 8-bit interleaved RGB rows as binary PPM.
pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    assert_eq!(rgb.len(), width * height * 3);
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

/// Decodes an 8-bit PNG (RGB, RGBA, gray, gray+alpha; palette is expanded).
/// Alpha is dropped; grayscale is replicated across the three planes.
pub fn decode_png(bytes: &[u8]) -> Result<RgbImage> {
    let mut decoder = png::Decoder::new(bytes);
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::invalid(format!("png: {e}")))?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::invalid(format!("png: {e}")))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::invalid(format!(
            "png: unsupported bit depth {:?} (only 8-bit is supported)",
            info.bit_depth
        )));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        other => {
            return Err(Error::invalid(format!("png: unsupported color type {other:?}")));
        }
    };
    let plane = width * height;
    let mut data = vec![0.0; 3 * plane];
    for i in 0..plane {
        let px = &buf[i * channels..i * channels + channels];
        let (r, g, b) = match channels {
            1 | 2 => (px[0], px[0], px[0]),
            _ => (px[0], px[1], px[2]),
        };
        data[i] = r as f64 / 255.0;
        data[plane + i] = g as f64 / 255.0;
        data[2 * plane + i] = b as f64 / 255.0;
    }
    Ok(RgbImage { width, height, data })
}

/// Bilinear resample of a [3, h, w] image to [3, size, size].
pub fn bilinear_resize(img: &RgbImage, size: usize) -> Tensor {
    let (h, w) = (img.height, img.width);
    if h == size && w == size {
        return Tensor::new(img.data.clone(), &[3, size, size]);
    }
    let mut out = vec![0.0; 3 * size * size];
    let sy_scale = h as f64 / size as f64;
    let sx_scale = w as f64 / size as f64;
    for oy in 0..size {
        let sy = ((oy as f64 + 0.5) * sy_scale - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for ox in 0..size {
            let sx = ((ox as f64 + 0.5) * sx_scale - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            for c in 0..3 {
                let base = c * h * w;
                let top = img.data[base + y0 * w + x0] * (1.0 - fx) + img.data[base + y0 * w + x1] * fx;
                let bot = img.data[base + y1 * w + x0] * (1.0 - fx) + img.data[base + y1 * w + x1] * fx;
                out[(c * size + oy) * size + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    Tensor::new(out, &[3, size, size])
}

fn decode_file(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(b"P6") {
        decode_ppm(&bytes)
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        decode_png(&bytes)
    } else {
        Err(Error::invalid(format!(
            "{}: unsupported image format (expected binary PPM or PNG)",
            path.display()
        )))
    }
}

/// Reads a PPM or PNG (sniffed from magic bytes), scales to [0,1], and
/// bilinearly resizes to `size` x `size`.
pub fn load_image(path: &Path, size: usize) -> Result<Tensor> {
    Ok(bilinear_resize(&decode_file(path)?, size))
}

/// Reads an image at its native size, as [3, H, W] in [0,1].
pub fn load_image_native(path: &Path) -> Result<Tensor> {
    let img = decode_file(path)?;
    let (h, w) = (img.height, img.width);
    Ok(Tensor::new(img.data, &[3, h, w]))
}
