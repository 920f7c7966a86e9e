//! Image codecs.
//!
//! * depth: 16-bit grayscale PNG (stored integer × scale) or PFM (`Pf`,
//!   32-bit float, rows stored bottom to top, negative scale = little-endian)
//! * RGB: 8-bit PNG, RGB or RGBA (alpha ignored), values mapped to `[0, 1]`
//! * uncertainty labels: 8-bit grayscale PNG holding 0 or 255

use std::io::Cursor;
use std::path::Path;

use super::{atomic_write, read_bytes};
use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, Grid2D};
use crate::uncertainty::UncertaintyMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DepthFormat {
    Png16,
    Pfm,
}

impl DepthFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("png") => Ok(DepthFormat::Png16),
            Some("pfm") => Ok(DepthFormat::Pfm),
            _ => Err(Error::format(path, None, "unknown depth format (expected .png or .pfm)")),
        }
    }
}

struct Decoded {
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    data: Vec<u8>,
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<Decoded> {
    let fail = |e: png::DecodingError| Error::format(path, None, format!("png: {e}"));
    let mut reader = png::Decoder::new(Cursor::new(bytes)).read_info().map_err(fail)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, None, "png: image too large"))?;
    let mut data = vec![0u8; size];
    let info = reader.next_frame(&mut data).map_err(fail)?;
    data.truncate(info.buffer_size());
    Ok(Decoded {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        data,
    })
}

fn encode_png(width: usize, height: usize, color: png::ColorType, depth: png::BitDepth, data: &[u8], path: &Path) -> Result<Vec<u8>> {
    let fail = |e: png::EncodingError| Error::format(path, None, format!("png: {e}"));
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut w = enc.write_header().map_err(fail)?;
        w.write_image_data(data).map_err(fail)?;
        w.finish().map_err(fail)?;
    }
    Ok(out)
}

/// 16-bit grayscale PNG → `value × scale`.
pub fn decode_png16(bytes: &[u8], scale: f64, path: &Path) -> Result<Grid2D> {
    let d = decode_png(bytes, path)?;
    if d.color != png::ColorType::Grayscale || d.depth != png::BitDepth::Sixteen {
        return Err(Error::format(
            path,
            None,
            format!("depth PNG must be 16-bit grayscale, found {:?} {:?}-bit", d.color, d.depth as u8),
        ));
    }
    let data = d
        .data
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 * scale)
        .collect();
    Grid2D::new(d.height, d.width, data)
}

/// `value / scale` rounded to the nearest integer; fails outside `[0, 65535]`.
pub fn encode_png16(grid: &Grid2D, scale: f64, path: &Path) -> Result<Vec<u8>> {
    if !(scale > 0.0) {
        return Err(Error::param("depth scale must be positive"));
    }
    let mut data = Vec::with_capacity(grid.len() * 2);
    for (i, &v) in grid.as_slice().iter().enumerate() {
        let q = (v / scale).round();
        if !(0.0..=65535.0).contains(&q) {
            return Err(Error::format(
                path,
                None,
                format!("depth {v} at pixel {i} does not fit 16 bits at scale {scale}"),
            ));
        }
        data.extend_from_slice(&(q as u16).to_be_bytes());
    }
    encode_png(grid.width(), grid.height(), png::ColorType::Grayscale, png::BitDepth::Sixteen, &data, path)
}

/// Next whitespace-delimited header token and its byte offset.
fn pfm_token<'a>(bytes: &'a [u8], pos: &mut usize, path: &Path) -> Result<(&'a str, usize)> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format(path, Some(start as u64), "pfm: truncated header"));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .map(|t| (t, start))
        .map_err(|_| Error::format(path, Some(start as u64), "pfm: non-ASCII header"))
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<Grid2D> {
    let mut pos = 0;
    let (magic, _) = pfm_token(bytes, &mut pos, path)?;
    if magic != "Pf" {
        let msg = if magic == "PF" {
            "pfm: color PFM is not a depth map".to_string()
        } else {
            format!("pfm: bad magic {magic:?}")
        };
        return Err(Error::format(path, Some(0), msg));
    }
    let (w, w_at) = pfm_token(bytes, &mut pos, path)?;
    let (h, h_at) = pfm_token(bytes, &mut pos, path)?;
    let (s, s_at) = pfm_token(bytes, &mut pos, path)?;
    let width: usize = w.parse().map_err(|_| Error::format(path, Some(w_at as u64), format!("pfm: bad width {w:?}")))?;
    let height: usize = h.parse().map_err(|_| Error::format(path, Some(h_at as u64), format!("pfm: bad height {h:?}")))?;
    let scale: f64 = s.parse().map_err(|_| Error::format(path, Some(s_at as u64), format!("pfm: bad scale {s:?}")))?;
    if scale == 0.0 || !scale.is_finite() || width == 0 || height == 0 {
        return Err(Error::format(path, Some(w_at as u64), "pfm: zero size or invalid scale"));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format(path, Some(pos as u64), "pfm: missing raster"));
    }
    pos += 1;
    let need = width * height * 4;
    if bytes.len() - pos != need {
        return Err(Error::format(
            path,
            Some(pos as u64),
            format!("pfm: raster is {} bytes, expected {need}", bytes.len() - pos),
        ));
    }
    let little = scale < 0.0;
    let raster = &bytes[pos..];
    let mut data = vec![0.0; width * height];
    for row in 0..height {
        let y = height - 1 - row;
        for x in 0..width {
            let o = (row * width + x) * 4;
            let b = [raster[o], raster[o + 1], raster[o + 2], raster[o + 3]];
            let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
            data[y * width + x] = v as f64;
        }
    }
    Grid2D::new(height, width, data)
}

/// Little-endian PFM (scale −1); values are narrowed to `f32`.
pub fn encode_pfm(grid: &Grid2D) -> Vec<u8> {
    let (h, w) = grid.dims();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(h * w * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&(grid.get(y, x) as f32).to_le_bytes());
        }
    }
    out
}

/// PNG values are multiplied by `scale`; PFM values are taken as stored.
pub fn read_depth(path: &Path, scale: f64) -> Result<Grid2D> {
    let bytes = read_bytes(path)?;
    match DepthFormat::from_path(path)? {
        DepthFormat::Png16 => decode_png16(&bytes, scale, path),
        DepthFormat::Pfm => decode_pfm(&bytes, path),
    }
}

pub fn write_depth(grid: &Grid2D, path: &Path, scale: f64) -> Result<()> {
    let bytes = match DepthFormat::from_path(path)? {
        DepthFormat::Png16 => encode_png16(grid, scale, path)?,
        DepthFormat::Pfm => encode_pfm(grid),
    };
    atomic_write(path, &bytes)
}

/// Relative depth from PFM or 16-bit PNG, min-max normalized to `[0, 1]`
/// (a constant map becomes all zeros).
pub fn read_relative_depth(path: &Path) -> Result<Grid2D> {
    let g = read_depth(path, 1.0)?;
    if g.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::format(path, None, "relative depth contains non-finite values"));
    }
    let (lo, hi) = (g.min(), g.max());
    Ok(if hi > lo { g.map(|v| (v - lo) / (hi - lo)) } else { g.map(|_| 0.0) })
}

pub fn read_rgb(path: &Path) -> Result<FeatureMap> {
    let d = decode_png(&read_bytes(path)?, path)?;
    let stride = match (d.color, d.depth) {
        (png::ColorType::Rgb, png::BitDepth::Eight) => 3,
        (png::ColorType::Rgba, png::BitDepth::Eight) => 4,
        (c, b) => {
            return Err(Error::format(
                path,
                None,
                format!("RGB image must be 8-bit RGB or RGBA, found {c:?} {}-bit", b as u8),
            ))
        }
    };
    let plane = d.width * d.height;
    let mut data = vec![0.0; 3 * plane];
    for (p, px) in d.data.chunks_exact(stride).enumerate() {
        for c in 0..3 {
            data[c * plane + p] = px[c] as f64 / 255.0;
        }
    }
    FeatureMap::new(3, d.height, d.width, data)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 3-channel map in `[0, 1]` → 8-bit RGB PNG (values clamped).
pub fn write_rgb(rgb: &FeatureMap, path: &Path) -> Result<()> {
    if rgb.channels() != 3 {
        return Err(Error::param("write_rgb needs 3 channels"));
    }
    let plane = rgb.plane_len();
    let mut data = Vec::with_capacity(3 * plane);
    for p in 0..plane {
        for c in 0..3 {
            data.push(to_u8(rgb.channel(c)[p]));
        }
    }
    write_rgb8(path, rgb.width(), rgb.height(), &data)
}

/// Interleaved 8-bit RGB buffer → PNG.
pub fn write_rgb8(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    if data.len() != width * height * 3 {
        return Err(Error::param("rgb buffer size"));
    }
    atomic_write(path, &encode_png(width, height, png::ColorType::Rgb, png::BitDepth::Eight, data, path)?)
}

pub fn read_uncertainty(path: &Path) -> Result<UncertaintyMap> {
    let d = decode_png(&read_bytes(path)?, path)?;
    if d.color != png::ColorType::Grayscale || d.depth != png::BitDepth::Eight {
        return Err(Error::format(path, None, "uncertainty map must be 8-bit grayscale"));
    }
    let mut data = Vec::with_capacity(d.data.len());
    for (i, &b) in d.data.iter().enumerate() {
        data.push(match b {
            0 => 0.0,
            255 => 1.0,
            v => return Err(Error::format(path, None, format!("uncertainty value {v} at pixel {i} (expected 0 or 255)"))),
        });
    }
    UncertaintyMap::new(Grid2D::new(d.height, d.width, data)?)
}

pub fn write_uncertainty(u: &UncertaintyMap, path: &Path) -> Result<()> {
    let g = u.labels();
    let data: Vec<u8> = g.as_slice().iter().map(|&v| if v > 0.5 { 255 } else { 0 }).collect();
    atomic_write(path, &encode_png(g.width(), g.height(), png::ColorType::Grayscale, png::BitDepth::Eight, &data, path)?)
}
