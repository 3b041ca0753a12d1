use std::path::Path;

use super::{read_bytes, write_bytes, Cursor};
use crate::depth::DepthMap;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FRGD";
const VERSION: u32 = 1;
const PNG_SIGNATURE: &[u8; 8] = b"\x89PNG\r\n\x1a\n";

pub fn encode_frgd(d: &DepthMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * d.data().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(d.height() as u32).to_le_bytes());
    out.extend_from_slice(&(d.width() as u32).to_le_bytes());
    for v in d.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_frgd(bytes: &[u8]) -> Result<DepthMap> {
    let mut c = Cursor::new(bytes, "FRGD");
    c.magic(MAGIC)?;
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(c.error_at(4, format!("unsupported version {version}")));
    }
    let height = c.u32("height")? as usize;
    let width = c.u32("width")? as usize;
    let count = height
        .checked_mul(width)
        .ok_or_else(|| c.error_at(8, "dimensions overflow"))?;
    let payload = c.offset() as usize;
    let data = c.f32s(count, "depth payload")?;
    c.finish()?;
    if let Some(i) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(c.error_at(
            payload + 4 * i,
            format!("depth {} at pixel ({}, {}) is negative or non-finite", data[i], i % width, i / width),
        ));
    }
    DepthMap::new(width, height, data).map_err(|e| c.error_at(payload, e.to_string()))
}

/// 16-bit greyscale PNG holding `round(depth * scale)`; 0 stays invalid.
pub fn encode_depth_png(d: &DepthMap, scale: f64) -> Result<Vec<u8>> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Config(format!("depth_png_scale must be positive, got {scale}")));
    }
    let mut samples = Vec::with_capacity(2 * d.data().len());
    for (i, v) in d.data().iter().enumerate() {
        let q = (*v as f64 * scale).round();
        if q > u16::MAX as f64 {
            return Err(Error::invalid(format!(
                "depth {v} at pixel ({}, {}) does not fit 16 bits at scale {scale}",
                i % d.width(),
                i / d.width()
            )));
        }
        samples.extend_from_slice(&(q as u16).to_be_bytes());
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, d.width() as u32, d.height() as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut w = enc
            .write_header()
            .map_err(|e| Error::invalid(format!("png encode: {e}")))?;
        w.write_image_data(&samples)
            .map_err(|e| Error::invalid(format!("png encode: {e}")))?;
    }
    Ok(out)
}

pub fn decode_depth_png(bytes: &[u8], scale: f64) -> Result<DepthMap> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Config(format!("depth_png_scale must be positive, got {scale}")));
    }
    let err = |m: String| Error::format("PNG", 0, m);
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| err(e.to_string()))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(err(format!(
            "expected 16-bit greyscale, got {:?} at {:?}",
            info.color_type, info.bit_depth
        )));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| err("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(|e| err(e.to_string()))?;
    let data: Vec<f32> = buf[..frame.buffer_size()]
        .chunks_exact(2)
        .map(|b| (u16::from_be_bytes([b[0], b[1]]) as f64 / scale) as f32)
        .collect();
    DepthMap::new(width, height, data).map_err(|e| err(e.to_string()))
}

/// Read FRGD, or a 16-bit PNG when the file carries the PNG signature.
pub fn read_depth(path: impl AsRef<Path>, png_scale: f64) -> Result<DepthMap> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let out = if bytes.starts_with(PNG_SIGNATURE) {
        decode_depth_png(&bytes, png_scale)
    } else {
        decode_frgd(&bytes)
    };
    out.map_err(|e| e.at(path))
}

pub fn write_depth(path: impl AsRef<Path>, d: &DepthMap) -> Result<()> {
    write_bytes(path.as_ref(), &encode_frgd(d))
}
