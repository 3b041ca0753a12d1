use std::path::Path;

use super::{read_bytes, write_bytes, Cursor};
use crate::error::Result;
use crate::features::{FeatureLayer, FeatureMap, Modality};

const MAGIC: &[u8; 4] = b"FRGF";
const VERSION: u32 = 1;

pub fn encode_frgf(fm: &FeatureMap) -> Vec<u8> {
    let values: usize = fm.layers.iter().map(|l| l.data.len()).sum();
    let mut out = Vec::with_capacity(13 + 16 * fm.layers.len() + 4 * values);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(fm.modality.code());
    out.extend_from_slice(&(fm.layers.len() as u32).to_le_bytes());
    for l in &fm.layers {
        for v in [l.layer_id, l.channels as u32, l.height as u32, l.width as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &l.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Decode a feature container. The matching grid defaults to the largest
/// layer; callers override it from configuration.
pub fn decode_frgf(bytes: &[u8]) -> Result<FeatureMap> {
    let mut c = Cursor::new(bytes, "FRGF");
    c.magic(MAGIC)?;
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(c.error_at(4, format!("unsupported version {version}")));
    }
    let code = c.u8("modality")?;
    let modality = Modality::from_code(code)
        .ok_or_else(|| c.error_at(8, format!("unknown modality code {code}")))?;
    let count = c.u32("layer count")? as usize;
    if count == 0 {
        return Err(c.error_at(9, "file holds no layers"));
    }
    // Each layer needs at least its 16-byte header.
    if count > c.remaining() / 16 {
        return Err(c.error_at(9, format!("{count} layers cannot fit in {} bytes", c.remaining())));
    }
    let mut layers = Vec::with_capacity(count);
    for i in 0..count {
        let start = c.offset() as usize;
        let id = c.u32("layer id")?;
        let channels = c.u32("channels")? as usize;
        let height = c.u32("height")? as usize;
        let width = c.u32("width")? as usize;
        let n = channels
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| c.error_at(start, format!("layer {i} shape overflows")))?;
        let data = c.f32s(n, "layer data")?;
        let layer = FeatureLayer::new(id, channels, height, width, data)
            .map_err(|e| c.error_at(start, e.to_string()))?;
        if let Some(prev) = layers.last().map(|l: &FeatureLayer| l.layer_id) {
            if id <= prev {
                return Err(c.error_at(start, format!("layer id {id} does not increase (previous {prev})")));
            }
        }
        layers.push(layer);
    }
    c.finish()?;
    FeatureMap::new(modality, layers).map_err(|e| c.error_at(0, e.to_string()))
}

pub fn read_frgf(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let path = path.as_ref();
    decode_frgf(&read_bytes(path)?).map_err(|e| e.at(path))
}

pub fn write_frgf(path: impl AsRef<Path>, fm: &FeatureMap) -> Result<()> {
    write_bytes(path.as_ref(), &encode_frgf(fm))
}
