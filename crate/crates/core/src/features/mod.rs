//! Turning raw per-layer feature tensors into matchable keypoint descriptors.

mod diffusion;
mod geometric;
mod interp;
mod pca;

pub use diffusion::{assemble_diffusion_descriptors, DiffusionProjector};
pub use geometric::{lookup_geometric, PointFeatures, SpatialHash};
pub use interp::{sample_bilinear, upsample_layer};
pub use pca::{pca_reduce, PcaBasis};

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Rgb,
    Depth,
}

impl Modality {
    pub fn code(self) -> u8 {
        match self {
            Modality::Rgb => 0,
            Modality::Depth => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Modality::Rgb),
            1 => Some(Modality::Depth),
            _ => None,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Rgb => "rgb",
            Modality::Depth => "depth",
        })
    }
}

/// One layer of activations, stored channel-major then row-major:
/// `data[c * height * width + y * width + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLayer {
    pub layer_id: u32,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FeatureLayer {
    pub fn new(layer_id: u32, channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let expected = channels
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| Error::invalid("layer shape overflows"))?;
        if expected != data.len() {
            return Err(Error::invalid(format!(
                "layer {layer_id} shape {channels}x{height}x{width} needs {expected} values, got {}",
                data.len()
            )));
        }
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::invalid(format!("layer {layer_id} has an empty dimension")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("layer {layer_id} contains non-finite values")));
        }
        Ok(Self {
            layer_id,
            channels,
            height,
            width,
            data,
        })
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn value(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Channel vector at grid cell `(x, y)`.
    pub fn cell(&self, x: usize, y: usize) -> Vec<f32> {
        (0..self.channels).map(|c| self.value(c, y, x)).collect()
    }
}

/// A stack of layers for one image or depth map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub modality: Modality,
    pub layers: Vec<FeatureLayer>,
    /// Matching grid `(height, width)` every layer is interpolated onto.
    pub grid: (usize, usize),
}

impl FeatureMap {
    /// Build a map; the grid defaults to the largest layer's extent.
    pub fn new(modality: Modality, layers: Vec<FeatureLayer>) -> Result<Self> {
        if layers.windows(2).any(|w| w[0].layer_id >= w[1].layer_id) {
            return Err(Error::invalid("layer ids must be strictly increasing"));
        }
        let grid = layers
            .iter()
            .map(|l| (l.height, l.width))
            .max_by_key(|&(h, w)| h * w)
            .unwrap_or((0, 0));
        Ok(Self {
            modality,
            layers,
            grid,
        })
    }

    pub fn with_grid(mut self, height: usize, width: usize) -> Self {
        self.grid = (height, width);
        self
    }

    pub fn layer(&self, id: u32) -> Option<&FeatureLayer> {
        self.layers.iter().find(|l| l.layer_id == id)
    }
}

/// Integer keypoints on a `width x height` image or depth grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeypointSet {
    pub pixels: Vec<(usize, usize)>,
    pub stride: usize,
    pub width: usize,
    pub height: usize,
}

impl KeypointSet {
    pub fn new(pixels: Vec<(usize, usize)>, stride: usize, width: usize, height: usize) -> Result<Self> {
        if let Some(p) = pixels.iter().find(|(u, v)| *u >= width || *v >= height) {
            return Err(Error::invalid(format!("keypoint {p:?} outside {width}x{height}")));
        }
        let mut sorted = pixels.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("duplicate keypoints"));
        }
        Ok(Self {
            pixels,
            stride,
            width,
            height,
        })
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Keep only the keypoints for which `keep` holds.
    pub fn filtered(&self, mut keep: impl FnMut(usize, usize) -> bool) -> KeypointSet {
        KeypointSet {
            pixels: self.pixels.iter().copied().filter(|&(u, v)| keep(u, v)).collect(),
            ..*self
        }
    }
}

/// Regular keypoint grid at `stride/2 + i*stride`.
///
/// When the stride exceeds an image side the single keypoint on that axis is
/// placed at the side's center.
pub fn sample_grid_keypoints(width: usize, height: usize, stride: usize) -> Result<KeypointSet> {
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    let axis = |extent: usize| -> Vec<usize> {
        if extent == 0 {
            return Vec::new();
        }
        let start = (stride / 2).min((extent - 1) / 2);
        (start..extent).step_by(stride).collect()
    };
    let (xs, ys) = (axis(width), axis(height));
    let pixels = ys
        .iter()
        .flat_map(|&v| xs.iter().map(move |&u| (u, v)))
        .collect();
    Ok(KeypointSet {
        pixels,
        stride,
        width,
        height,
    })
}

/// Row-per-keypoint descriptors aligned with a keypoint set.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    pub dim: usize,
    pub data: Vec<f32>,
    pub keypoints: KeypointSet,
    /// Keypoints whose geometric block is the zero fallback.
    pub zero_geometry_mask: Vec<bool>,
}

impl DescriptorSet {
    pub fn new(dim: usize, data: Vec<f32>, keypoints: KeypointSet, zero_geometry_mask: Vec<bool>) -> Result<Self> {
        let n = keypoints.len();
        if data.len() != n * dim || zero_geometry_mask.len() != n {
            return Err(Error::invalid(format!(
                "descriptor set of {n} keypoints x {dim} dims has {} values and {} mask bits",
                data.len(),
                zero_geometry_mask.len()
            )));
        }
        Ok(Self {
            dim,
            data,
            keypoints,
            zero_geometry_mask,
        })
    }

    /// Descriptors without geometry bookkeeping.
    pub fn from_rows(dim: usize, data: Vec<f32>, keypoints: KeypointSet) -> Result<Self> {
        let n = keypoints.len();
        Self::new(dim, data, keypoints, vec![false; n])
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Multiply every value by `s`.
    pub fn scaled(&self, s: f32) -> DescriptorSet {
        DescriptorSet {
            data: self.data.iter().map(|v| v * s).collect(),
            ..self.clone()
        }
    }
}

/// Scale `v` to unit L2 norm; zero vectors stay zero.
pub fn l2_normalize(v: &mut [f32]) {
    let norm = v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x = (*x as f64 / norm) as f32;
        }
    }
}

/// Per keypoint `[w * diffusion, (1 - w) * geometric]`, without renormalizing.
pub fn fuse(diffusion: &DescriptorSet, geometric: &DescriptorSet, w: f32) -> Result<DescriptorSet> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::invalid(format!("fusion weight {w} outside [0, 1]")));
    }
    if diffusion.keypoints.pixels != geometric.keypoints.pixels {
        return Err(Error::invalid("diffusion and geometric keypoints are not aligned"));
    }
    let (wd, wg) = (w, 1.0 - w);
    let dim = diffusion.dim + geometric.dim;
    let mut data = Vec::with_capacity(dim * diffusion.len());
    for i in 0..diffusion.len() {
        data.extend(diffusion.row(i).iter().map(|v| wd * v));
        data.extend(geometric.row(i).iter().map(|v| wg * v));
    }
    DescriptorSet::new(
        dim,
        data,
        diffusion.keypoints.clone(),
        geometric.zero_geometry_mask.clone(),
    )
}
