use nalgebra::DMatrix;

use super::interp::{pixel_to_grid, sample_bilinear, upsample_layer};
use super::pca::{pca_reduce, PcaBasis};
use super::{l2_normalize, DescriptorSet, FeatureLayer, FeatureMap, KeypointSet};
use crate::error::{Error, Result};
use crate::par;

/// Per-layer PCA bases shared by every map described with it.
///
/// Layers with at most `pca_dim` channels are passed through unreduced.
#[derive(Debug, Clone)]
pub struct DiffusionProjector {
    layers: Vec<u32>,
    bases: Vec<Option<PcaBasis>>,
    pca_dim: usize,
}

impl DiffusionProjector {
    /// Fit one basis per layer on the cells of all `maps` together.
    pub fn fit(maps: &[&FeatureMap], layers: &[u32], pca_dim: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("no diffusion layers configured".into()));
        }
        if pca_dim == 0 {
            return Err(Error::Config("pca_dim must be positive".into()));
        }
        let mut bases = Vec::with_capacity(layers.len());
        for &id in layers {
            let picked: Vec<&FeatureLayer> = maps
                .iter()
                .map(|m| {
                    m.layer(id).ok_or_else(|| {
                        Error::Config(format!("{} feature map has no layer {id}", m.modality))
                    })
                })
                .collect::<Result<_>>()?;
            let channels = picked[0].channels;
            if picked.iter().any(|l| l.channels != channels) {
                return Err(Error::invalid(format!("layer {id} channel counts differ between maps")));
            }
            if channels <= pca_dim {
                bases.push(None);
                continue;
            }
            let rows: usize = picked.iter().map(|l| l.cells()).sum();
            let mut samples = DMatrix::zeros(rows, channels);
            let mut r = 0;
            for l in &picked {
                for y in 0..l.height {
                    for x in 0..l.width {
                        for c in 0..channels {
                            samples[(r, c)] = l.value(c, y, x) as f64;
                        }
                        r += 1;
                    }
                }
            }
            let (_, basis) = pca_reduce(&samples, pca_dim)?;
            bases.push(Some(basis));
        }
        Ok(Self {
            layers: layers.to_vec(),
            bases,
            pca_dim,
        })
    }

    pub fn layers(&self) -> &[u32] {
        &self.layers
    }

    pub fn pca_dim(&self) -> usize {
        self.pca_dim
    }

    pub fn basis(&self, layer: u32) -> Option<&PcaBasis> {
        let i = self.layers.iter().position(|&l| l == layer)?;
        self.bases[i].as_ref()
    }

    /// Reduce, upsample to the map's grid, sample at keypoints, concatenate
    /// layers and L2-normalize.
    pub fn describe(&self, fm: &FeatureMap, kps: &KeypointSet) -> Result<DescriptorSet> {
        let (gh, gw) = fm.grid;
        if gh == 0 || gw == 0 {
            return Err(Error::invalid("feature grid is empty"));
        }
        let mut gridded = Vec::with_capacity(self.layers.len());
        for (&id, basis) in self.layers.iter().zip(&self.bases) {
            let layer = fm
                .layer(id)
                .ok_or_else(|| Error::Config(format!("{} feature map has no layer {id}", fm.modality)))?;
            let reduced = match basis {
                Some(b) => {
                    if b.input_dim() != layer.channels {
                        return Err(Error::invalid(format!(
                            "layer {id} has {} channels, basis expects {}",
                            layer.channels,
                            b.input_dim()
                        )));
                    }
                    reduce_layer(layer, b)
                }
                None => layer.clone(),
            };
            if reduced.height > gh || reduced.width > gw {
                return Err(Error::invalid(format!(
                    "layer {id} ({}x{}) is larger than the {gh}x{gw} grid",
                    reduced.height, reduced.width
                )));
            }
            gridded.push(upsample_layer(&reduced, (gh, gw)));
        }
        let dim: usize = gridded.iter().map(|l| l.channels).sum();
        let rows = par::map_slice(&kps.pixels, |&(u, v)| {
            let gx = pixel_to_grid(u, kps.width, gw);
            let gy = pixel_to_grid(v, kps.height, gh);
            let mut desc = Vec::with_capacity(dim);
            for layer in &gridded {
                desc.extend(sample_bilinear(layer, gx, gy));
            }
            l2_normalize(&mut desc);
            desc
        });
        DescriptorSet::from_rows(dim, rows.concat(), kps.clone())
    }
}

fn reduce_layer(layer: &FeatureLayer, basis: &PcaBasis) -> FeatureLayer {
    let (h, w) = (layer.height, layer.width);
    let k = basis.target_dim();
    let mut data = vec![0.0f32; k * h * w];
    let cells = par::map_range(h * w, |cell| {
        let (y, x) = (cell / w, cell % w);
        let v: Vec<f64> = (0..layer.channels).map(|c| layer.value(c, y, x) as f64).collect();
        basis.project(&v)
    });
    for (cell, proj) in cells.into_iter().enumerate() {
        for (c, val) in proj.into_iter().enumerate() {
            data[c * h * w + cell] = val as f32;
        }
    }
    FeatureLayer {
        layer_id: layer.layer_id,
        channels: k,
        height: h,
        width: w,
        data,
    }
}

/// Describe one map with bases fitted on that map alone.
pub fn assemble_diffusion_descriptors(
    fm: &FeatureMap,
    kps: &KeypointSet,
    layers: &[u32],
    pca_dim: usize,
) -> Result<DescriptorSet> {
    DiffusionProjector::fit(&[fm], layers, pca_dim)?.describe(fm, kps)
}
