use std::collections::HashMap;

use nalgebra::Vector3;

use super::{l2_normalize, DescriptorSet, KeypointSet};
use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::geometry::{voxel_key, CameraIntrinsics, PointCloud};
use crate::par;

/// Per-point feature vectors, one row of `dim` values per cloud point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFeatures {
    pub cloud: PointCloud,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl PointFeatures {
    pub fn new(cloud: PointCloud, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != cloud.len() * dim {
            return Err(Error::invalid(format!(
                "{} points x {dim} dims needs {} feature values, got {}",
                cloud.len(),
                cloud.len() * dim,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("point features contain non-finite values"));
        }
        Ok(Self { cloud, dim, data })
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Uniform hash grid answering "nearest point within `radius`" exactly.
#[derive(Debug, Clone)]
pub struct SpatialHash<'a> {
    points: &'a [Vector3<f64>],
    cell: f64,
    buckets: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a> SpatialHash<'a> {
    pub fn new(points: &'a [Vector3<f64>], radius: f64) -> Self {
        let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(voxel_key(p, radius)).or_default().push(i);
        }
        Self {
            points,
            cell: radius,
            buckets,
        }
    }

    /// Nearest point with distance `<= radius`; ties go to the lower index.
    pub fn nearest_within(&self, q: &Vector3<f64>) -> Option<(usize, f64)> {
        let key = voxel_key(q, self.cell);
        let mut best: Option<(usize, f64)> = None;
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let k = [key[0] + dx, key[1] + dy, key[2] + dz];
                    let Some(ids) = self.buckets.get(&k) else { continue };
                    for &i in ids {
                        let d2 = (self.points[i] - q).norm_squared();
                        let better = match best {
                            None => true,
                            Some((j, b)) => d2 < b || (d2 == b && i < j),
                        };
                        if better {
                            best = Some((i, d2));
                        }
                    }
                }
            }
        }
        let (i, d2) = best?;
        let d = d2.sqrt();
        (d <= self.cell).then_some((i, d))
    }
}

/// Geometric descriptor per keypoint: the normalized feature of the nearest
/// featured point to the keypoint's back-projection, or zero (mask set) when
/// the depth is invalid or nothing lies within `tau_g`.
///
/// `features.cloud` must be expressed in the camera frame of `depth`.
pub fn lookup_geometric(
    kps: &KeypointSet,
    depth: &DepthMap,
    k: &CameraIntrinsics,
    features: &PointFeatures,
    tau_g: f64,
) -> Result<DescriptorSet> {
    if !(tau_g > 0.0) || !tau_g.is_finite() {
        return Err(Error::invalid(format!("tau_g must be positive, got {tau_g}")));
    }
    let dim = features.dim;
    let index = SpatialHash::new(&features.cloud.points, tau_g);
    let rows = par::map_slice(&kps.pixels, |&(u, v)| {
        let hit = depth.depth_at(u, v).and_then(|d| {
            let d = d as f64;
            let q = Vector3::new((u as f64 - k.cx) / k.fx * d, (v as f64 - k.cy) / k.fy * d, d);
            index.nearest_within(&q)
        });
        match hit {
            Some((i, _)) => {
                let mut f = features.row(i).to_vec();
                l2_normalize(&mut f);
                let zero = f.iter().all(|x| *x == 0.0);
                (f, zero)
            }
            None => (vec![0.0; dim], true),
        }
    });
    let mut data = Vec::with_capacity(rows.len() * dim);
    let mut mask = Vec::with_capacity(rows.len());
    for (f, zero) in rows {
        data.extend(f);
        mask.push(zero);
    }
    DescriptorSet::new(dim, data, kps.clone(), mask)
}
