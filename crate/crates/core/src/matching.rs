//! Mutual nearest-neighbour matching of image and depth descriptors.

use nalgebra::Vector3;

use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::features::DescriptorSet;
use crate::geometry::{unproject_pixel, CameraIntrinsics, Pose};
use crate::par;

/// Query rows handled per parallel task.
const BLOCK_ROWS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    /// Row in the image-side set.
    pub image: usize,
    /// Row in the depth-side set.
    pub depth: usize,
    /// Euclidean descriptor distance.
    pub distance: f64,
}

/// Squared Euclidean distance with a fixed summation order.
#[inline]
pub fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = *x as f64 - *y as f64;
        acc += d * d;
    }
    acc
}

/// `(distance, index)` ordering with the lower index winning ties.
#[inline]
fn better(d: f64, i: usize, best: (f64, usize)) -> bool {
    d < best.0 || (d == best.0 && i < best.1)
}

/// Pairs `(i, j)` where `j` is the nearest depth descriptor to image
/// descriptor `i` and `i` is the nearest image descriptor to `j`.
///
/// Ties resolve to the lowest index in both directions. Output is sorted by
/// image row. The distance matrix is swept in row blocks, each block
/// reporting its row minima and its per-column minima; the column minima
/// merge with the same total order, so results do not depend on scheduling.
pub fn mutual_nn_match(image: &DescriptorSet, depth: &DescriptorSet) -> Result<Vec<Match>> {
    if image.is_empty() || depth.is_empty() {
        return Ok(Vec::new());
    }
    if image.dim != depth.dim {
        return Err(Error::invalid(format!(
            "descriptor dimensions differ: {} vs {}",
            image.dim, depth.dim
        )));
    }
    let (n, m) = (image.len(), depth.len());
    let blocks = n.div_ceil(BLOCK_ROWS);
    let partial = par::map_range(blocks, |b| {
        let rows = b * BLOCK_ROWS..((b + 1) * BLOCK_ROWS).min(n);
        let mut col_best = vec![(f64::INFINITY, usize::MAX); m];
        let mut row_best = Vec::with_capacity(rows.len());
        for i in rows {
            let a = image.row(i);
            let mut best = (f64::INFINITY, usize::MAX);
            for (j, cb) in col_best.iter_mut().enumerate() {
                let d = squared_distance(a, depth.row(j));
                if better(d, j, best) {
                    best = (d, j);
                }
                if better(d, i, *cb) {
                    *cb = (d, i);
                }
            }
            row_best.push(best);
        }
        (row_best, col_best)
    });
    let mut row_best = Vec::with_capacity(n);
    let mut col_best = vec![(f64::INFINITY, usize::MAX); m];
    for (rows, cols) in partial {
        row_best.extend(rows);
        for (cb, c) in col_best.iter_mut().zip(cols) {
            if better(c.0, c.1, *cb) {
                *cb = c;
            }
        }
    }
    Ok(row_best
        .iter()
        .enumerate()
        .filter(|(i, (_, j))| col_best[*j].1 == *i)
        .map(|(i, &(d2, j))| Match {
            image: i,
            depth: j,
            distance: d2.sqrt(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub image_px: (usize, usize),
    pub depth_px: (usize, usize),
    /// Point in the cloud frame.
    pub q: Vector3<f64>,
    pub distance: f64,
}

/// Pixel-to-point correspondences between an image and a point cloud.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrespondenceSet {
    pub pairs: Vec<Correspondence>,
    /// Descriptors on the image side that took part in matching.
    pub n_image: usize,
    /// Descriptors on the depth side that took part in matching.
    pub n_depth: usize,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Lift matched depth pixels to the cloud frame.
    ///
    /// `depth_pose` maps cloud coordinates into the depth camera, i.e. the
    /// pose `depth` was rendered with.
    pub fn from_matches(
        matches: &[Match],
        image: &DescriptorSet,
        depth_side: &DescriptorSet,
        depth: &DepthMap,
        k_depth: &CameraIntrinsics,
        depth_pose: &Pose,
    ) -> Result<Self> {
        let to_cloud = depth_pose.inverse();
        let mut pairs = Vec::with_capacity(matches.len());
        for m in matches {
            let image_px = image.keypoints.pixels[m.image];
            let depth_px = depth_side.keypoints.pixels[m.depth];
            let d = depth.depth_at(depth_px.0, depth_px.1).ok_or_else(|| {
                Error::invalid(format!("matched depth pixel {depth_px:?} has no valid depth"))
            })?;
            let cam = unproject_pixel(depth_px.0 as f64, depth_px.1 as f64, d as f64, k_depth)?;
            pairs.push(Correspondence {
                image_px,
                depth_px,
                q: to_cloud.apply(&cam),
                distance: m.distance,
            });
        }
        Ok(Self {
            pairs,
            n_image: image.len(),
            n_depth: depth_side.len(),
        })
    }
}
