//! Pinhole cameras, rigid poses, point clouds and voxel downsampling.
//!
//! Pixel coordinates are continuous with integer pixel centers: pixel `(u, v)`
//! covers `[u - 0.5, u + 0.5) x [v - 0.5, v + 0.5)`.

use std::collections::HashMap;

use nalgebra::{Matrix3, Matrix4, Rotation3, Unit, Vector3, SVD};

use crate::error::{Error, Result};
use crate::par;

/// Orthonormality tolerance for rotations accepted by [`Pose::new`].
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Compositions after which the rotation is projected back onto SO(3).
pub const REORTHONORMALIZE_AFTER: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::invalid(format!(
                "focal lengths must be positive and finite (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image size must be non-zero"));
        }
        if !(0.0..self.width as f64).contains(&self.cx)
            || !(0.0..self.height as f64).contains(&self.cy)
        {
            return Err(Error::invalid(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Whether a continuous pixel coordinate falls inside the image.
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= -0.5 && v >= -0.5 && u < self.width as f64 - 0.5 && v < self.height as f64 - 0.5
    }

    /// Scale intrinsics to a resized image.
    pub fn resized(&self, width: usize, height: usize) -> Result<Self> {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        // Pixel centers sit at integers, so scaling happens about -0.5.
        Self::new(
            self.fx * sx,
            self.fy * sy,
            (self.cx + 0.5) * sx - 0.5,
            (self.cy + 0.5) * sy - 0.5,
            width,
            height,
        )
    }
}

/// Back-project pixel `(u, v)` at metric depth `d` into the camera frame.
pub fn unproject_pixel(u: f64, v: f64, d: f64, k: &CameraIntrinsics) -> Result<Vector3<f64>> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::invalid(format!("depth must be positive, got {d}")));
    }
    if !k.contains(u, v) {
        return Err(Error::invalid(format!(
            "pixel ({u}, {v}) outside {}x{} image",
            k.width, k.height
        )));
    }
    Ok(Vector3::new((u - k.cx) / k.fx * d, (v - k.cy) / k.fy * d, d))
}

/// Project a camera-frame point. Returns `(u, v, depth)`; bounds are the
/// caller's business.
pub fn project_point(q: &Vector3<f64>, k: &CameraIntrinsics) -> Result<(f64, f64, f64)> {
    if !(q.z > 0.0) {
        return Err(Error::BehindCamera { z: q.z });
    }
    Ok((k.fx * q.x / q.z + k.cx, k.fy * q.y / q.z + k.cy, q.z))
}

/// Rigid transform `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    chain: u32,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            chain: 0,
        }
    }

    /// Build a pose, checking that `rotation` is in SO(3).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::invalid("pose contains non-finite values"));
        }
        let err = orthonormality_error(&rotation);
        let det = rotation.determinant();
        if err >= ROTATION_TOLERANCE || (det - 1.0).abs() >= ROTATION_TOLERANCE {
            return Err(Error::invalid(format!(
                "rotation is not in SO(3): |R^T R - I|max = {err:.3e}, det = {det}"
            )));
        }
        Ok(Self {
            rotation,
            translation,
            chain: 0,
        })
    }

    /// Build a pose from any near-rotation matrix by projecting it onto SO(3).
    pub fn from_projected(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: project_to_so3(&rotation),
            translation,
            chain: 0,
        }
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = if axis.norm() == 0.0 {
            Matrix3::identity()
        } else {
            *Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle).matrix()
        };
        Self {
            rotation,
            translation,
            chain: 0,
        }
    }

    /// Rotation from a rotation vector (axis scaled by angle in radians).
    pub fn from_rotation_vector(omega: &Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: *Rotation3::new(*omega).matrix(),
            translation,
            chain: 0,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self * other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let mut out = Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
            chain: self.chain + other.chain + 1,
        };
        if out.chain > REORTHONORMALIZE_AFTER {
            out.rotation = project_to_so3(&out.rotation);
            out.chain = 0;
        }
        out
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
            chain: self.chain,
        }
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_homogeneous(m: &Matrix4<f64>) -> Result<Self> {
        let last = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if last != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::invalid(format!(
                "homogeneous pose must end in `0 0 0 1`, got {last:?}"
            )));
        }
        Self::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    /// Geodesic rotation angle of this pose in radians.
    pub fn angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }
}

/// `max |R^T R - I|`.
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).abs().max()
}

/// Nearest rotation in the Frobenius sense (SVD polar factor with det fix).
pub fn project_to_so3(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = SVD::new(*m, true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * vt
}

/// Rotation angle of `r` in radians, stable near 0 and near pi.
///
/// Same value as `acos((tr(R) - 1) / 2)`, computed as an `atan2` of the
/// antisymmetric and symmetric parts.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let cos = (r.trace() - 1.0) / 2.0;
    let axis = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    let sin = axis.norm() / 2.0;
    sin.atan2(cos)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid(format!("point {i} has non-finite coordinates")));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl From<Vec<Vector3<f64>>> for PointCloud {
    fn from(points: Vec<Vector3<f64>>) -> Self {
        Self { points }
    }
}

pub fn transform_points(cloud: &PointCloud, pose: &Pose) -> PointCloud {
    PointCloud {
        points: par::map_slice(&cloud.points, |p| pose.apply(p)),
    }
}

pub(crate) fn voxel_key(p: &Vector3<f64>, voxel: f64) -> [i64; 3] {
    [
        (p.x / voxel).floor() as i64,
        (p.y / voxel).floor() as i64,
        (p.z / voxel).floor() as i64,
    ]
}

/// Result of [`voxel_downsample`].
#[derive(Debug, Clone, PartialEq)]
pub struct Downsampled {
    pub cloud: PointCloud,
    /// `index_map[i]` is the output index representing input point `i`.
    pub index_map: Vec<usize>,
    /// Integer cell of each output point.
    pub cells: Vec<[i64; 3]>,
}

/// Replace each occupied voxel cell by the centroid of its members.
///
/// Output points are ordered by cell key, so the result does not depend on
/// input order.
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> Result<Downsampled> {
    if !(voxel > 0.0) || !voxel.is_finite() {
        return Err(Error::invalid(format!("voxel size must be positive, got {voxel}")));
    }
    let keys: Vec<[i64; 3]> = par::map_slice(&cloud.points, |p| voxel_key(p, voxel));
    let mut cells: Vec<[i64; 3]> = keys.clone();
    cells.sort_unstable();
    cells.dedup();
    let slot: HashMap<[i64; 3], usize> = cells.iter().enumerate().map(|(i, k)| (*k, i)).collect();

    let mut sums = vec![Vector3::zeros(); cells.len()];
    let mut lo = vec![Vector3::repeat(f64::INFINITY); cells.len()];
    let mut hi = vec![Vector3::repeat(f64::NEG_INFINITY); cells.len()];
    let mut counts = vec![0usize; cells.len()];
    let mut index_map = Vec::with_capacity(keys.len());
    for (p, key) in cloud.points.iter().zip(&keys) {
        let s = slot[key];
        sums[s] += p;
        lo[s] = lo[s].inf(p);
        hi[s] = hi[s].sup(p);
        counts[s] += 1;
        index_map.push(s);
    }
    // Clamping to the member bounding box keeps rounding from pushing a
    // centroid into a neighbouring cell.
    let points = sums
        .iter()
        .zip(&counts)
        .zip(lo.iter().zip(&hi))
        .map(|((s, &n), (l, h))| (s / n as f64).sup(l).inf(h))
        .collect();
    Ok(Downsampled {
        cloud: PointCloud { points },
        index_map,
        cells,
    })
}
