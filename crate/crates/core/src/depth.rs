//! Depth rendering, morphological densification and lifting back to 3D.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, PointCloud, Pose};
use crate::par;

/// Row-major depth image in meters; `0.0` marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width.checked_mul(height) != Some(data.len()) {
            return Err(Error::invalid(format!(
                "depth map {width}x{height} needs {} values, got {}",
                width.saturating_mul(height),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::invalid(format!(
                "depth value {} at index {i} is negative or non-finite",
                data[i]
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, u: usize, v: usize) -> f32 {
        self.data[v * self.width + u]
    }

    /// Depth at `(u, v)` if the pixel exists and is valid.
    pub fn depth_at(&self, u: usize, v: usize) -> Option<f32> {
        if u >= self.width || v >= self.height {
            return None;
        }
        let d = self.get(u, v);
        (d > 0.0).then_some(d)
    }

    pub fn set(&mut self, u: usize, v: usize, d: f32) {
        assert!(d.is_finite() && d >= 0.0, "invalid depth {d}");
        self.data[v * self.width + u] = d;
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|d| **d > 0.0).count()
    }

    pub fn max_depth(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }

    /// Apply `f` to every valid pixel; results `<= 0` become invalid.
    pub fn map_valid(&self, mut f: impl FnMut(usize, f32) -> f32) -> DepthMap {
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                if d > 0.0 {
                    let out = f(i, d);
                    if out.is_finite() && out > 0.0 {
                        out
                    } else {
                        0.0
                    }
                } else {
                    0.0
                }
            })
            .collect();
        DepthMap {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Z-buffer render of `cloud` seen from `camera_pose` (world -> camera).
///
/// Points round to the nearest pixel; out-of-image and behind-camera points
/// are dropped. Each pixel keeps the smallest depth that lands on it.
pub fn render_depth(cloud: &PointCloud, camera_pose: &Pose, k: &CameraIntrinsics) -> DepthMap {
    let (w, h) = (k.width, k.height);
    let hits: Vec<Option<(usize, f32)>> = par::map_slice(&cloud.points, |p| {
        let q = camera_pose.apply(p);
        if !(q.z > 0.0) {
            return None;
        }
        let u = (k.fx * q.x / q.z + k.cx).round();
        let v = (k.fy * q.y / q.z + k.cy).round();
        if u < 0.0 || v < 0.0 || u >= w as f64 || v >= h as f64 {
            return None;
        }
        let d = q.z as f32;
        (d > 0.0 && d.is_finite()).then_some((v as usize * w + u as usize, d))
    });
    let mut data = vec![0.0f32; w * h];
    for (idx, d) in hits.into_iter().flatten() {
        let cur = &mut data[idx];
        if *cur == 0.0 || d < *cur {
            *cur = d;
        }
    }
    DepthMap {
        width: w,
        height: h,
        data,
    }
}

/// One point per valid pixel plus the `(u, v)` it came from.
pub fn depth_to_points(d: &DepthMap, k: &CameraIntrinsics) -> (PointCloud, Vec<(usize, usize)>) {
    let mut points = Vec::with_capacity(d.valid_count());
    let mut pixels = Vec::with_capacity(points.capacity());
    for v in 0..d.height {
        for u in 0..d.width {
            let z = d.get(u, v) as f64;
            if z > 0.0 {
                points.push(Vector3::new(
                    (u as f64 - k.cx) / k.fx * z,
                    (v as f64 - k.cy) / k.fy * z,
                    z,
                ));
                pixels.push((u, v));
            }
        }
    }
    (PointCloud { points }, pixels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelShape {
    /// Manhattan ball.
    Diamond,
    /// Square.
    Full,
}

/// Structuring element. `radius` 3 is a 7x7 extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Kernel {
    pub shape: KernelShape,
    pub radius: usize,
}

impl Kernel {
    pub const fn diamond(radius: usize) -> Self {
        Self {
            shape: KernelShape::Diamond,
            radius,
        }
    }

    pub const fn full(radius: usize) -> Self {
        Self {
            shape: KernelShape::Full,
            radius,
        }
    }

    pub fn offsets(&self) -> Vec<(isize, isize)> {
        let r = self.radius as isize;
        let mut out = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                let keep = match self.shape {
                    KernelShape::Diamond => dx.abs() + dy.abs() <= r,
                    KernelShape::Full => true,
                };
                if keep {
                    out.push((dx, dy));
                }
            }
        }
        out
    }
}

impl Default for Kernel {
    fn default() -> Self {
        Kernel::diamond(3)
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.shape {
            KernelShape::Diamond => "DIAMOND",
            KernelShape::Full => "FULL",
        };
        write!(f, "{name}_KERNEL_{}", 2 * self.radius + 1)
    }
}

impl FromStr for Kernel {
    type Err = Error;

    /// Accepts `DIAMOND_KERNEL_<n>` / `FULL_KERNEL_<n>` with odd extent `n`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown kernel `{s}`"));
        let upper = s.trim().to_ascii_uppercase();
        let (shape, extent) = if let Some(n) = upper.strip_prefix("DIAMOND_KERNEL_") {
            (KernelShape::Diamond, n)
        } else if let Some(n) = upper.strip_prefix("FULL_KERNEL_") {
            (KernelShape::Full, n)
        } else {
            return Err(bad());
        };
        let extent: usize = extent.parse().map_err(|_| bad())?;
        if extent < 3 || extent.is_multiple_of(2) {
            return Err(bad());
        }
        Ok(Kernel {
            shape,
            radius: extent / 2,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DensifyMode {
    #[default]
    Fast,
    Multiscale,
}

impl FromStr for DensifyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "fast" => Ok(DensifyMode::Fast),
            "multiscale" => Ok(DensifyMode::Multiscale),
            other => Err(Error::Config(format!("unknown densify mode `{other}`"))),
        }
    }
}

impl fmt::Display for DensifyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DensifyMode::Fast => "fast",
            DensifyMode::Multiscale => "multiscale",
        })
    }
}

/// Radii used by [`DensifyMode::Multiscale`], smallest support first.
pub const MULTISCALE_RADII: [usize; 3] = [3, 5, 7];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensifyOptions {
    pub mode: DensifyMode,
    pub kernel: Kernel,
    /// Scene depth bound for the inversion `inv(d) = max_depth + 1 - d`.
    pub max_depth: f64,
    /// Enclosed holes up to this many pixels are filled after closing.
    pub max_hole_area: usize,
}

impl Default for DensifyOptions {
    fn default() -> Self {
        Self {
            mode: DensifyMode::Fast,
            kernel: Kernel::default(),
            max_depth: 10.0,
            max_hole_area: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Densified {
    pub map: DepthMap,
    /// Pixels that became valid.
    pub filled: usize,
    /// Set when the input had no valid pixel and was returned unchanged.
    pub all_invalid: bool,
}

/// Fill holes in a sparse depth map; valid pixels are never modified.
///
/// Each pass is a grey-level closing of the inverted depth (near surfaces
/// carry the largest values) whose result is written only into invalid
/// pixels, so the valid mask grows by exactly the binary closing of the
/// input mask. Enclosed holes smaller than `max_hole_area` are then filled
/// inward from their rim. Both steps are idempotent.
pub fn densify(d: &DepthMap, opts: &DensifyOptions) -> Densified {
    let before = d.valid_count();
    if before == 0 {
        return Densified {
            map: d.clone(),
            filled: 0,
            all_invalid: true,
        };
    }
    let bound = opts.max_depth.max(d.max_depth() as f64) + 1.0;
    let mut map = d.clone();
    match opts.mode {
        DensifyMode::Fast => close_holes(&mut map, &opts.kernel, bound),
        DensifyMode::Multiscale => {
            for r in MULTISCALE_RADII {
                close_holes(&mut map, &Kernel::diamond(r), bound);
            }
        }
    }
    fill_enclosed_holes(&mut map, opts.max_hole_area);
    let filled = map.valid_count() - before;
    Densified {
        map,
        filled,
        all_invalid: false,
    }
}

/// Grey closing of the inverted depth, assigned to invalid pixels only.
fn close_holes(map: &mut DepthMap, kernel: &Kernel, bound: f64) {
    let (w, h) = (map.width, map.height);
    let offsets = kernel.offsets();
    let inv: Vec<f64> = map
        .data
        .iter()
        .map(|&d| if d > 0.0 { bound - d as f64 } else { 0.0 })
        .collect();
    // Out-of-image samples are ignored by both passes.
    let window = |src: &[f64], pick: fn(f64, f64) -> f64, start: f64| -> Vec<f64> {
        let rows = par::map_range(h, |y| {
            (0..w)
                .map(|x| {
                    let mut acc = start;
                    for &(dx, dy) in &offsets {
                        let (sx, sy) = (x as isize + dx, y as isize + dy);
                        if sx >= 0 && sy >= 0 && (sx as usize) < w && (sy as usize) < h {
                            acc = pick(acc, src[sy as usize * w + sx as usize]);
                        }
                    }
                    acc
                })
                .collect::<Vec<_>>()
        });
        rows.concat()
    };
    let dilated = window(&inv, f64::max, 0.0);
    let closed = window(&dilated, f64::min, f64::INFINITY);
    for (i, d) in map.data.iter_mut().enumerate() {
        if *d == 0.0 && closed[i] > 0.0 {
            let depth = (bound - closed[i]) as f32;
            if depth > 0.0 {
                *d = depth;
            }
        }
    }
}

/// Fill 4-connected invalid regions that do not touch the border and have
/// at most `max_area` pixels. Values propagate ring by ring from the rim,
/// each pixel taking the nearest (minimum) depth among its valid 8-neighbours.
fn fill_enclosed_holes(map: &mut DepthMap, max_area: usize) {
    let (w, h) = (map.width, map.height);
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if seen[start] || map.data[start] > 0.0 {
            continue;
        }
        let mut region = Vec::new();
        let mut touches_border = false;
        seen[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            region.push(i);
            let (x, y) = (i % w, i / w);
            if x == 0 || y == 0 || x + 1 == w || y + 1 == h {
                touches_border = true;
            }
            let mut visit = |j: usize| {
                if !seen[j] && map.data[j] == 0.0 {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if touches_border || region.len() > max_area {
            continue;
        }
        let mut pending = region;
        while !pending.is_empty() {
            let ring: Vec<(usize, f32)> = pending
                .iter()
                .filter_map(|&i| {
                    let (x, y) = ((i % w) as isize, (i / w) as isize);
                    let mut best = f32::INFINITY;
                    for dy in -1..=1 {
                        for dx in -1..=1 {
                            let (sx, sy) = (x + dx, y + dy);
                            if sx < 0 || sy < 0 || sx as usize >= w || sy as usize >= h {
                                continue;
                            }
                            let v = map.data[sy as usize * w + sx as usize];
                            if v > 0.0 {
                                best = best.min(v);
                            }
                        }
                    }
                    best.is_finite().then_some((i, best))
                })
                .collect();
            if ring.is_empty() {
                break;
            }
            for &(i, v) in &ring {
                map.data[i] = v;
            }
            pending.retain(|&i| map.data[i] == 0.0);
        }
    }
}
