use std::cmp::Ordering;

use nalgebra::{Vector2, Vector3};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::pnp::{p3p, reproject};
use super::{kabsch_closed_form, pnp_minimal, pnp_refine, RegistrationResult, Seed, SolverConfig, SolverKind};
use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::geometry::{unproject_pixel, CameraIntrinsics, Pose};
use crate::matching::{Correspondence, CorrespondenceSet};
use crate::par;

fn cmp_corr(a: &Correspondence, b: &Correspondence) -> Ordering {
    a.image_px
        .cmp(&b.image_px)
        .then(a.depth_px.cmp(&b.depth_px))
        .then(a.q.x.total_cmp(&b.q.x))
        .then(a.q.y.total_cmp(&b.q.y))
        .then(a.q.z.total_cmp(&b.q.z))
        .then(a.distance.total_cmp(&b.distance))
}

/// Permutation putting the correspondences in a content-defined order.
pub fn canonical_order(corrs: &CorrespondenceSet) -> Vec<usize> {
    let mut order: Vec<usize> = (0..corrs.len()).collect();
    order.sort_by(|&i, &j| cmp_corr(&corrs.pairs[i], &corrs.pairs[j]).then(i.cmp(&j)));
    order
}

/// FNV-1a hash of the correspondences in canonical order.
pub fn content_seed(corrs: &CorrespondenceSet) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    let mut eat = |bytes: &[u8]| {
        for b in bytes {
            h ^= *b as u64;
            h = h.wrapping_mul(PRIME);
        }
    };
    for i in canonical_order(corrs) {
        let c = &corrs.pairs[i];
        for v in [c.image_px.0, c.image_px.1, c.depth_px.0, c.depth_px.1] {
            eat(&(v as u64).to_le_bytes());
        }
        for v in [c.q.x, c.q.y, c.q.z, c.distance] {
            eat(&v.to_bits().to_le_bytes());
        }
    }
    h
}

/// Correspondences prepared for one solver, in canonical order.
struct Problem {
    kind: SolverKind,
    k: CameraIntrinsics,
    /// Canonical position -> input index.
    order: Vec<usize>,
    pixels: Vec<Vector2<f64>>,
    /// Lifted image pixels (Kabsch only); `None` where depth is invalid.
    lifted: Vec<Option<Vector3<f64>>>,
    q: Vec<Vector3<f64>>,
    /// Canonical positions that may be sampled.
    eligible: Vec<usize>,
}

impl Problem {
    fn new(
        corrs: &CorrespondenceSet,
        kind: SolverKind,
        k: &CameraIntrinsics,
        image_depth: Option<&DepthMap>,
    ) -> Result<Self> {
        let order = canonical_order(corrs);
        let sorted: Vec<&Correspondence> = order.iter().map(|&i| &corrs.pairs[i]).collect();
        let pixels = sorted
            .iter()
            .map(|c| Vector2::new(c.image_px.0 as f64, c.image_px.1 as f64))
            .collect();
        let q = sorted.iter().map(|c| c.q).collect();
        let lifted = match kind {
            SolverKind::Pnp => vec![None; sorted.len()],
            SolverKind::Kabsch => {
                let d = image_depth.ok_or_else(|| {
                    Error::invalid("kabsch needs a depth estimate for the image to lift pixels to 3D")
                })?;
                if (d.width(), d.height()) != (k.width, k.height) {
                    return Err(Error::invalid(format!(
                        "image depth is {}x{} but the camera is {}x{}",
                        d.width(),
                        d.height(),
                        k.width,
                        k.height
                    )));
                }
                sorted
                    .iter()
                    .map(|c| {
                        let (u, v) = c.image_px;
                        if u >= d.width() || v >= d.height() {
                            return Ok(None);
                        }
                        d.depth_at(u, v)
                            .map(|z| unproject_pixel(u as f64, v as f64, z as f64, k))
                            .transpose()
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        let eligible = match kind {
            SolverKind::Pnp => (0..sorted.len()).collect(),
            SolverKind::Kabsch => (0..sorted.len()).filter(|&i| lifted[i].is_some()).collect(),
        };
        Ok(Self {
            kind,
            k: *k,
            order,
            pixels,
            lifted,
            q,
            eligible,
        })
    }

    /// Residual of canonical position `i` under a camera-to-cloud pose
    /// (Kabsch) or a cloud-to-camera pose (PnP).
    #[inline]
    fn residual(&self, model: &Pose, i: usize) -> f64 {
        match self.kind {
            SolverKind::Kabsch => match &self.lifted[i] {
                Some(p) => (self.q[i] - model.apply(p)).norm(),
                None => f64::INFINITY,
            },
            SolverKind::Pnp => match reproject(model, &self.q[i], &self.k) {
                Some(r) => (r - self.pixels[i]).norm(),
                None => f64::INFINITY,
            },
        }
    }

    fn count(&self, model: &Pose, tol: f64) -> usize {
        self.eligible.iter().filter(|&&i| self.residual(model, i) <= tol).count()
    }

    fn inliers(&self, model: &Pose, tol: f64) -> Vec<usize> {
        self.eligible
            .iter()
            .copied()
            .filter(|&i| self.residual(model, i) <= tol)
            .collect()
    }

    /// Model fitted to the canonical positions in `sample`.
    fn fit(&self, sample: &[usize]) -> Option<Pose> {
        match self.kind {
            SolverKind::Kabsch => {
                let src: Vec<_> = sample.iter().map(|&i| self.lifted[i].expect("eligible")).collect();
                let dst: Vec<_> = sample.iter().map(|&i| self.q[i]).collect();
                kabsch_closed_form(&src, &dst).ok()
            }
            SolverKind::Pnp => {
                let px: Vec<_> = sample.iter().map(|&i| self.pixels[i]).collect();
                let pts: Vec<_> = sample.iter().map(|&i| self.q[i]).collect();
                if sample.len() == 4 {
                    let sq = |m: &Pose| -> f64 {
                        px.iter()
                            .zip(&pts)
                            .map(|(p, q)| reproject(m, q, &self.k).map_or(f64::INFINITY, |r| (r - p).norm_squared()))
                            .sum()
                    };
                    p3p(&px[..3], &pts[..3], &self.k)
                        .ok()?
                        .into_iter()
                        .map(|m| (sq(&m), m))
                        .filter(|(c, _)| c.is_finite())
                        .min_by(|a, b| a.0.total_cmp(&b.0))
                        .map(|(_, m)| m)
                } else {
                    pnp_minimal(&px, &pts, &self.k).ok().map(|s| s.pose.inverse())
                }
            }
        }
    }

    fn refit(&self, inliers: &[usize], model: &Pose) -> Option<Pose> {
        if inliers.len() < self.kind.min_sample() {
            return None;
        }
        match self.kind {
            SolverKind::Kabsch => {
                let src: Vec<_> = inliers.iter().map(|&i| self.lifted[i].expect("eligible")).collect();
                let dst: Vec<_> = inliers.iter().map(|&i| self.q[i]).collect();
                kabsch_closed_form(&src, &dst).ok()
            }
            SolverKind::Pnp => {
                let px: Vec<_> = inliers.iter().map(|&i| self.pixels[i]).collect();
                let pts: Vec<_> = inliers.iter().map(|&i| self.q[i]).collect();
                match pnp_refine(&px, &pts, &self.k, &model.inverse()) {
                    Ok(s) => Some(s.pose.inverse()),
                    Err(Error::NonConvergence { best, .. }) => Some(best.inverse()),
                    Err(_) => None,
                }
            }
        }
    }

    /// Internal model to the camera-to-cloud pose reported to callers.
    fn to_pose(&self, model: &Pose) -> Pose {
        match self.kind {
            SolverKind::Kabsch => *model,
            SolverKind::Pnp => model.inverse(),
        }
    }

    fn from_pose(&self, pose: &Pose) -> Pose {
        match self.kind {
            SolverKind::Kabsch => *pose,
            SolverKind::Pnp => pose.inverse(),
        }
    }
}

type Hypothesis = Option<(usize, usize, Pose)>;

/// More inliers wins; equal counts go to the earlier iteration.
fn pick(a: Hypothesis, b: Hypothesis) -> Hypothesis {
    match (a, b) {
        (None, x) | (x, None) => x,
        (Some(x), Some(y)) => {
            if y.0 > x.0 || (y.0 == x.0 && y.1 < x.1) {
                Some(y)
            } else {
                Some(x)
            }
        }
    }
}

/// Per-correspondence residuals of a camera-to-cloud `pose`, in input order.
///
/// Kabsch residuals are 3D distances in meters, PnP residuals reprojection
/// distances in pixels. Correspondences that cannot be evaluated (no image
/// depth, point behind the camera) get infinity.
pub fn residuals(
    corrs: &CorrespondenceSet,
    kind: SolverKind,
    pose: &Pose,
    k: &CameraIntrinsics,
    image_depth: Option<&DepthMap>,
) -> Result<Vec<f64>> {
    let problem = Problem::new(corrs, kind, k, image_depth)?;
    let model = problem.from_pose(pose);
    let mut out = vec![f64::INFINITY; corrs.len()];
    for (pos, &input) in problem.order.iter().enumerate() {
        out[input] = problem.residual(&model, pos);
    }
    Ok(out)
}

/// Robust pose from correspondences.
///
/// Iteration `i` draws its sample from a ChaCha8 stream keyed by
/// `(seed, i)`, so hypotheses can be scored in any order or in parallel;
/// the winner is the hypothesis with the most inliers, earliest iteration
/// first on ties. The winner is refit on its inliers and the refit is kept
/// when it does not lose inliers.
pub fn ransac(
    corrs: &CorrespondenceSet,
    cfg: &SolverConfig,
    kind: SolverKind,
    k: &CameraIntrinsics,
    image_depth: Option<&DepthMap>,
) -> Result<RegistrationResult> {
    cfg.validate(kind)?;
    if corrs.len() < cfg.sample_size {
        return Err(Error::InsufficientData {
            needed: cfg.sample_size,
            got: corrs.len(),
        });
    }
    let problem = Problem::new(corrs, kind, k, image_depth)?;
    if problem.eligible.len() < cfg.sample_size {
        return Err(Error::InsufficientData {
            needed: cfg.sample_size,
            got: problem.eligible.len(),
        });
    }
    let seed = match cfg.seed {
        Seed::Fixed(s) => s,
        Seed::Auto => content_seed(corrs),
    };
    let tol = cfg.inlier_tolerance;
    let n = problem.eligible.len();

    let best = par::map_reduce_range(
        cfg.iterations,
        None,
        |it| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(it as u64);
            let sample: Vec<usize> = index::sample(&mut rng, n, cfg.sample_size)
                .into_iter()
                .map(|j| problem.eligible[j])
                .collect();
            let model = problem.fit(&sample)?;
            Some((problem.count(&model, tol), it, model))
        },
        pick,
    );

    let Some((count, iteration, model)) = best else {
        return Ok(RegistrationResult {
            pose: Pose::identity(),
            inlier_indices: Vec::new(),
            inlier_count: 0,
            total: corrs.len(),
            success: false,
            solver_used: kind,
            seed,
            best_iteration: None,
        });
    };

    let mut chosen = model;
    let first = problem.inliers(&model, tol);
    if let Some(refit) = problem.refit(&first, &model) {
        if problem.count(&refit, tol) >= count {
            chosen = refit;
        }
    }
    // Inliers are re-derived from the reported pose so callers can reproduce
    // them exactly through `residuals`.
    let pose = problem.to_pose(&chosen);
    let model = problem.from_pose(&pose);
    let mut inlier_indices: Vec<usize> = problem
        .inliers(&model, tol)
        .into_iter()
        .map(|pos| problem.order[pos])
        .collect();
    inlier_indices.sort_unstable();
    let inlier_count = inlier_indices.len();
    Ok(RegistrationResult {
        pose,
        inlier_indices,
        inlier_count,
        total: corrs.len(),
        success: inlier_count > cfg.sample_size,
        solver_used: kind,
        seed,
        best_iteration: Some(iteration),
    })
}
