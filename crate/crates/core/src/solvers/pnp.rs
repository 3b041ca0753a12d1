use nalgebra::{Complex, DMatrix, Matrix3, Matrix4, Matrix6, SymmetricEigen, Vector2, Vector3, Vector6};

use super::kabsch::kabsch_closed_form;
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose};

/// Gauss-Newton step budget.
pub const MAX_GN_STEPS: usize = 100;

/// Smallest over largest scatter eigenvalue under which 3D points are
/// treated as coplanar and the DLT is skipped.
const PLANAR_RATIO: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnpSolution {
    /// Camera-to-world pose.
    pub pose: Pose,
    /// Root-mean-square reprojection error in pixels.
    pub rms: f64,
    pub iterations: usize,
}

/// Camera pose from pixel / 3D point pairs.
///
/// Returns the camera-to-world pose minimizing the squared reprojection
/// error. Six or more non-coplanar points start from a normalized DLT; four
/// or five points, or coplanar sets, start from a three-point solution picked
/// by total reprojection error. Gauss-Newton with backtracking refines the
/// estimate.
pub fn pnp_minimal(pixels: &[Vector2<f64>], points: &[Vector3<f64>], k: &CameraIntrinsics) -> Result<PnpSolution> {
    check_pairs(pixels, points)?;
    let init = initial_pose(pixels, points, k)?;
    let (pose, rms, iterations) = refine(pixels, points, k, init)?;
    Ok(PnpSolution {
        pose: pose.inverse(),
        rms,
        iterations,
    })
}

/// Refine a camera-to-world pose on the given pairs.
pub fn pnp_refine(
    pixels: &[Vector2<f64>],
    points: &[Vector3<f64>],
    k: &CameraIntrinsics,
    camera_to_world: &Pose,
) -> Result<PnpSolution> {
    check_pairs(pixels, points)?;
    let (pose, rms, iterations) = refine(pixels, points, k, camera_to_world.inverse())?;
    Ok(PnpSolution {
        pose: pose.inverse(),
        rms,
        iterations,
    })
}

fn check_pairs(pixels: &[Vector2<f64>], points: &[Vector3<f64>]) -> Result<()> {
    if pixels.len() != points.len() {
        return Err(Error::invalid(format!(
            "{} pixels but {} points",
            pixels.len(),
            points.len()
        )));
    }
    if pixels.len() < 4 {
        return Err(Error::InsufficientData {
            needed: 4,
            got: pixels.len(),
        });
    }
    Ok(())
}

fn initial_pose(pixels: &[Vector2<f64>], points: &[Vector3<f64>], k: &CameraIntrinsics) -> Result<Pose> {
    if points.len() >= 6 && !is_planar(points) {
        if let Ok(p) = dlt(pixels, points, k) {
            return Ok(p);
        }
    }
    let (a, b, c) = spread_triple(points)?;
    let triple = [a, b, c];
    let px: Vec<_> = triple.iter().map(|&i| pixels[i]).collect();
    let pts: Vec<_> = triple.iter().map(|&i| points[i]).collect();
    p3p(&px, &pts, k)?
        .into_iter()
        .map(|p| (sum_sq_reprojection(pixels, points, k, &p), p))
        .min_by(|x, y| x.0.total_cmp(&y.0))
        .map(|(_, p)| p)
        .ok_or_else(|| Error::Degenerate("no three-point solution in front of the camera".into()))
}

fn is_planar(points: &[Vector3<f64>]) -> bool {
    let c = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    let s: Matrix3<f64> = points.iter().map(|p| (p - c) * (p - c).transpose()).sum();
    let ev = SymmetricEigen::new(s).eigenvalues;
    let max = ev.max();
    max <= 0.0 || ev.min() <= max * PLANAR_RATIO
}

/// Three indices spanning a large triangle: the first point, the point
/// farthest from it, and the point farthest from the line through both.
fn spread_triple(points: &[Vector3<f64>]) -> Result<(usize, usize, usize)> {
    let a = 0;
    let b = (0..points.len())
        .max_by(|&i, &j| {
            let di = (points[i] - points[a]).norm_squared();
            let dj = (points[j] - points[a]).norm_squared();
            di.total_cmp(&dj).then(j.cmp(&i))
        })
        .unwrap_or(0);
    let ab = points[b] - points[a];
    let area = |i: usize| ab.cross(&(points[i] - points[a])).norm_squared();
    let c = (0..points.len())
        .max_by(|&i, &j| area(i).total_cmp(&area(j)).then(j.cmp(&i)))
        .unwrap_or(0);
    let scale = ab.norm_squared();
    if scale == 0.0 || area(c) <= 1e-20 * scale * scale {
        return Err(Error::Degenerate("3D points are collinear".into()));
    }
    Ok((a, b, c))
}

fn bearing(px: &Vector2<f64>, k: &CameraIntrinsics) -> Vector3<f64> {
    Vector3::new((px.x - k.cx) / k.fx, (px.y - k.cy) / k.fy, 1.0).normalize()
}

/// Normalized direct linear transform on the 3x4 projection matrix.
fn dlt(pixels: &[Vector2<f64>], points: &[Vector3<f64>], k: &CameraIntrinsics) -> Result<Pose> {
    let n = points.len();
    let c = points.iter().sum::<Vector3<f64>>() / n as f64;
    let spread = points.iter().map(|p| (p - c).norm()).sum::<f64>() / n as f64;
    if spread == 0.0 {
        return Err(Error::Degenerate("3D points coincide".into()));
    }
    let s = 3f64.sqrt() / spread;
    let mut a = DMatrix::zeros(2 * n, 12);
    for (i, (px, p)) in pixels.iter().zip(points).enumerate() {
        let x = (px.x - k.cx) / k.fx;
        let y = (px.y - k.cy) / k.fy;
        let q = (p - c) * s;
        let h = [q.x, q.y, q.z, 1.0];
        for j in 0..4 {
            a[(2 * i, j)] = h[j];
            a[(2 * i, 8 + j)] = -x * h[j];
            a[(2 * i + 1, 4 + j)] = h[j];
            a[(2 * i + 1, 8 + j)] = -y * h[j];
        }
    }
    // Null vector of A via the 12x12 normal matrix.
    let ata = a.transpose() * &a;
    let eig = SymmetricEigen::new(ata);
    let imin = eig.eigenvalues.imin();
    let v = eig.eigenvectors.column(imin);
    let mut p = nalgebra::Matrix3x4::from_fn(|r, col| v[4 * r + col]);
    // Undo the point normalization: P_world = P_norm * T.
    let mut t = Matrix4::identity() * s;
    t[(3, 3)] = 1.0;
    t.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-c * s));
    p *= t;

    let front = points
        .iter()
        .filter(|q| (p.row(2) * q.push(1.0))[0] > 0.0)
        .count();
    if 2 * front < n {
        p = -p;
    }
    let m: Matrix3<f64> = p.fixed_view::<3, 3>(0, 0).into_owned();
    let svd = m.svd(true, true);
    let scale = svd.singular_values.mean();
    if !(scale > 0.0) || m.determinant() <= 0.0 {
        return Err(Error::Degenerate("DLT produced a reflection".into()));
    }
    let t = p.column(3) / scale;
    Ok(Pose::from_projected(m / scale, t.into_owned()))
}

/// Up to four world-to-camera poses from exactly three pairs.
///
/// Solves the law-of-cosines system for the ratios `u = s2/s1`, `v = s3/s1`
/// of the ray lengths: both equations are quadratic in `u`, so their
/// resultant is a quartic in `v`.
pub(crate) fn p3p(pixels: &[Vector2<f64>], points: &[Vector3<f64>], k: &CameraIntrinsics) -> Result<Vec<Pose>> {
    let f: Vec<_> = pixels.iter().map(|p| bearing(p, k)).collect();
    let a2 = (points[1] - points[2]).norm_squared();
    let b2 = (points[0] - points[2]).norm_squared();
    let c2 = (points[0] - points[1]).norm_squared();
    if a2 == 0.0 || b2 == 0.0 || c2 == 0.0 {
        return Err(Error::Degenerate("repeated 3D point".into()));
    }
    let ca = f[1].dot(&f[2]);
    let cb = f[0].dot(&f[2]);
    let cg = f[0].dot(&f[1]);

    // p(u) = b2 u^2 + p1 u + p0, q(u) = b2 u^2 + q1 u + q0, coefficients in v.
    let p1 = [0.0, -2.0 * b2 * ca];
    let p0 = [-a2, 2.0 * a2 * cb, b2 - a2];
    let q1 = [-2.0 * b2 * cg];
    let q0 = [b2 - c2, 2.0 * c2 * cb, -c2];

    let dq0 = poly_sub(&q0, &p0);
    let dq1 = poly_sub(&q1, &p1);
    let cross = poly_sub(&poly_mul(&p1, &q0), &poly_mul(&p0, &q1));
    let quartic = poly_sub(
        &poly_scale(&poly_mul(&dq0, &dq0), b2 * b2),
        &poly_scale(&poly_mul(&dq1, &cross), b2),
    );

    let mut poses = Vec::new();
    for v in real_roots(&quartic) {
        let den = poly_eval(&dq1, v);
        if den.abs() < 1e-14 {
            continue;
        }
        let u = -poly_eval(&dq0, v) / den;
        let g = 1.0 + v * v - 2.0 * v * cb;
        if !(g > 0.0) || u <= 0.0 || v <= 0.0 {
            continue;
        }
        let s1 = (b2 / g).sqrt();
        let cam = [f[0] * s1, f[1] * (u * s1), f[2] * (v * s1)];
        if let Ok(pose) = kabsch_closed_form(points, &cam) {
            poses.push(pose);
        }
    }
    Ok(poses)
}

/// Coefficients are stored lowest degree first.
fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    (0..a.len().max(b.len()))
        .map(|i| a.get(i).copied().unwrap_or(0.0) - b.get(i).copied().unwrap_or(0.0))
        .collect()
}

fn poly_scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

fn poly_eval(a: &[f64], x: f64) -> f64 {
    a.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Real roots of a low-degree polynomial: Durand-Kerner iteration on the
/// monic polynomial, then Newton polishing of the near-real roots.
fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let mut c: Vec<f64> = coeffs.iter().map(|x| x / scale).collect();
    while c.len() > 1 && c.last().is_some_and(|x| x.abs() < 1e-14) {
        c.pop();
    }
    let deg = c.len() - 1;
    if deg == 0 {
        return Vec::new();
    }
    let lead = c[deg];
    let monic: Vec<Complex<f64>> = c.iter().map(|x| Complex::new(x / lead, 0.0)).collect();
    let eval = |z: Complex<f64>| monic.iter().rev().fold(Complex::new(0.0, 0.0), |acc, a| acc * z + a);
    // Cauchy bound keeps the start points on the scale of the roots.
    let radius = 1.0 + monic[..deg].iter().fold(0.0f64, |m, a| m.max(a.norm()));
    let seed = Complex::new(0.4, 0.9);
    let mut z: Vec<Complex<f64>> = (0..deg).map(|i| seed.powu(i as u32) * radius).collect();
    for _ in 0..500 {
        let mut moved = 0.0f64;
        for i in 0..deg {
            let mut den = Complex::new(1.0, 0.0);
            for j in 0..deg {
                if i != j {
                    den *= z[i] - z[j];
                }
            }
            if den.norm() == 0.0 {
                den = Complex::new(1e-300, 0.0);
            }
            let step = eval(z[i]) / den;
            z[i] -= step;
            moved = moved.max(step.norm() / (1.0 + z[i].norm()));
        }
        if moved < 1e-11 {
            break;
        }
    }
    let deriv: Vec<f64> = (1..=deg).map(|i| c[i] * i as f64).collect();
    let mut roots = Vec::new();
    for root in z {
        if !root.re.is_finite() || root.im.abs() > 1e-6 * (1.0 + root.re.abs()) {
            continue;
        }
        let mut x = root.re;
        for _ in 0..8 {
            let d = poly_eval(&deriv, x);
            if d == 0.0 {
                break;
            }
            let step = poly_eval(&c, x) / d;
            x -= step;
            if step.abs() <= 1e-15 * (1.0 + x.abs()) {
                break;
            }
        }
        if x.is_finite() {
            roots.push(x);
        }
    }
    roots
}

/// Projection of a world point under a world-to-camera pose, if in front.
#[inline]
pub(crate) fn reproject(w2c: &Pose, q: &Vector3<f64>, k: &CameraIntrinsics) -> Option<Vector2<f64>> {
    let x = w2c.apply(q);
    (x.z > 0.0).then(|| Vector2::new(k.fx * x.x / x.z + k.cx, k.fy * x.y / x.z + k.cy))
}

fn sum_sq_reprojection(pixels: &[Vector2<f64>], points: &[Vector3<f64>], k: &CameraIntrinsics, w2c: &Pose) -> f64 {
    pixels
        .iter()
        .zip(points)
        .map(|(px, q)| reproject(w2c, q, k).map_or(f64::INFINITY, |r| (r - px).norm_squared()))
        .sum()
}

/// Gauss-Newton on a world-to-camera pose with left-multiplied rotation
/// updates. Stops when a step no longer lowers the cost.
fn refine(
    pixels: &[Vector2<f64>],
    points: &[Vector3<f64>],
    k: &CameraIntrinsics,
    init: Pose,
) -> Result<(Pose, f64, usize)> {
    let n = pixels.len() as f64;
    let mut pose = init;
    let mut cost = sum_sq_reprojection(pixels, points, k, &pose);
    if !cost.is_finite() {
        return Err(Error::Degenerate("initial pose puts points behind the camera".into()));
    }
    for step in 0..MAX_GN_STEPS {
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for (px, q) in pixels.iter().zip(points) {
            let rq = pose.rotation() * q;
            let x = rq + pose.translation();
            let iz = 1.0 / x.z;
            let r = Vector2::new(k.fx * x.x * iz + k.cx - px.x, k.fy * x.y * iz + k.cy - px.y);
            let jp = nalgebra::Matrix2x3::new(
                k.fx * iz,
                0.0,
                -k.fx * x.x * iz * iz,
                0.0,
                k.fy * iz,
                -k.fy * x.y * iz * iz,
            );
            let mut jx = nalgebra::Matrix3x6::zeros();
            jx.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-rq.cross_matrix()));
            jx.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
            let j = jp * jx;
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        let Some(delta) = jtj.cholesky().map(|c| -c.solve(&jtr)) else {
            return Err(Error::Degenerate("reprojection Jacobian is rank deficient".into()));
        };
        let mut alpha = 1.0;
        let mut improved = None;
        for _ in 0..30 {
            let d = delta * alpha;
            let w = Vector3::new(d[0], d[1], d[2]);
            let dr = Pose::from_rotation_vector(&w, Vector3::zeros());
            let rot = dr.rotation() * pose.rotation();
            let cand = Pose::from_projected(rot, pose.translation() + Vector3::new(d[3], d[4], d[5]));
            let c = sum_sq_reprojection(pixels, points, k, &cand);
            if c < cost {
                improved = Some((cand, c));
                break;
            }
            alpha *= 0.5;
        }
        match improved {
            Some((cand, c)) => {
                let gain = cost - c;
                pose = cand;
                cost = c;
                if gain <= 1e-15 * cost || cost == 0.0 || delta.norm() < 1e-14 {
                    return Ok((pose, (cost / n).sqrt(), step + 1));
                }
            }
            None => return Ok((pose, (cost / n).sqrt(), step)),
        }
    }
    Err(Error::NonConvergence {
        iterations: MAX_GN_STEPS,
        rms: (cost / n).sqrt(),
        best: Box::new(pose.inverse()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation_angle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(320.0, 320.0, 176.0, 128.0, 352, 256).unwrap()
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        let w = Vector3::from_fn(|_, _| rng.random_range(-0.6..0.6));
        let t = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        Pose::from_rotation_vector(&w, t)
    }

    /// Points in front of the camera `c2w`, returned in world coordinates
    /// with their exact projections.
    fn scene(rng: &mut ChaCha8Rng, c2w: &Pose, n: usize) -> (Vec<Vector2<f64>>, Vec<Vector3<f64>>) {
        let kk = k();
        let mut px = Vec::new();
        let mut pts = Vec::new();
        while px.len() < n {
            let u = rng.random_range(0.0..352.0);
            let v = rng.random_range(0.0..256.0);
            let d = rng.random_range(1.0..6.0);
            let cam = Vector3::new((u - kk.cx) / kk.fx * d, (v - kk.cy) / kk.fy * d, d);
            px.push(Vector2::new(u, v));
            pts.push(c2w.apply(&cam));
        }
        (px, pts)
    }

    fn pose_err(a: &Pose, b: &Pose) -> (f64, f64) {
        let re = rotation_angle(&(a.rotation().transpose() * b.rotation())).to_degrees();
        (re, (a.translation() - b.translation()).norm())
    }

    #[test]
    fn six_points_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let truth = random_pose(&mut rng);
        let (px, pts) = scene(&mut rng, &truth, 6);
        let sol = pnp_minimal(&px, &pts, &k()).unwrap();
        assert!(sol.rms < 1e-6, "{}", sol.rms);
        let (re, te) = pose_err(&sol.pose, &truth);
        assert!(re < 1e-6 && te < 1e-8, "{re} {te}");
    }

    #[test]
    fn identity_scene() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (px, pts) = scene(&mut rng, &Pose::identity(), 10);
        let sol = pnp_minimal(&px, &pts, &k()).unwrap();
        assert!((sol.pose.to_homogeneous() - Matrix4::identity()).abs().max() < 1e-8);
    }

    #[test]
    fn four_and_five_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [4, 5] {
            for _ in 0..20 {
                let truth = random_pose(&mut rng);
                let (px, pts) = scene(&mut rng, &truth, n);
                let sol = pnp_minimal(&px, &pts, &k()).unwrap();
                let (re, te) = pose_err(&sol.pose, &truth);
                assert!(sol.rms < 1e-6 && re < 1e-4 && te < 1e-6, "n={n}: {} {re} {te}", sol.rms);
            }
        }
    }

    #[test]
    fn coplanar_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let kk = k();
        // Points on the world plane z = 4 seen by a camera looking along +z.
        let c2w = Pose::from_rotation_vector(&Vector3::new(0.1, -0.1, 0.2), Vector3::new(0.2, 0.1, 0.0));
        let pts: Vec<_> = (0..12)
            .map(|_| Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-1.5..1.5), 4.0))
            .collect();
        let w2c = c2w.inverse();
        let px: Vec<_> = pts.iter().map(|q| reproject(&w2c, q, &kk).unwrap()).collect();
        let sol = pnp_minimal(&px, &pts, &kk).unwrap();
        let (re, te) = pose_err(&sol.pose, &c2w);
        assert!(sol.rms < 1e-6 && re < 1e-4 && te < 1e-6, "{} {re} {te}", sol.rms);
    }

    #[test]
    fn noisy_fit_beats_ground_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let truth = random_pose(&mut rng);
        let (mut px, pts) = scene(&mut rng, &truth, 50);
        for p in &mut px {
            p.x += noise.sample(&mut rng);
            p.y += noise.sample(&mut rng);
        }
        let sol = pnp_minimal(&px, &pts, &k()).unwrap();
        let gt_rms = (sum_sq_reprojection(&px, &pts, &k(), &truth.inverse()) / 50.0).sqrt();
        assert!(sol.rms <= gt_rms, "{} > {gt_rms}", sol.rms);
    }

    #[test]
    fn degenerate_and_short_inputs() {
        let kk = k();
        let line: Vec<_> = (0..6).map(|i| Vector3::new(i as f64 * 0.1, 0.0, 3.0)).collect();
        let px: Vec<_> = line.iter().map(|q| reproject(&Pose::identity(), q, &kk).unwrap()).collect();
        assert!(matches!(pnp_minimal(&px, &line, &kk), Err(Error::Degenerate(_))));
        assert!(matches!(
            pnp_minimal(&px[..3], &line[..3], &kk),
            Err(Error::InsufficientData { needed: 4, got: 3 })
        ));
        assert!(pnp_minimal(&px, &line[..5], &kk).is_err());
    }

    #[test]
    fn p3p_contains_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let truth = random_pose(&mut rng);
            let (px, pts) = scene(&mut rng, &truth, 3);
            let sols = p3p(&px, &pts, &k()).unwrap();
            let best = sols
                .iter()
                .map(|p| pose_err(&p.inverse(), &truth).0)
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-5, "closest of {} solutions is {best} deg", sols.len());
        }
    }

    #[test]
    fn cubic_and_quartic_roots() {
        // (x-1)(x-2)(x+3) = x^3 - 7x + 6
        let mut r = real_roots(&[6.0, -7.0, 0.0, 1.0]);
        r.sort_by(f64::total_cmp);
        assert_eq!(r.len(), 3);
        for (a, b) in r.iter().zip([-3.0, 1.0, 2.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        // x^4 + 1 has no real roots.
        assert!(real_roots(&[1.0, 0.0, 0.0, 0.0, 1.0]).is_empty());
    }
}
