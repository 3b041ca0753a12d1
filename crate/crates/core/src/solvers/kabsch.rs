use nalgebra::{Matrix3, SymmetricEigen, Vector3, SVD};

use crate::error::{Error, Result};
use crate::geometry::Pose;

/// Second-largest over largest scatter eigenvalue below which a point set
/// counts as collinear.
const COLLINEAR_RATIO: f64 = 1e-12;

fn centroid(points: &[Vector3<f64>]) -> Vector3<f64> {
    points.iter().sum::<Vector3<f64>>() / points.len() as f64
}

fn check_spread(points: &[Vector3<f64>], c: &Vector3<f64>, side: &str) -> Result<()> {
    let scatter: Matrix3<f64> = points
        .iter()
        .map(|p| {
            let d = p - c;
            d * d.transpose()
        })
        .sum();
    let mut ev: Vec<f64> = SymmetricEigen::new(scatter).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 0.0) || ev[1] <= ev[0] * COLLINEAR_RATIO {
        return Err(Error::Degenerate(format!("{side} points are collinear or coincident")));
    }
    Ok(())
}

/// Least-squares rigid transform with `dst ~ R * src + t`.
///
/// Centroids are removed, the cross-covariance is decomposed by SVD and the
/// reflection case is corrected so that `det R = +1`.
pub fn kabsch_closed_form(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<Pose> {
    if src.len() != dst.len() {
        return Err(Error::invalid(format!(
            "point lists differ in length: {} vs {}",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 3 {
        return Err(Error::Degenerate(format!("need at least 3 pairs, got {}", src.len())));
    }
    let cs = centroid(src);
    let cd = centroid(dst);
    check_spread(src, &cs, "source")?;
    check_spread(dst, &cd, "target")?;

    let h: Matrix3<f64> = src
        .iter()
        .zip(dst)
        .map(|(s, d)| (d - cd) * (s - cs).transpose())
        .sum();
    let svd = SVD::new(h, true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut fix = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let r = u * fix * vt;
    let t = cd - r * cs;
    Ok(Pose::from_projected(r, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::orthonormality_error;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::FRAC_PI_2;

    fn cost(pose: &Pose, src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> f64 {
        src.iter().zip(dst).map(|(s, d)| (d - pose.apply(s)).norm_squared()).sum()
    }

    #[test]
    fn same_points_give_identity() {
        let pts = vec![Vector3::new(0.1, 0.2, 0.3), Vector3::new(1.0, -0.5, 2.0), Vector3::new(-0.7, 0.9, 0.4)];
        let p = kabsch_closed_form(&pts, &pts).unwrap();
        assert!((p.rotation() - Matrix3::identity()).abs().max() < 1e-9);
        assert!(p.translation().norm() < 1e-9);
    }

    #[test]
    fn recovers_quarter_turn() {
        let src = vec![Vector3::x(), Vector3::y(), Vector3::z()];
        let rz = Pose::from_axis_angle(&Vector3::z(), FRAC_PI_2, Vector3::zeros());
        let dst: Vec<_> = src.iter().map(|p| rz.apply(p)).collect();
        let p = kabsch_closed_form(&src, &dst).unwrap();
        assert!((p.rotation() - rz.rotation()).abs().max() < 1e-9);
        assert!(p.translation().norm() < 1e-9);
    }

    #[test]
    fn degenerate_inputs() {
        let a = vec![Vector3::zeros(), Vector3::x()];
        assert!(matches!(kabsch_closed_form(&a, &a), Err(Error::Degenerate(_))));
        let line: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(kabsch_closed_form(&line, &line), Err(Error::Degenerate(_))));
        assert!(matches!(kabsch_closed_form(&line, &line[..4]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn noisy_solution_beats_perturbations() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let truth = Pose::from_axis_angle(&Vector3::new(0.3, -0.2, 0.9), 0.8, Vector3::new(0.5, -1.0, 2.0));
        let src: Vec<_> = (0..50)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let dst: Vec<_> = src
            .iter()
            .map(|p| truth.apply(p) + Vector3::from_fn(|_, _| noise.sample(&mut rng)))
            .collect();
        let est = kabsch_closed_form(&src, &dst).unwrap();
        let best = cost(&est, &src, &dst);
        for _ in 0..1000 {
            let scale = rng.random_range(1e-4..1e-1);
            let w = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)) * scale;
            let dt = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)) * scale;
            let perturbed = Pose::from_rotation_vector(&w, Vector3::zeros()).compose(&est);
            let perturbed = Pose::new(*perturbed.rotation(), perturbed.translation() + dt).unwrap();
            assert!(cost(&perturbed, &src, &dst) >= best);
        }
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (prop::array::uniform3(-3.0f64..3.0), prop::array::uniform3(-5.0f64..5.0))
            .prop_map(|(w, t)| Pose::from_rotation_vector(&Vector3::from(w), Vector3::from(t)))
    }

    proptest! {
        #[test]
        fn rotation_is_proper(seed in any::<u64>(), n in 3usize..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut gen = || Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let src: Vec<_> = (0..n).map(|_| gen()).collect();
            let dst: Vec<_> = (0..n).map(|_| gen()).collect();
            let p = kabsch_closed_form(&src, &dst).unwrap();
            prop_assert!(orthonormality_error(p.rotation()) < 1e-9);
            prop_assert!((p.rotation().determinant() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn equivariant(seed in any::<u64>(), t1 in arb_pose(), t2 in arb_pose(), truth in arb_pose()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let src: Vec<_> = (0..8).map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            let dst: Vec<_> = src.iter().map(|p| truth.apply(p) + Vector3::from_fn(|_, _| rng.random_range(-0.05..0.05))).collect();
            let base = kabsch_closed_form(&src, &dst).unwrap();
            let src2: Vec<_> = src.iter().map(|p| t1.apply(p)).collect();
            let dst2: Vec<_> = dst.iter().map(|p| t2.apply(p)).collect();
            let moved = kabsch_closed_form(&src2, &dst2).unwrap();
            let expect = t2.compose(&base).compose(&t1.inverse());
            prop_assert!((moved.to_homogeneous() - expect.to_homogeneous()).abs().max() < 1e-9);
        }
    }
}
