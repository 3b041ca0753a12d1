//! Registration metrics: feature-match recall (FMR), inlier ratio (IR),
//! inlier number (IN), registration recall (RR) and pose errors.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::geometry::{rotation_angle, unproject_pixel, CameraIntrinsics, Pose};
use crate::matching::CorrespondenceSet;
use crate::par;

/// Rotation error assigned to failed registrations.
pub const FAILED_RE_DEG: f64 = 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricThresholds {
    /// Correspondence inlier distance, meters.
    pub tau_c: f64,
    /// Rotation error bound for a registration hit, degrees.
    pub tau_r_deg: f64,
    /// Translation error bound for a registration hit, meters.
    pub tau_t: f64,
    /// A pair counts towards FMR when its inlier ratio exceeds this.
    pub fmr_fraction: f64,
}

impl MetricThresholds {
    pub fn indoor() -> Self {
        Self {
            tau_c: 0.3,
            tau_r_deg: 20.0,
            tau_t: 0.5,
            fmr_fraction: 0.05,
        }
    }

    pub fn outdoor() -> Self {
        Self {
            tau_c: 3.0,
            tau_r_deg: 10.0,
            tau_t: 3.0,
            fmr_fraction: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tau_c", self.tau_c),
            ("tau_r", self.tau_r_deg),
            ("tau_t", self.tau_t),
            ("fmr_fraction", self.fmr_fraction),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Ground-truth 3D distance of every correspondence, in input order.
///
/// The image pixel is lifted with the ground-truth image depth and moved
/// into the cloud frame with `gt_pose` (camera to cloud). Pixels without
/// valid ground-truth depth get infinity.
pub fn correspondence_residuals(
    corrs: &CorrespondenceSet,
    gt_pose: &Pose,
    gt_depth: &DepthMap,
    k: &CameraIntrinsics,
) -> Vec<f64> {
    par::map_slice(&corrs.pairs, |c| {
        let (u, v) = c.image_px;
        if u >= gt_depth.width() || v >= gt_depth.height() {
            return f64::INFINITY;
        }
        match gt_depth.depth_at(u, v) {
            Some(d) => match unproject_pixel(u as f64, v as f64, d as f64, k) {
                Ok(p) => (gt_pose.apply(&p) - c.q).norm(),
                Err(_) => f64::INFINITY,
            },
            None => f64::INFINITY,
        }
    })
}

/// `true` where the ground-truth distance is within `tau_c`.
pub fn correspondence_inliers(
    corrs: &CorrespondenceSet,
    gt_pose: &Pose,
    gt_depth: &DepthMap,
    k: &CameraIntrinsics,
    tau_c: f64,
) -> Vec<bool> {
    correspondence_residuals(corrs, gt_pose, gt_depth, k)
        .into_iter()
        .map(|r| r <= tau_c)
        .collect()
}

/// `(rotation error in degrees, translation error in meters)`.
pub fn pose_errors(est: &Pose, gt: &Pose) -> (f64, f64) {
    let re = rotation_angle(&(gt.rotation().transpose() * est.rotation())).to_degrees();
    let te = (est.translation() - gt.translation()).norm();
    (re, te)
}

/// Everything needed to score one pair under any thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub name: String,
    /// Ground-truth distance per correspondence.
    pub gt_residuals: Vec<f64>,
    pub success: bool,
    pub re_deg: f64,
    pub te_m: f64,
}

impl PairRecord {
    /// Record for an estimate; failed registrations get the worst errors.
    pub fn new(name: impl Into<String>, gt_residuals: Vec<f64>, estimate: Option<&Pose>, gt: &Pose) -> Self {
        let (success, re_deg, te_m) = match estimate {
            Some(p) => {
                let (re, te) = pose_errors(p, gt);
                (true, re, te)
            }
            None => (false, FAILED_RE_DEG, f64::INFINITY),
        };
        Self {
            name: name.into(),
            gt_residuals,
            success,
            re_deg,
            te_m,
        }
    }

    pub fn metrics(&self, t: &MetricThresholds) -> PairMetrics {
        let total = self.gt_residuals.len();
        let inlier_count = self.gt_residuals.iter().filter(|r| **r <= t.tau_c).count();
        let inlier_ratio = if total == 0 {
            0.0
        } else {
            inlier_count as f64 / total as f64
        };
        PairMetrics {
            name: self.name.clone(),
            inlier_ratio,
            inlier_count,
            total,
            fmr_hit: inlier_ratio > t.fmr_fraction,
            rr_hit: self.success && self.re_deg <= t.tau_r_deg && self.te_m <= t.tau_t,
            re_deg: self.re_deg,
            te_m: self.te_m,
            success: self.success,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub name: String,
    pub inlier_ratio: f64,
    pub inlier_count: usize,
    /// Number of correspondences evaluated.
    pub total: usize,
    pub fmr_hit: bool,
    pub rr_hit: bool,
    pub re_deg: f64,
    pub te_m: f64,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkMetrics {
    pub fmr: f64,
    pub ir: f64,
    #[serde(rename = "in")]
    pub inlier_number: f64,
    pub rr: f64,
    pub n_pairs: usize,
    pub n_failed: usize,
    pub thresholds: MetricThresholds,
}

/// Means over all pairs. FMR and RR are recomputed from the stored inlier
/// ratios and pose errors against `t`; IR and IN are taken as stored.
pub fn aggregate(pairs: &[PairMetrics], t: &MetricThresholds) -> Result<BenchmarkMetrics> {
    if pairs.is_empty() {
        return Err(Error::invalid("cannot aggregate an empty list of pairs"));
    }
    t.validate()?;
    let n = pairs.len() as f64;
    let mean = |f: &dyn Fn(&PairMetrics) -> f64| pairs.iter().map(f).sum::<f64>() / n;
    Ok(BenchmarkMetrics {
        fmr: mean(&|p| (p.inlier_ratio > t.fmr_fraction) as u8 as f64),
        ir: mean(&|p| p.inlier_ratio),
        inlier_number: mean(&|p| p.inlier_count as f64),
        rr: mean(&|p| (p.success && p.re_deg <= t.tau_r_deg && p.te_m <= t.tau_t) as u8 as f64),
        n_pairs: pairs.len(),
        n_failed: pairs.iter().filter(|p| !p.success).count(),
        thresholds: *t,
    })
}

/// Score every record under each threshold setting.
pub fn threshold_sweep(records: &[PairRecord], settings: &[MetricThresholds]) -> Result<Vec<BenchmarkMetrics>> {
    settings
        .iter()
        .map(|t| {
            let pairs: Vec<PairMetrics> = records.iter().map(|r| r.metrics(t)).collect();
            aggregate(&pairs, t)
        })
        .collect()
}

pub fn metrics_json(m: &BenchmarkMetrics) -> String {
    serde_json::to_string_pretty(m).expect("metrics serialize")
}

pub const PAIR_CSV_HEADER: &str = "pair,inlier_ratio,inlier_count,total,fmr_hit,rr_hit,re_deg,te_m,success";

/// One CSV row per pair under [`PAIR_CSV_HEADER`].
pub fn pairs_csv(pairs: &[PairMetrics]) -> String {
    let mut out = String::from(PAIR_CSV_HEADER);
    out.push('\n');
    for p in pairs {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            p.name,
            p.inlier_ratio,
            p.inlier_count,
            p.total,
            p.fmr_hit as u8,
            p.rr_hit as u8,
            p.re_deg,
            p.te_m,
            p.success as u8
        );
    }
    out
}

/// CSV of a threshold sweep, one row per setting.
pub fn sweep_csv(rows: &[BenchmarkMetrics]) -> String {
    let mut out = String::from("tau_c,tau_r_deg,tau_t,fmr,ir,in,rr,n_pairs\n");
    for m in rows {
        let t = &m.thresholds;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            t.tau_c, t.tau_r_deg, t.tau_t, m.fmr, m.ir, m.inlier_number, m.rr, m.n_pairs
        );
    }
    out
}
