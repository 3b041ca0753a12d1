//! End-to-end registration of one image against one point cloud:
//! render, densify, describe, look up geometry, fuse, match, solve.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::depth::{densify, render_depth, DepthMap};
use crate::error::{Error, Result};
use crate::evaluation::{correspondence_residuals, PairRecord};
use crate::features::{
    fuse, lookup_geometric, sample_grid_keypoints, DescriptorSet, DiffusionProjector, FeatureMap, PointFeatures,
};
use crate::geometry::{transform_points, CameraIntrinsics, PointCloud, Pose};
use crate::io::{self, PipelineConfig};
use crate::matching::{mutual_nn_match, CorrespondenceSet};
use crate::solvers::{ransac, RegistrationResult};

/// File names inside a pair directory.
pub mod files {
    pub const SCENE: &str = "scene.ply";
    pub const DEPTH_POSE: &str = "depth_pose.txt";
    pub const INTRINSICS: &str = "intrinsics.txt";
    pub const RGB_FEATURES: &str = "feats_rgb.frgf";
    pub const DEPTH_FEATURES: &str = "feats_dep.frgf";
    pub const IMAGE_DEPTH: &str = "depth.frgd";
    pub const IMAGE_DEPTH_PNG: &str = "depth.png";
    pub const IMAGE_FEATURES: &str = "image_feats.ply";
    pub const GT_POSE: &str = "gt_pose.txt";
    pub const GT_DEPTH: &str = "gt_depth.frgd";
    pub const LABELS: &str = "labels.csv";
    pub const CONFIG: &str = "pipeline.cfg";
}

/// Everything one registration needs.
#[derive(Debug, Clone)]
pub struct PairInputs {
    pub name: String,
    pub cloud: PointCloud,
    /// Per-point geometric features, cloud frame.
    pub scene_features: Option<PointFeatures>,
    /// Cloud-to-depth-camera pose the cloud is rendered with.
    pub depth_pose: Pose,
    /// Shared by the image and the rendered depth map.
    pub k: CameraIntrinsics,
    pub rgb_features: FeatureMap,
    pub depth_features: FeatureMap,
    /// Estimated metric depth of the image; enables Kabsch.
    pub image_depth: Option<DepthMap>,
    /// Per-point geometric features of the lifted image depth, image camera frame.
    pub image_features: Option<PointFeatures>,
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Camera-to-cloud pose of the image.
    pub pose: Pose,
    /// Image-side depth without estimation error.
    pub depth: DepthMap,
}

fn point_features(data: io::PlyData) -> Result<Option<PointFeatures>> {
    if data.feature_dim == 0 {
        return Ok(None);
    }
    PointFeatures::new(data.cloud, data.feature_dim, data.features).map(Some)
}

fn optional<T>(path: PathBuf, read: impl FnOnce(&Path) -> Result<T>) -> Result<Option<T>> {
    if path.exists() {
        read(&path).map(Some)
    } else {
        Ok(None)
    }
}

impl PairInputs {
    /// Load a pair directory laid out as in [`files`].
    pub fn load_dir(dir: impl AsRef<Path>, cfg: &PipelineConfig) -> Result<Self> {
        let dir = dir.as_ref();
        let scene = io::read_ply(dir.join(files::SCENE))?;
        let cloud = scene.cloud.clone();
        let image_depth = match optional(dir.join(files::IMAGE_DEPTH), |p| io::read_depth(p, cfg.depth_png_scale))? {
            Some(d) => Some(d),
            None => optional(dir.join(files::IMAGE_DEPTH_PNG), |p| io::read_depth(p, cfg.depth_png_scale))?,
        };
        let image_features = match optional(dir.join(files::IMAGE_FEATURES), |p| io::read_ply(p))? {
            Some(d) => point_features(d).map_err(|e| e.at(dir.join(files::IMAGE_FEATURES)))?,
            None => None,
        };
        Ok(Self {
            name: dir
                .file_name()
                .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned()),
            cloud,
            scene_features: point_features(scene).map_err(|e| e.at(dir.join(files::SCENE)))?,
            depth_pose: io::read_pose(dir.join(files::DEPTH_POSE))?,
            k: io::read_intrinsics(dir.join(files::INTRINSICS))?,
            rgb_features: io::read_frgf(dir.join(files::RGB_FEATURES))?,
            depth_features: io::read_frgf(dir.join(files::DEPTH_FEATURES))?,
            image_depth,
            image_features,
        })
    }
}

impl GroundTruth {
    /// `None` when the directory carries no ground truth.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Option<Self>> {
        let dir = dir.as_ref();
        let (pose, depth) = (dir.join(files::GT_POSE), dir.join(files::GT_DEPTH));
        if !pose.exists() || !depth.exists() {
            return Ok(None);
        }
        Ok(Some(Self {
            pose: io::read_pose(pose)?,
            depth: io::read_depth(depth, 1000.0)?,
        }))
    }
}

/// Timing and counters of one pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageResult {
    pub stage: &'static str,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub outputs: Vec<PathBuf>,
    pub wall_ms: f64,
    pub counters: BTreeMap<&'static str, f64>,
}

impl StageResult {
    /// One JSON object per line, for structured logs.
    pub fn json_line(&self) -> String {
        serde_json::to_string(self).expect("stage result serializes")
    }
}

/// Everything up to and including matching.
#[derive(Debug, Clone)]
pub struct MatchOutput {
    pub dense_depth: DepthMap,
    pub correspondences: CorrespondenceSet,
    pub stages: Vec<StageResult>,
}

#[derive(Debug, Clone)]
pub struct RegisterOutput {
    pub dense_depth: DepthMap,
    pub correspondences: CorrespondenceSet,
    pub result: RegistrationResult,
    pub stages: Vec<StageResult>,
}

impl RegisterOutput {
    /// Score against ground truth; failed registrations get worst-case errors.
    pub fn record(&self, name: &str, gt: &GroundTruth, k: &CameraIntrinsics) -> PairRecord {
        score(name, &self.correspondences, &self.result, gt, k)
    }
}

/// Ground-truth record of a registration result.
pub fn score(
    name: &str,
    corrs: &CorrespondenceSet,
    result: &RegistrationResult,
    gt: &GroundTruth,
    k: &CameraIntrinsics,
) -> PairRecord {
    let residuals = correspondence_residuals(corrs, &gt.pose, &gt.depth, k);
    let estimate = result.success.then_some(&result.pose);
    PairRecord::new(name, residuals, estimate, &gt.pose)
}

struct Stages(Vec<StageResult>);

impl Stages {
    fn run<T>(
        &mut self,
        stage: &'static str,
        f: impl FnOnce(&mut BTreeMap<&'static str, f64>) -> Result<T>,
    ) -> Result<T> {
        let start = Instant::now();
        let mut counters = BTreeMap::new();
        let out = f(&mut counters).map_err(|e| e.in_stage(stage))?;
        self.0.push(StageResult {
            stage,
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            counters,
        });
        Ok(out)
    }
}

/// Geometric descriptors for both sides, or `None` when either side lacks
/// the inputs for a lookup.
fn geometric_blocks(
    inputs: &PairInputs,
    cfg: &PipelineConfig,
    image: &DescriptorSet,
    depth: &DescriptorSet,
    dense: &DepthMap,
) -> Result<Option<(DescriptorSet, DescriptorSet)>> {
    let (Some(scene), Some(img_feats), Some(img_depth)) =
        (&inputs.scene_features, &inputs.image_features, &inputs.image_depth)
    else {
        return Ok(None);
    };
    if scene.dim != img_feats.dim {
        return Err(Error::invalid(format!(
            "geometric feature dims differ: scene {} vs image {}",
            scene.dim, img_feats.dim
        )));
    }
    let in_camera = PointFeatures {
        cloud: transform_points(&scene.cloud, &inputs.depth_pose),
        dim: scene.dim,
        data: scene.data.clone(),
    };
    let g_depth = lookup_geometric(&depth.keypoints, dense, &inputs.k, &in_camera, cfg.tau_g)?;
    let g_image = lookup_geometric(&image.keypoints, img_depth, &inputs.k, img_feats, cfg.tau_g)?;
    Ok(Some((g_image, g_depth)))
}

/// Render, densify, describe, fuse and match.
pub fn run_matching(inputs: &PairInputs, cfg: &PipelineConfig) -> Result<MatchOutput> {
    let mut stages = Stages(Vec::new());
    let k = &inputs.k;

    let sparse = stages.run("render", |c| {
        let d = render_depth(&inputs.cloud, &inputs.depth_pose, k);
        c.insert("points", inputs.cloud.len() as f64);
        c.insert("valid_pixels", d.valid_count() as f64);
        Ok(d)
    })?;

    let dense = stages.run("densify", |c| {
        let out = densify(&sparse, &cfg.densify_options());
        c.insert("filled", out.filled as f64);
        c.insert("valid_pixels", out.map.valid_count() as f64);
        c.insert("all_invalid", out.all_invalid as u8 as f64);
        Ok(out.map)
    })?;

    let (image_kps, depth_kps) = stages.run("keypoints", |c| {
        let grid = sample_grid_keypoints(k.width, k.height, cfg.stride)?;
        let depth_kps = grid.filtered(|u, v| dense.depth_at(u, v).is_some());
        c.insert("image", grid.len() as f64);
        c.insert("depth", depth_kps.len() as f64);
        Ok((grid, depth_kps))
    })?;

    let (image_diff, depth_diff) = stages.run("describe", |c| {
        let (gh, gw) = (cfg.grid_height, cfg.grid_width);
        let rgb = inputs.rgb_features.clone().with_grid(gh, gw);
        let dep = inputs.depth_features.clone().with_grid(gh, gw);
        let projector = DiffusionProjector::fit(&[&rgb, &dep], &cfg.layers, cfg.pca_dim)?;
        let a = projector.describe(&rgb, &image_kps)?;
        let b = projector.describe(&dep, &depth_kps)?;
        c.insert("dim", a.dim as f64);
        Ok((a, b))
    })?;

    let geometric = stages.run("lookup", |c| {
        let g = geometric_blocks(inputs, cfg, &image_diff, &depth_diff, &dense)?;
        if let Some((gi, gd)) = &g {
            let zeros = |d: &DescriptorSet| d.zero_geometry_mask.iter().filter(|m| **m).count() as f64;
            c.insert("image_zero", zeros(gi));
            c.insert("depth_zero", zeros(gd));
        }
        c.insert("enabled", g.is_some() as u8 as f64);
        Ok(g)
    })?;

    let (image_desc, depth_desc) = stages.run("fuse", |c| {
        c.insert("w", cfg.w);
        match geometric {
            Some((gi, gd)) => Ok((fuse(&image_diff, &gi, cfg.w as f32)?, fuse(&depth_diff, &gd, cfg.w as f32)?)),
            None => Ok((image_diff, depth_diff)),
        }
    })?;

    let correspondences = stages.run("match", |c| {
        let matches = mutual_nn_match(&image_desc, &depth_desc)?;
        let set = CorrespondenceSet::from_matches(&matches, &image_desc, &depth_desc, &dense, k, &inputs.depth_pose)?;
        c.insert("matches", set.len() as f64);
        Ok(set)
    })?;

    Ok(MatchOutput {
        dense_depth: dense,
        correspondences,
        stages: stages.0,
    })
}

/// RANSAC over matched correspondences with the configured solver; `Auto`
/// picks Kabsch exactly when `image_depth` is given.
pub fn run_solve(
    corrs: &CorrespondenceSet,
    k: &CameraIntrinsics,
    image_depth: Option<&DepthMap>,
    cfg: &PipelineConfig,
) -> Result<(RegistrationResult, StageResult)> {
    let mut stages = Stages(Vec::new());
    let result = stages.run("solve", |c| {
        let kind = cfg.solver.resolve(image_depth.is_some());
        let r = ransac(corrs, &cfg.solver_config(kind), kind, k, image_depth)?;
        c.insert("inliers", r.inlier_count as f64);
        c.insert("success", r.success as u8 as f64);
        Ok(r)
    })?;
    Ok((result, stages.0.remove(0)))
}

/// Run every stage and solve for the camera-to-cloud pose.
///
/// A registration that runs to completion but finds no consensus returns
/// `Ok` with `result.success == false`.
pub fn run_register(inputs: &PairInputs, cfg: &PipelineConfig) -> Result<RegisterOutput> {
    let m = run_matching(inputs, cfg)?;
    let (result, solve) = run_solve(&m.correspondences, &inputs.k, inputs.image_depth.as_ref(), cfg)?;
    let mut stages = m.stages;
    stages.push(solve);
    Ok(RegisterOutput {
        dense_depth: m.dense_depth,
        correspondences: m.correspondences,
        result,
        stages,
    })
}
