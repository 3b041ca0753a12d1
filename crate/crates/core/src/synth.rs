//! Synthetic image/point-cloud pairs with planted correspondence structure.
//!
//! The scene is the inside of a cube-shaped room sampled uniformly on its
//! walls. The image camera and the depth render share one viewpoint, so a
//! keypoint on the image grid and the depth keypoint at the same pixel see
//! the same surface point. Planted pairs give an image keypoint and a depth
//! keypoint the same diffusion descriptor (up to noise): inlier pairs share
//! a pixel, outlier pairs join keypoints whose 3D points lie far apart.
//! Geometric features are a smooth random function of cloud position.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::depth::{densify, render_depth, DepthMap};
use crate::error::{Error, Result};
use crate::evaluation::{aggregate, BenchmarkMetrics, MetricThresholds, PairRecord};
use crate::features::{l2_normalize, sample_grid_keypoints, FeatureLayer, FeatureMap, Modality, PointFeatures};
use crate::geometry::{unproject_pixel, CameraIntrinsics, PointCloud, Pose};
use crate::io::{self, PipelineConfig, PlyData, PlyEncoding, Profile, SolverChoice};
use crate::par;
use crate::pipeline::{files, run_register, GroundTruth, PairInputs};

/// Mean absolute error of monocular metric depth on indoor scenes, meters.
pub const INDOOR_DEPTH_SIGMA: f64 = 0.27;

/// Image-side depth error: `d' = scale * d + N(0, sigma^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthDistortion {
    pub scale: f64,
    pub sigma: f64,
}

impl DepthDistortion {
    pub const NONE: Self = Self { scale: 1.0, sigma: 0.0 };

    /// Scale drawn from `[0.9, 1.1]` by `seed`, indoor noise level.
    pub fn indoor_like(seed: u64) -> Self {
        let mut rng = stream(seed, STREAM_DISTORTION);
        Self {
            scale: rng.random_range(0.9..=1.1),
            sigma: INDOOR_DEPTH_SIGMA,
        }
    }
}

impl Default for DepthDistortion {
    fn default() -> Self {
        Self::NONE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_points: usize,
    /// Room side length, meters.
    pub scene_extent: f64,
    pub max_rotation_deg: f64,
    pub max_translation: f64,
    /// Total diffusion channels, split across `layers`.
    pub descriptor_dim: usize,
    pub layers: Vec<u32>,
    /// Planted pairs that are correct.
    pub inlier_fraction: f64,
    /// Per-component Gaussian noise on image-side diffusion descriptors.
    pub descriptor_noise_sigma: f64,
    pub geometric_dim: usize,
    /// Per-component Gaussian noise on image-side geometric features.
    pub geometric_noise_sigma: f64,
    /// Correlation length of the geometric feature field, meters.
    pub geometric_length: f64,
    pub depth_distortion: DepthDistortion,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub stride: usize,
    pub rng_seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_points: 150_000,
            scene_extent: 5.0,
            max_rotation_deg: 15.0,
            max_translation: 0.5,
            descriptor_dim: 48,
            layers: vec![0, 4, 6],
            inlier_fraction: 0.5,
            descriptor_noise_sigma: 0.02,
            geometric_dim: 16,
            geometric_noise_sigma: 0.0,
            geometric_length: 0.1,
            depth_distortion: DepthDistortion::NONE,
            width: 176,
            height: 128,
            focal: 160.0,
            stride: 8,
            rng_seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.inlier_fraction) {
            return bad(format!("inlier_fraction {} outside [0, 1]", self.inlier_fraction));
        }
        for (name, v) in [
            ("scene_extent", self.scene_extent),
            ("focal", self.focal),
            ("geometric_length", self.geometric_length),
            ("depth scale", self.depth_distortion.scale),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("max_rotation_deg", self.max_rotation_deg),
            ("max_translation", self.max_translation),
            ("descriptor_noise_sigma", self.descriptor_noise_sigma),
            ("geometric_noise_sigma", self.geometric_noise_sigma),
            ("depth sigma", self.depth_distortion.sigma),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.max_rotation_deg > 90.0 || self.max_translation >= self.scene_extent / 4.0 {
            return bad("pose magnitude must keep the camera inside the room facing a wall".into());
        }
        if self.n_points == 0 || self.geometric_dim == 0 || self.layers.is_empty() {
            return bad("n_points, geometric_dim and layers must be non-empty".into());
        }
        if self.descriptor_dim < self.layers.len() {
            return bad(format!(
                "descriptor_dim {} cannot be split over {} layers",
                self.descriptor_dim,
                self.layers.len()
            ));
        }
        if self.layers.windows(2).any(|w| w[0] >= w[1]) {
            return bad("layers must be strictly increasing".into());
        }
        if self.stride == 0 || !self.width.is_multiple_of(self.stride) || !self.height.is_multiple_of(self.stride) {
            return bad(format!(
                "image {}x{} must be a positive multiple of stride {}",
                self.width, self.height, self.stride
            ));
        }
        Ok(())
    }

    fn layer_channels(&self) -> Vec<usize> {
        let n = self.layers.len();
        let base = self.descriptor_dim / n;
        (0..n)
            .map(|i| if i + 1 == n { self.descriptor_dim - base * (n - 1) } else { base })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlantedPair {
    pub image_px: (usize, usize),
    pub depth_px: (usize, usize),
    pub inlier: bool,
}

/// A generated pair with everything the pipeline and the evaluation need.
#[derive(Debug, Clone)]
pub struct SynthPair {
    pub spec: SynthSpec,
    pub k: CameraIntrinsics,
    pub cloud: PointCloud,
    pub scene_features: PointFeatures,
    /// Camera-to-cloud.
    pub gt_pose: Pose,
    /// Cloud-to-depth-camera; the inverse of `gt_pose`.
    pub depth_pose: Pose,
    pub gt_depth: DepthMap,
    /// `gt_depth` after distortion.
    pub image_depth: DepthMap,
    pub image_features: PointFeatures,
    pub rgb_features: FeatureMap,
    pub depth_features: FeatureMap,
    pub labels: Vec<PlantedPair>,
    pub config: PipelineConfig,
}

const STREAM_POSE: u64 = 1;
const STREAM_PLANT: u64 = 2;
const STREAM_DESCRIPTORS: u64 = 3;
const STREAM_GEOMETRY: u64 = 4;
const STREAM_DEPTH_NOISE: u64 = 5;
const STREAM_GEOMETRY_NOISE: u64 = 6;
const STREAM_DISTORTION: u64 = 7;
/// Scene blocks use streams from here on.
const STREAM_SCENE: u64 = 1 << 20;
const SCENE_BLOCK: usize = 4096;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let mut v: Vec<f32> = (0..dim).map(|_| gaussian(rng) as f32).collect();
        if v.iter().any(|x| *x != 0.0) {
            l2_normalize(&mut v);
            return v;
        }
    }
}

fn wall_point(rng: &mut ChaCha8Rng, half: f64) -> Vector3<f64> {
    let face = rng.random_range(0..6);
    let mut p = Vector3::from_fn(|_, _| rng.random_range(-half..half));
    p[face / 2] = if face % 2 == 0 { -half } else { half };
    p
}

/// Random Fourier features of position: smooth, and decorrelated beyond
/// roughly the configured length.
struct FeatureField {
    omegas: Vec<Vector3<f64>>,
    phases: Vec<f64>,
}

impl FeatureField {
    fn new(rng: &mut ChaCha8Rng, dim: usize, length: f64) -> Self {
        let omegas = (0..dim)
            .map(|_| Vector3::from_fn(|_, _| gaussian(rng) / length))
            .collect();
        let phases = (0..dim).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        Self { omegas, phases }
    }

    fn eval(&self, p: &Vector3<f64>) -> Vec<f32> {
        let mut v: Vec<f32> = self
            .omegas
            .iter()
            .zip(&self.phases)
            .map(|(w, b)| (w.dot(p) + b).cos() as f32)
            .collect();
        l2_normalize(&mut v);
        v
    }
}

/// Outlier partners: a derangement of `cells`, repaired so partners sit at
/// least `min_sep` apart where the available cells allow it.
fn outlier_partners(rng: &mut ChaCha8Rng, cells: &[usize], points: &[Vector3<f64>], min_sep: f64) -> Vec<usize> {
    let n = cells.len();
    let mut order = cells.to_vec();
    order.shuffle(rng);
    let mut partner = vec![0; n];
    let pos: std::collections::HashMap<usize, usize> = cells.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    for i in 0..n {
        partner[pos[&order[i]]] = order[(i + 1) % n];
    }
    let far = |a: usize, b: usize| a != b && (points[a] - points[b]).norm() >= min_sep;
    for i in 0..n {
        if far(cells[i], partner[i]) {
            continue;
        }
        for _ in 0..32 {
            let j = rng.random_range(0..n);
            if far(cells[i], partner[j]) && far(cells[j], partner[i]) {
                partner.swap(i, j);
                break;
            }
        }
    }
    partner
}

fn pack_layers(spec: &SynthSpec, desc: &[Vec<f32>], gh: usize, gw: usize, modality: Modality) -> Result<FeatureMap> {
    let mut offset = 0;
    let mut layers = Vec::with_capacity(spec.layers.len());
    for (&id, c) in spec.layers.iter().zip(spec.layer_channels()) {
        let mut data = vec![0.0f32; c * gh * gw];
        for (cell, d) in desc.iter().enumerate() {
            for ch in 0..c {
                data[ch * gh * gw + cell] = d[offset + ch];
            }
        }
        layers.push(FeatureLayer::new(id, c, gh, gw, data)?);
        offset += c;
    }
    FeatureMap::new(modality, layers)
}

/// Generate a pair; bit-identical for identical specs.
pub fn generate_pair(spec: &SynthSpec) -> Result<SynthPair> {
    spec.validate()?;
    let seed = spec.rng_seed;
    let half = spec.scene_extent / 2.0;
    let k = CameraIntrinsics::new(
        spec.focal,
        spec.focal,
        (spec.width as f64 - 1.0) / 2.0,
        (spec.height as f64 - 1.0) / 2.0,
        spec.width,
        spec.height,
    )?;

    let blocks = spec.n_points.div_ceil(SCENE_BLOCK);
    let points = par::map_range(blocks, |b| {
        let mut rng = stream(seed, STREAM_SCENE + b as u64);
        let n = SCENE_BLOCK.min(spec.n_points - b * SCENE_BLOCK);
        (0..n).map(|_| wall_point(&mut rng, half)).collect::<Vec<_>>()
    })
    .concat();
    let cloud = PointCloud::from(points);

    let mut rng = stream(seed, STREAM_POSE);
    let axis = Vector3::from_fn(|_, _| gaussian(&mut rng));
    let angle = spec.max_rotation_deg.to_radians() * rng.random::<f64>();
    let dir = Vector3::from_fn(|_, _| gaussian(&mut rng));
    let radius = spec.max_translation * rng.random::<f64>().cbrt();
    let t = if dir.norm() > 0.0 { dir.normalize() * radius } else { Vector3::zeros() };
    let gt_pose = Pose::from_axis_angle(&axis, angle, t);
    let depth_pose = gt_pose.inverse();

    let mut config = PipelineConfig::for_profile(Profile::Indoor);
    let kps = sample_grid_keypoints(spec.width, spec.height, spec.stride)?;
    let (gw, gh) = (spec.width / spec.stride, spec.height / spec.stride);
    // The profile's pixel tolerance is meant for its own image width.
    config.pnp_tolerance *= spec.width as f64 / config.image_width as f64;
    config.image_width = spec.width;
    config.image_height = spec.height;
    config.grid_width = gw;
    config.grid_height = gh;
    config.stride = spec.stride;
    config.layers = spec.layers.clone();
    config.pca_dim = config.pca_dim.max(spec.layer_channels().into_iter().max().unwrap_or(1));

    let gt_depth = densify(&render_depth(&cloud, &depth_pose, &k), &config.densify_options()).map;

    // Cloud-frame point seen by each keypoint, where depth is valid.
    let seen: Vec<Option<Vector3<f64>>> = kps
        .pixels
        .iter()
        .map(|&(u, v)| {
            let d = gt_depth.depth_at(u, v)?;
            unproject_pixel(u as f64, v as f64, d as f64, &k).ok().map(|p| gt_pose.apply(&p))
        })
        .collect();
    let valid: Vec<usize> = (0..kps.len()).filter(|&i| seen[i].is_some()).collect();
    let points_seen: Vec<Vector3<f64>> = seen.iter().map(|p| p.unwrap_or_else(Vector3::zeros)).collect();

    let mut rng = stream(seed, STREAM_PLANT);
    let mut shuffled = valid.clone();
    shuffled.shuffle(&mut rng);
    let n_in = (spec.inlier_fraction * valid.len() as f64).round() as usize;
    let (inliers, outliers) = shuffled.split_at(n_in);
    let mut outliers = outliers.to_vec();
    outliers.sort_unstable();
    let mut partner: Vec<Option<usize>> = vec![None; kps.len()];
    for &i in inliers {
        partner[i] = Some(i);
    }
    if outliers.len() >= 2 {
        let min_sep = 2.0 * config.thresholds.tau_c;
        for (&i, p) in outliers
            .iter()
            .zip(outlier_partners(&mut rng, &outliers, &points_seen, min_sep))
        {
            partner[i] = Some(p);
        }
    }

    // Image cell i and depth cell partner[i] share a descriptor; every
    // other cell gets an independent one.
    let mut rng = stream(seed, STREAM_DESCRIPTORS);
    let dim = spec.descriptor_dim;
    let mut rgb: Vec<Vec<f32>> = (0..kps.len()).map(|_| unit_vector(&mut rng, dim)).collect();
    let mut dep: Vec<Vec<f32>> = (0..kps.len()).map(|_| unit_vector(&mut rng, dim)).collect();
    let mut labels = Vec::new();
    for i in 0..kps.len() {
        let Some(j) = partner[i] else { continue };
        let shared = unit_vector(&mut rng, dim);
        let mut noisy: Vec<f32> = shared
            .iter()
            .map(|x| x + (spec.descriptor_noise_sigma * gaussian(&mut rng)) as f32)
            .collect();
        l2_normalize(&mut noisy);
        rgb[i] = noisy;
        dep[j] = shared;
        labels.push(PlantedPair {
            image_px: kps.pixels[i],
            depth_px: kps.pixels[j],
            inlier: i == j,
        });
    }
    let rgb_features = pack_layers(spec, &rgb, gh, gw, Modality::Rgb)?;
    let depth_features = pack_layers(spec, &dep, gh, gw, Modality::Depth)?;

    let mut rng = stream(seed, STREAM_GEOMETRY);
    let field = FeatureField::new(&mut rng, spec.geometric_dim, spec.geometric_length);
    let scene_data = par::map_slice(&cloud.points, |p| field.eval(p)).concat();
    let scene_features = PointFeatures::new(cloud.clone(), spec.geometric_dim, scene_data)?;

    let DepthDistortion { scale, sigma } = spec.depth_distortion;
    let mut rng = stream(seed, STREAM_DEPTH_NOISE);
    let image_depth = gt_depth.map_valid(|_, d| {
        let noisy = scale * d as f64 + sigma * gaussian(&mut rng);
        noisy.max(0.05) as f32
    });

    let mut rng = stream(seed, STREAM_GEOMETRY_NOISE);
    let mut img_points = Vec::new();
    let mut img_data = Vec::new();
    for (i, &(u, v)) in kps.pixels.iter().enumerate() {
        let (Some(truth), Some(d)) = (seen[i], image_depth.depth_at(u, v)) else {
            continue;
        };
        img_points.push(unproject_pixel(u as f64, v as f64, d as f64, &k)?);
        let mut f = field.eval(&truth);
        for x in f.iter_mut() {
            *x += (spec.geometric_noise_sigma * gaussian(&mut rng)) as f32;
        }
        l2_normalize(&mut f);
        img_data.extend(f);
    }
    let image_features = PointFeatures::new(PointCloud::from(img_points), spec.geometric_dim, img_data)?;

    Ok(SynthPair {
        spec: spec.clone(),
        k,
        cloud,
        scene_features,
        gt_pose,
        depth_pose,
        gt_depth,
        image_depth,
        image_features,
        rgb_features,
        depth_features,
        labels,
        config,
    })
}

impl SynthPair {
    pub fn inputs(&self, name: impl Into<String>) -> PairInputs {
        PairInputs {
            name: name.into(),
            cloud: self.cloud.clone(),
            scene_features: Some(self.scene_features.clone()),
            depth_pose: self.depth_pose,
            k: self.k,
            rgb_features: self.rgb_features.clone(),
            depth_features: self.depth_features.clone(),
            image_depth: Some(self.image_depth.clone()),
            image_features: Some(self.image_features.clone()),
        }
    }

    pub fn truth(&self) -> GroundTruth {
        GroundTruth {
            pose: self.gt_pose,
            depth: self.gt_depth.clone(),
        }
    }

    pub fn labels_csv(&self) -> String {
        let mut s = String::from("image_u,image_v,depth_u,depth_v,inlier\n");
        for l in &self.labels {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                l.image_px.0, l.image_px.1, l.depth_px.0, l.depth_px.1, l.inlier as u8
            );
        }
        s
    }

    /// Write the pair as a self-describing directory (see [`files`]).
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::from(e).at(dir))?;
        let scene = PlyData {
            cloud: self.cloud.clone(),
            feature_dim: self.scene_features.dim,
            features: self.scene_features.data.clone(),
        };
        io::write_ply(dir.join(files::SCENE), &scene, PlyEncoding::BinaryLittleEndian)?;
        let image = PlyData {
            cloud: self.image_features.cloud.clone(),
            feature_dim: self.image_features.dim,
            features: self.image_features.data.clone(),
        };
        io::write_ply(dir.join(files::IMAGE_FEATURES), &image, PlyEncoding::BinaryLittleEndian)?;
        io::write_depth(dir.join(files::IMAGE_DEPTH), &self.image_depth)?;
        io::write_depth(dir.join(files::GT_DEPTH), &self.gt_depth)?;
        io::write_frgf(dir.join(files::RGB_FEATURES), &self.rgb_features)?;
        io::write_frgf(dir.join(files::DEPTH_FEATURES), &self.depth_features)?;
        io::write_pose(dir.join(files::GT_POSE), &self.gt_pose)?;
        io::write_pose(dir.join(files::DEPTH_POSE), &self.depth_pose)?;
        io::write_intrinsics(dir.join(files::INTRINSICS), &self.k)?;
        io::write_config(dir.join(files::CONFIG), &self.config)?;
        let labels = dir.join(files::LABELS);
        fs::write(&labels, self.labels_csv()).map_err(|e| Error::from(e).at(labels))?;
        Ok(())
    }
}

/// One column of a sweep: pipeline overrides applied to every pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSetting {
    pub w: f64,
    pub solver: SolverChoice,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub setting: SweepSetting,
    pub records: Vec<PairRecord>,
    pub metrics: BenchmarkMetrics,
}

/// Register every spec under every setting and aggregate per setting.
pub fn sweep(specs: &[SynthSpec], settings: &[SweepSetting], thresholds: &MetricThresholds) -> Result<Vec<SweepCell>> {
    if specs.is_empty() {
        return Err(Error::invalid("sweep needs at least one spec"));
    }
    let pairs = specs.iter().map(generate_pair).collect::<Result<Vec<_>>>()?;
    settings
        .iter()
        .map(|&setting| {
            let records = pairs
                .iter()
                .map(|pair| {
                    let name = format!("seed{}", pair.spec.rng_seed);
                    let mut cfg = pair.config.clone();
                    cfg.w = setting.w;
                    cfg.solver = setting.solver;
                    cfg.iterations = setting.iterations;
                    let out = run_register(&pair.inputs(name.clone()), &cfg)?;
                    Ok(out.record(&name, &pair.truth(), &pair.k))
                })
                .collect::<Result<Vec<_>>>()?;
            let per_pair: Vec<_> = records.iter().map(|r| r.metrics(thresholds)).collect();
            let metrics = aggregate(&per_pair, thresholds)?;
            Ok(SweepCell {
                setting,
                records,
                metrics,
            })
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Median `(RE degrees, TE meters)` of a cell; failures count as worst case.
pub fn median_errors(cell: &SweepCell) -> (f64, f64) {
    (
        median(cell.records.iter().map(|r| r.re_deg).collect()),
        median(cell.records.iter().map(|r| r.te_m).collect()),
    )
}

pub const SWEEP_CSV_HEADER: &str = "w,solver,iterations,fmr,ir,in,rr,n_pairs,median_re_deg,median_te_m";

pub fn sweep_table_csv(cells: &[SweepCell]) -> String {
    let mut s = format!("{SWEEP_CSV_HEADER}\n");
    for c in cells {
        let (re, te) = median_errors(c);
        let m = &c.metrics;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            c.setting.w, c.setting.solver, c.setting.iterations, m.fmr, m.ir, m.inlier_number, m.rr, m.n_pairs, re, te
        );
    }
    s
}
