//! `key = value` pipeline configuration. The profile sets every default;
//! explicit keys then override individually, each range-checked.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use super::{read_bytes, write_bytes};
use crate::depth::{DensifyMode, DensifyOptions, Kernel};
use crate::error::{Error, Result};
use crate::evaluation::MetricThresholds;
use crate::solvers::{Seed, SolverConfig, SolverKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Indoor,
    Outdoor,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "indoor" => Ok(Profile::Indoor),
            "outdoor" => Ok(Profile::Outdoor),
            other => Err(Error::Config(format!("unknown profile `{other}` (expected indoor or outdoor)"))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Indoor => "indoor",
            Profile::Outdoor => "outdoor",
        })
    }
}

/// `Auto` picks Kabsch when image-side depth is available, PnP otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverChoice {
    Kabsch,
    Pnp,
    #[default]
    Auto,
}

impl SolverChoice {
    pub fn resolve(self, have_image_depth: bool) -> SolverKind {
        match self {
            SolverChoice::Kabsch => SolverKind::Kabsch,
            SolverChoice::Pnp => SolverKind::Pnp,
            SolverChoice::Auto if have_image_depth => SolverKind::Kabsch,
            SolverChoice::Auto => SolverKind::Pnp,
        }
    }
}

impl FromStr for SolverChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "kabsch" => Ok(SolverChoice::Kabsch),
            "pnp" => Ok(SolverChoice::Pnp),
            "auto" => Ok(SolverChoice::Auto),
            other => Err(Error::Config(format!("unknown solver `{other}` (expected kabsch, pnp or auto)"))),
        }
    }
}

impl fmt::Display for SolverChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverChoice::Kabsch => "kabsch",
            SolverChoice::Pnp => "pnp",
            SolverChoice::Auto => "auto",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub profile: Profile,
    pub thresholds: MetricThresholds,
    /// Kabsch inlier tolerance, meters.
    pub kabsch_tolerance: f64,
    /// PnP inlier tolerance, pixels.
    pub pnp_tolerance: f64,
    /// Geometric feature lookup radius, meters.
    pub tau_g: f64,
    pub voxel: f64,
    pub image_width: usize,
    pub image_height: usize,
    pub grid_width: usize,
    pub grid_height: usize,
    /// Weight of the diffusion block in fused descriptors.
    pub w: f64,
    pub pca_dim: usize,
    pub layers: Vec<u32>,
    pub stride: usize,
    pub iterations: usize,
    pub seed: Seed,
    /// Scene depth bound used by densification.
    pub d_max: f64,
    pub densify_mode: DensifyMode,
    pub kernel: Kernel,
    pub max_hole_area: usize,
    /// Depth units per meter in 16-bit PNG depth files.
    pub depth_png_scale: f64,
    pub solver: SolverChoice,
}

/// Every key accepted in a config file, in the order `write_config` emits.
pub const CONFIG_KEYS: &[&str] = &[
    "profile",
    "tau_c",
    "tau_r",
    "tau_t",
    "fmr_fraction",
    "kabsch_tolerance",
    "pnp_tolerance",
    "tau_g",
    "voxel",
    "image_width",
    "image_height",
    "grid_width",
    "grid_height",
    "w",
    "pca_dim",
    "layers",
    "stride",
    "iterations",
    "seed",
    "d_max",
    "densify_mode",
    "kernel",
    "max_hole_area",
    "depth_png_scale",
    "solver",
];

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::for_profile(Profile::Indoor)
    }
}

fn positive(key: &str, v: &str) -> Result<f64> {
    let x: f64 = v
        .parse()
        .map_err(|_| Error::Config(format!("`{key}` must be a number, got `{v}`")))?;
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Config(format!("`{key}` must be positive and finite, got {v}")));
    }
    Ok(x)
}

fn in_range(key: &str, v: &str, lo: f64, hi: f64) -> Result<f64> {
    let x: f64 = v
        .parse()
        .map_err(|_| Error::Config(format!("`{key}` must be a number, got `{v}`")))?;
    if !(lo..=hi).contains(&x) {
        return Err(Error::Config(format!("`{key}` must lie in [{lo}, {hi}], got {v}")));
    }
    Ok(x)
}

fn count(key: &str, v: &str, min: usize) -> Result<usize> {
    let x: usize = v
        .parse()
        .map_err(|_| Error::Config(format!("`{key}` must be a non-negative integer, got `{v}`")))?;
    if x < min {
        return Err(Error::Config(format!("`{key}` must be at least {min}, got {x}")));
    }
    Ok(x)
}

fn parse_layers(v: &str) -> Result<Vec<u32>> {
    let inner = v.trim().trim_start_matches('[').trim_end_matches(']');
    let layers = inner
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<u32>()
                .map_err(|_| Error::Config(format!("`layers` entry `{s}` is not a layer index")))
        })
        .collect::<Result<Vec<_>>>()?;
    if layers.is_empty() {
        return Err(Error::Config("`layers` must name at least one layer".into()));
    }
    if layers.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("`layers` must be strictly increasing, got {v}")));
    }
    Ok(layers)
}

impl PipelineConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let shared = |thresholds, kabsch_tolerance, tau_g, voxel, (image_height, image_width), (grid_height, grid_width), d_max| Self {
            profile,
            thresholds,
            kabsch_tolerance,
            pnp_tolerance: 10.0,
            tau_g,
            voxel,
            image_width,
            image_height,
            grid_width,
            grid_height,
            w: 0.5,
            pca_dim: 128,
            layers: vec![0, 4, 6],
            stride: 16,
            iterations: 50_000,
            seed: Seed::Auto,
            d_max,
            densify_mode: DensifyMode::Fast,
            kernel: Kernel::default(),
            max_hole_area: 64,
            depth_png_scale: 1000.0,
            solver: SolverChoice::Auto,
        };
        match profile {
            Profile::Indoor => shared(MetricThresholds::indoor(), 0.2, 0.5, 0.025, (512, 704), (32, 44), 10.0),
            Profile::Outdoor => shared(MetricThresholds::outdoor(), 4.0, 5.0, 0.3, (512, 1280), (32, 80), 80.0),
        }
    }

    /// Apply one `key = value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "profile" => {
                let p: Profile = v.parse()?;
                if p != self.profile {
                    return Err(Error::Config(
                        "`profile` must be applied before other keys; use PipelineConfig::for_profile".into(),
                    ));
                }
            }
            "tau_c" => self.thresholds.tau_c = positive(key, v)?,
            "tau_r" => {
                self.thresholds.tau_r_deg = positive(key, v)?;
                if self.thresholds.tau_r_deg > 180.0 {
                    return Err(Error::Config(format!("`tau_r` is in degrees and at most 180, got {v}")));
                }
            }
            "tau_t" => self.thresholds.tau_t = positive(key, v)?,
            "fmr_fraction" => self.thresholds.fmr_fraction = in_range(key, v, 0.0, 1.0)?,
            "kabsch_tolerance" => self.kabsch_tolerance = positive(key, v)?,
            "pnp_tolerance" => self.pnp_tolerance = positive(key, v)?,
            "tau_g" => self.tau_g = positive(key, v)?,
            "voxel" => self.voxel = positive(key, v)?,
            "image_width" => self.image_width = count(key, v, 1)?,
            "image_height" => self.image_height = count(key, v, 1)?,
            "grid_width" => self.grid_width = count(key, v, 1)?,
            "grid_height" => self.grid_height = count(key, v, 1)?,
            "w" => self.w = in_range(key, v, 0.0, 1.0)?,
            "pca_dim" => self.pca_dim = count(key, v, 1)?,
            "layers" => self.layers = parse_layers(v)?,
            "stride" => self.stride = count(key, v, 1)?,
            "iterations" => self.iterations = count(key, v, 1)?,
            "seed" => self.seed = v.parse()?,
            "d_max" => self.d_max = positive(key, v)?,
            "densify_mode" => self.densify_mode = v.parse()?,
            "kernel" => self.kernel = v.parse()?,
            "max_hole_area" => self.max_hole_area = count(key, v, 0)?,
            "depth_png_scale" => self.depth_png_scale = positive(key, v)?,
            "solver" => self.solver = v.parse()?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parse config text. `profile` is applied first wherever it appears;
    /// without one the indoor profile is used.
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_profile(text, None, Profile::default())
    }

    /// Like [`parse`](Self::parse), with `forced` taking precedence over the
    /// file's `profile` key and `fallback` used when neither is set.
    pub fn parse_with_profile(text: &str, forced: Option<Profile>, fallback: Profile) -> Result<Self> {
        let mut entries: Vec<(usize, &str, &str)> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
            let key = key.trim();
            if !CONFIG_KEYS.contains(&key) {
                return Err(Error::Config(format!("line {}: unknown config key `{key}`", n + 1)));
            }
            if entries.iter().any(|e| e.1 == key) {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", n + 1)));
            }
            entries.push((n + 1, key, value.trim()));
        }
        let from_file = match entries.iter().find(|e| e.1 == "profile") {
            Some((n, _, v)) => Some(v.parse().map_err(|e: Error| Error::Config(format!("line {n}: {e}")))?),
            None => None,
        };
        let mut cfg = Self::for_profile(forced.or(from_file).unwrap_or(fallback));
        for (n, key, value) in entries.into_iter().filter(|e| e.1 != "profile") {
            cfg.set(key, value).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {n}: {m}")),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    /// Every key, one per line, in [`CONFIG_KEYS`] order.
    pub fn to_text(&self) -> String {
        let t = &self.thresholds;
        let layers: Vec<String> = self.layers.iter().map(u32::to_string).collect();
        let values: [String; 25] = [
            self.profile.to_string(),
            t.tau_c.to_string(),
            t.tau_r_deg.to_string(),
            t.tau_t.to_string(),
            t.fmr_fraction.to_string(),
            self.kabsch_tolerance.to_string(),
            self.pnp_tolerance.to_string(),
            self.tau_g.to_string(),
            self.voxel.to_string(),
            self.image_width.to_string(),
            self.image_height.to_string(),
            self.grid_width.to_string(),
            self.grid_height.to_string(),
            self.w.to_string(),
            self.pca_dim.to_string(),
            layers.join(","),
            self.stride.to_string(),
            self.iterations.to_string(),
            self.seed.to_string(),
            self.d_max.to_string(),
            self.densify_mode.to_string(),
            self.kernel.to_string(),
            self.max_hole_area.to_string(),
            self.depth_png_scale.to_string(),
            self.solver.to_string(),
        ];
        let mut s = String::new();
        for (k, v) in CONFIG_KEYS.iter().zip(values) {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn solver_config(&self, kind: SolverKind) -> SolverConfig {
        let base = match kind {
            SolverKind::Kabsch => SolverConfig::kabsch(self.kabsch_tolerance),
            SolverKind::Pnp => SolverConfig::pnp(self.pnp_tolerance),
        };
        base.with_iterations(self.iterations).with_seed(self.seed)
    }

    pub fn densify_options(&self) -> DensifyOptions {
        DensifyOptions {
            mode: self.densify_mode,
            kernel: self.kernel,
            max_depth: self.d_max,
            max_hole_area: self.max_hole_area,
        }
    }
}

pub fn read_config(path: impl AsRef<Path>) -> Result<PipelineConfig> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| Error::Config("config is not UTF-8".into()).at(path))?;
    PipelineConfig::parse(text).map_err(|e| e.at(path))
}

pub fn write_config(path: impl AsRef<Path>, cfg: &PipelineConfig) -> Result<()> {
    write_bytes(path.as_ref(), cfg.to_text().as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indoor_profile_defaults() {
        let c = PipelineConfig::parse("profile=indoor\n").unwrap();
        assert_eq!(c.thresholds.tau_c, 0.3);
        assert_eq!(c.w, 0.5);
        assert_eq!(c.layers, vec![0, 4, 6]);
        assert_eq!((c.thresholds.tau_r_deg, c.thresholds.tau_t), (20.0, 0.5));
        assert_eq!((c.kabsch_tolerance, c.tau_g, c.voxel), (0.2, 0.5, 0.025));
        assert_eq!((c.image_height, c.image_width, c.grid_height, c.grid_width), (512, 704, 32, 44));
        assert_eq!((c.pca_dim, c.stride, c.iterations, c.pnp_tolerance), (128, 16, 50_000, 10.0));
        assert_eq!(c, PipelineConfig::parse("").unwrap());
    }

    #[test]
    fn outdoor_profile_defaults() {
        let c = PipelineConfig::parse("profile = outdoor").unwrap();
        assert_eq!(c.thresholds.tau_c, 3.0);
        assert_eq!(c.kabsch_tolerance, 4.0);
        assert_eq!((c.thresholds.tau_r_deg, c.thresholds.tau_t), (10.0, 3.0));
        assert_eq!((c.tau_g, c.voxel, c.d_max), (5.0, 0.3, 80.0));
        assert_eq!((c.image_width, c.grid_width), (1280, 80));
    }

    #[test]
    fn single_override_keeps_other_defaults() {
        let c = PipelineConfig::parse("w=0.6\n").unwrap();
        let mut expect = PipelineConfig::default();
        expect.w = 0.6;
        assert_eq!(c, expect);
    }

    #[test]
    fn profile_applies_first_regardless_of_position() {
        let c = PipelineConfig::parse("tau_c = 1.5 # tighter\nprofile = outdoor\n").unwrap();
        assert_eq!(c.thresholds.tau_c, 1.5);
        assert_eq!(c.kabsch_tolerance, 4.0);
    }

    #[test]
    fn rejects_bad_keys_and_values() {
        for text in [
            "bogus = 1",
            "w = 1.5",
            "w = -0.1",
            "tau_c = 0",
            "tau_c = nan",
            "tau_r = 200",
            "stride = 0",
            "layers = 4,0",
            "layers = ",
            "seed = -3",
            "kernel = DIAMOND_KERNEL_4",
            "solver = icp",
            "profile = lunar",
            "w = 0.1\nw = 0.2",
            "no equals sign",
        ] {
            assert!(matches!(PipelineConfig::parse(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn text_round_trip() {
        for profile in [Profile::Indoor, Profile::Outdoor] {
            let mut c = PipelineConfig::for_profile(profile);
            c.set("seed", "42").unwrap();
            c.set("layers", "[1, 3]").unwrap();
            c.set("kernel", "FULL_KERNEL_5").unwrap();
            c.set("densify_mode", "multiscale").unwrap();
            c.set("solver", "pnp").unwrap();
            let text = c.to_text();
            assert_eq!(text.lines().count(), CONFIG_KEYS.len());
            assert_eq!(PipelineConfig::parse(&text).unwrap(), c);
        }
    }

    #[test]
    fn file_round_trip_and_path_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pipeline.cfg");
        let c = PipelineConfig::for_profile(Profile::Outdoor);
        write_config(&path, &c).unwrap();
        assert_eq!(read_config(&path).unwrap(), c);
        std::fs::write(&path, "nope = 1\n").unwrap();
        let e = read_config(&path).unwrap_err();
        assert!(matches!(e, Error::Path { .. }));
        assert!(matches!(e.root(), Error::Config(_)));
    }

    #[test]
    fn forced_profile_beats_file_and_fallback() {
        let file = "profile = indoor\nw = 0.7\n";
        let c = PipelineConfig::parse_with_profile(file, Some(Profile::Outdoor), Profile::Indoor).unwrap();
        assert_eq!((c.profile, c.w, c.thresholds.tau_c), (Profile::Outdoor, 0.7, 3.0));
        let c = PipelineConfig::parse_with_profile("w = 0.7", None, Profile::Outdoor).unwrap();
        assert_eq!(c.profile, Profile::Outdoor);
        let c = PipelineConfig::parse_with_profile(file, None, Profile::Outdoor).unwrap();
        assert_eq!(c.profile, Profile::Indoor);
    }

    #[test]
    fn auto_solver_follows_depth_availability() {
        assert_eq!(SolverChoice::Auto.resolve(true), SolverKind::Kabsch);
        assert_eq!(SolverChoice::Auto.resolve(false), SolverKind::Pnp);
        assert_eq!(SolverChoice::Pnp.resolve(true), SolverKind::Pnp);
    }
}
