//! Pose recovery from pixel-to-point correspondences.
//!
//! Every pose returned here maps camera coordinates of the query image into
//! the point-cloud frame.

mod kabsch;
mod pnp;
mod ransac;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;

pub use kabsch::kabsch_closed_form;
pub use pnp::{pnp_minimal, pnp_refine, PnpSolution, MAX_GN_STEPS};
pub use ransac::{canonical_order, content_seed, ransac, residuals};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    /// 3D-3D alignment after lifting image pixels with estimated depth.
    Kabsch,
    /// 2D-3D reprojection fit.
    Pnp,
}

impl SolverKind {
    pub fn min_sample(self) -> usize {
        match self {
            SolverKind::Kabsch => 3,
            SolverKind::Pnp => 4,
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverKind::Kabsch => "kabsch",
            SolverKind::Pnp => "pnp",
        })
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kabsch" => Ok(SolverKind::Kabsch),
            "pnp" => Ok(SolverKind::Pnp),
            _ => Err(Error::Config(format!("unknown solver `{s}` (expected kabsch or pnp)"))),
        }
    }
}

/// RANSAC seed. `Auto` derives the seed from the sorted correspondence
/// content so that reordering the input does not change the result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Seed {
    Fixed(u64),
    #[default]
    Auto,
}

impl fmt::Display for Seed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Seed::Fixed(s) => write!(f, "{s}"),
            Seed::Auto => f.write_str("auto"),
        }
    }
}

impl FromStr for Seed {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Seed::Auto);
        }
        s.parse()
            .map(Seed::Fixed)
            .map_err(|_| Error::Config(format!("seed must be an unsigned integer or `auto`, got `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub iterations: usize,
    /// Meters for Kabsch, pixels for PnP.
    pub inlier_tolerance: f64,
    pub sample_size: usize,
    pub seed: Seed,
}

impl SolverConfig {
    pub fn kabsch(tolerance_m: f64) -> Self {
        Self {
            iterations: 50_000,
            inlier_tolerance: tolerance_m,
            sample_size: 3,
            seed: Seed::Auto,
        }
    }

    pub fn pnp(tolerance_px: f64) -> Self {
        Self {
            iterations: 50_000,
            inlier_tolerance: tolerance_px,
            sample_size: 4,
            seed: Seed::Auto,
        }
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }

    pub fn with_seed(mut self, seed: Seed) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self, kind: SolverKind) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("RANSAC needs at least one iteration".into()));
        }
        if !(self.inlier_tolerance > 0.0) || !self.inlier_tolerance.is_finite() {
            return Err(Error::Config(format!(
                "inlier tolerance must be positive, got {}",
                self.inlier_tolerance
            )));
        }
        if self.sample_size < kind.min_sample() {
            return Err(Error::Config(format!(
                "{kind} needs samples of at least {}, got {}",
                kind.min_sample(),
                self.sample_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    /// Camera-to-cloud pose; identity when no hypothesis was found.
    pub pose: Pose,
    /// Indices into the input correspondence list, ascending.
    pub inlier_indices: Vec<usize>,
    pub inlier_count: usize,
    pub total: usize,
    pub success: bool,
    pub solver_used: SolverKind,
    /// Seed the iteration stream was keyed with.
    pub seed: u64,
    /// Iteration whose hypothesis won, if any.
    pub best_iteration: Option<usize>,
}
