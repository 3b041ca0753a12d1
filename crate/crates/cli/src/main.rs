//! `xmodreg` command-line front end.
//!
//! Exit codes: 0 success, 2 input or configuration error, 3 degenerate
//! input or failed registration.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use xmodreg::depth::densify;
use xmodreg::evaluation::{aggregate, metrics_json, pairs_csv, PairMetrics, PairRecord};
use xmodreg::io::{self, PipelineConfig, Profile, SolverChoice};
use xmodreg::matching::CorrespondenceSet;
use xmodreg::par;
use xmodreg::pipeline::{files, run_matching, run_solve, score, GroundTruth, PairInputs, StageResult};
use xmodreg::solvers::{RegistrationResult, Seed};
use xmodreg::synth::{generate_pair, sweep, sweep_table_csv, DepthDistortion, SweepSetting, SynthSpec};
use xmodreg::{Error, Result};

const PROFILE_ENV: &str = "XMODREG_PROFILE";

#[derive(Parser)]
#[command(name = "xmodreg", version, about = "Image-to-point-cloud registration")]
struct Cli {
    #[command(flatten)]
    opts: PipelineOpts,
    #[command(subcommand)]
    command: Command,
}

/// Overrides applied on top of the profile and any config file.
#[derive(Args, Clone, Default)]
struct PipelineOpts {
    /// Scene profile; defaults to $XMODREG_PROFILE, then indoor.
    #[arg(long, global = true)]
    profile: Option<Profile>,
    /// key=value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Diffusion weight in fused descriptors.
    #[arg(long, global = true)]
    w: Option<f64>,
    /// kabsch, pnp or auto.
    #[arg(long, global = true)]
    solver: Option<SolverChoice>,
    /// RANSAC seed: an integer or `auto`.
    #[arg(long, global = true)]
    seed: Option<Seed>,
    /// RANSAC iterations.
    #[arg(long, global = true)]
    iters: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic pair directories.
    Synth(SynthArgs),
    /// Render a point cloud into a sparse depth map.
    Render {
        #[arg(long)]
        cloud: PathBuf,
        /// Cloud-to-camera pose.
        #[arg(long)]
        pose: PathBuf,
        #[arg(long)]
        intrinsics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fill holes in a depth map.
    Densify {
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Match a pair directory and write its correspondences.
    Match {
        #[arg(long)]
        pair: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve for the camera pose from a correspondence file.
    Solve {
        #[arg(long)]
        corr: PathBuf,
        #[arg(long)]
        intrinsics: PathBuf,
        /// Image-side metric depth; enables Kabsch.
        #[arg(long)]
        image_depth: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the whole pipeline on one pair directory.
    Register {
        #[arg(long)]
        pair: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate metrics over registered pairs.
    Eval {
        /// Directory of per-pair result directories.
        #[arg(long)]
        results: PathBuf,
        /// Directory of per-pair ground-truth directories.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Register every pair directory under a root, in parallel.
    Batch {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Pairs processed concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Synthetic sweep over fusion weights and solvers.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Generator seed; pair `i` of `--count` uses `seed + i`.
    #[arg(long = "synth-seed", default_value_t = 0)]
    synth_seed: u64,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[command(flatten)]
    spec: SpecArgs,
}

#[derive(Args, Clone)]
struct SpecArgs {
    #[arg(long, default_value_t = 0.5)]
    inlier_fraction: f64,
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
    #[arg(long, default_value_t = 0.0)]
    geometric_noise: f64,
    #[arg(long, default_value_t = 1.0)]
    depth_scale: f64,
    #[arg(long, default_value_t = 0.0)]
    depth_sigma: f64,
    #[arg(long, default_value_t = 150_000)]
    points: usize,
}

impl SpecArgs {
    fn spec(&self, seed: u64) -> SynthSpec {
        SynthSpec {
            n_points: self.points,
            inlier_fraction: self.inlier_fraction,
            descriptor_noise_sigma: self.noise,
            geometric_noise_sigma: self.geometric_noise,
            depth_distortion: DepthDistortion {
                scale: self.depth_scale,
                sigma: self.depth_sigma,
            },
            ..SynthSpec::default()
        }
        .with_seed(seed)
    }
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    out: PathBuf,
    /// Number of synthetic pairs, seeds `synth-seed..synth-seed+pairs`.
    #[arg(long, default_value_t = 5)]
    pairs: u64,
    #[arg(long = "synth-seed", default_value_t = 0)]
    synth_seed: u64,
    /// Comma-separated fusion weights.
    #[arg(long = "weights", default_value = "0,0.5,1")]
    weights: String,
    /// Comma-separated solvers.
    #[arg(long = "solvers", default_value = "kabsch,pnp")]
    solvers: String,
    #[command(flatten)]
    spec: SpecArgs,
}

fn list<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad {what} entry `{x}`")))
        })
        .collect()
}

impl PipelineOpts {
    /// Profile defaults, then the config file (or `fallback_file`), then flags.
    fn resolve(&self, fallback_file: Option<&Path>) -> Result<PipelineConfig> {
        let env_profile = match std::env::var(PROFILE_ENV) {
            Ok(v) if !v.is_empty() => v.parse()?,
            _ => Profile::default(),
        };
        let file = self
            .config
            .as_deref()
            .or(fallback_file.filter(|p| p.exists()));
        let text = match file {
            Some(p) => {
                let raw = fs::read_to_string(p).map_err(|e| Error::from(e).at(p))?;
                Some((p, raw))
            }
            None => None,
        };
        let mut cfg = match &text {
            Some((p, raw)) => PipelineConfig::parse_with_profile(raw, self.profile, env_profile).map_err(|e| e.at(*p))?,
            None => PipelineConfig::for_profile(self.profile.unwrap_or(env_profile)),
        };
        if let Some(w) = self.w {
            cfg.set("w", &w.to_string())?;
        }
        if let Some(s) = self.solver {
            cfg.solver = s;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.iters {
            cfg.set("iterations", &n.to_string())?;
        }
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Degenerate(_) | Error::InsufficientData { .. } | Error::NonConvergence { .. } | Error::BehindCamera { .. } => 3,
        _ => 2,
    }
}

fn log(stage: &StageResult) {
    eprintln!("{}", stage.json_line());
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::from(e).at(dir))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::from(e).at(path))
}

fn pose_rows(p: &xmodreg::geometry::Pose) -> Value {
    let m = p.to_homogeneous();
    json!((0..4).map(|r| (0..4).map(|c| m[(r, c)]).collect::<Vec<_>>()).collect::<Vec<_>>())
}

/// Deterministic part of a solve report; timings only go to the log.
fn result_json(r: &RegistrationResult) -> Value {
    json!({
        "success": r.success,
        "solver": r.solver_used.to_string(),
        "inlier_count": r.inlier_count,
        "total": r.total,
        "seed": r.seed,
        "best_iteration": r.best_iteration,
        "pose": pose_rows(&r.pose),
    })
}

fn write_solution(out: &Path, r: &RegistrationResult, mut report: Value) -> Result<()> {
    create_dir(out)?;
    io::write_pose(out.join("pose.txt"), &r.pose)?;
    report["result"] = result_json(r);
    write_text(&out.join("report.json"), &serde_json::to_string_pretty(&report).expect("json"))
}

fn stage_summary(stages: &[StageResult]) -> Value {
    json!(stages
        .iter()
        .map(|s| json!({ "stage": s.stage, "counters": s.counters }))
        .collect::<Vec<_>>())
}

/// Register one pair directory into `out`; `Ok(success)`.
fn register_pair(pair: &Path, out: &Path, opts: &PipelineOpts) -> Result<bool> {
    let cfg = opts.resolve(Some(&pair.join(files::CONFIG)))?;
    let inputs = PairInputs::load_dir(pair, &cfg)?;
    let m = run_matching(&inputs, &cfg)?;
    m.stages.iter().for_each(log);
    create_dir(out)?;
    io::write_correspondences(out.join("correspondences.txt"), &m.correspondences)?;
    let (result, solve) = run_solve(&m.correspondences, &inputs.k, inputs.image_depth.as_ref(), &cfg)?;
    log(&solve);
    let mut stages = m.stages;
    stages.push(solve);
    let mut report = json!({ "pair": inputs.name, "stages": stage_summary(&stages) });
    if let Some(gt) = GroundTruth::load_dir(pair)? {
        let record = score(&inputs.name, &m.correspondences, &result, &gt, &inputs.k);
        let metrics = record.metrics(&cfg.thresholds);
        report["metrics"] = serde_json::to_value(&metrics).expect("json");
    }
    write_solution(out, &result, report)?;
    Ok(result.success)
}

fn pair_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::from(e).at(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn run(cli: Cli) -> Result<u8> {
    let opts = &cli.opts;
    match cli.command {
        Command::Synth(a) => {
            let seeds: Vec<u64> = (0..a.count as u64).map(|i| a.synth_seed + i).collect();
            let written = par::map_slice(&seeds, |&seed| -> Result<PathBuf> {
                let pair = generate_pair(&a.spec.spec(seed))?;
                let dir = if a.count == 1 { a.out.clone() } else { a.out.join(format!("pair_{seed:04}")) };
                pair.write_dir(&dir)?;
                Ok(dir)
            });
            for dir in written {
                eprintln!("{}", json!({ "stage": "synth", "outputs": [dir?] }));
            }
            Ok(0)
        }
        Command::Render {
            cloud,
            pose,
            intrinsics,
            out,
        } => {
            let start = Instant::now();
            let ply = io::read_ply(&cloud)?;
            let d = xmodreg::depth::render_depth(&ply.cloud, &io::read_pose(&pose)?, &io::read_intrinsics(&intrinsics)?);
            io::write_depth(&out, &d)?;
            eprintln!(
                "{}",
                json!({ "stage": "render", "inputs": [cloud, pose, intrinsics], "outputs": [out],
                        "wall_ms": start.elapsed().as_secs_f64() * 1e3, "counters": { "valid_pixels": d.valid_count() } })
            );
            Ok(0)
        }
        Command::Densify { depth, out } => {
            let cfg = opts.resolve(None)?;
            let start = Instant::now();
            let d = io::read_depth(&depth, cfg.depth_png_scale)?;
            let r = densify(&d, &cfg.densify_options());
            io::write_depth(&out, &r.map)?;
            eprintln!(
                "{}",
                json!({ "stage": "densify", "inputs": [depth], "outputs": [out],
                        "wall_ms": start.elapsed().as_secs_f64() * 1e3,
                        "counters": { "filled": r.filled, "all_invalid": r.all_invalid } })
            );
            Ok(0)
        }
        Command::Match { pair, out } => {
            let cfg = opts.resolve(Some(&pair.join(files::CONFIG)))?;
            let inputs = PairInputs::load_dir(&pair, &cfg)?;
            let m = run_matching(&inputs, &cfg)?;
            m.stages.iter().for_each(log);
            create_dir(&out)?;
            io::write_correspondences(out.join("correspondences.txt"), &m.correspondences)?;
            io::write_depth(out.join("dense_depth.frgd"), &m.dense_depth)?;
            Ok(0)
        }
        Command::Solve {
            corr,
            intrinsics,
            image_depth,
            out,
        } => {
            let cfg = opts.resolve(None)?;
            let corrs: CorrespondenceSet = io::read_correspondences(&corr)?;
            let k = io::read_intrinsics(&intrinsics)?;
            let depth = image_depth.map(|p| io::read_depth(p, cfg.depth_png_scale)).transpose()?;
            let (result, stage) = run_solve(&corrs, &k, depth.as_ref(), &cfg)?;
            log(&stage);
            write_solution(&out, &result, json!({ "stages": stage_summary(&[stage]) }))?;
            Ok(if result.success { 0 } else { 3 })
        }
        Command::Register { pair, out } => Ok(if register_pair(&pair, &out, opts)? { 0 } else { 3 }),
        Command::Batch { pairs, out, jobs } => {
            if jobs == 0 {
                return Err(Error::Config("--jobs must be at least 1".into()));
            }
            let dirs = pair_dirs(&pairs)?;
            let outcomes = par::with_workers(jobs, || {
                par::map_slice(&dirs, |dir| {
                    let name = dir.file_name().expect("pair dir name");
                    register_pair(dir, &out.join(name), opts)
                })
            });
            let mut worst = 0;
            for (dir, r) in dirs.iter().zip(outcomes) {
                let code = match r {
                    Ok(true) => 0,
                    Ok(false) => 3,
                    Err(e) => {
                        eprintln!("{}", json!({ "pair": dir, "error": e.to_string() }));
                        exit_code(&e)
                    }
                };
                worst = worst.max(code);
            }
            Ok(worst)
        }
        Command::Eval { results, gt, out } => {
            let cfg = opts.resolve(None)?;
            let mut records = Vec::new();
            let mut skipped = Vec::new();
            for dir in pair_dirs(&results)? {
                let name = dir.file_name().expect("dir name").to_string_lossy().into_owned();
                let gt_dir = gt.join(&name);
                let Some(truth) = GroundTruth::load_dir(&gt_dir)? else {
                    eprintln!("{}", json!({ "warning": "missing ground truth, pair skipped", "pair": name }));
                    skipped.push(name);
                    continue;
                };
                let k = io::read_intrinsics(gt_dir.join(files::INTRINSICS))?;
                let corrs = io::read_correspondences(dir.join("correspondences.txt"))?;
                let report_path = dir.join("report.json");
                let report: Value = serde_json::from_str(
                    &fs::read_to_string(&report_path).map_err(|e| Error::from(e).at(&report_path))?,
                )
                .map_err(|e| Error::InvalidInput(e.to_string()).at(&report_path))?;
                let success = report["result"]["success"].as_bool().unwrap_or(false);
                let pose = io::read_pose(dir.join("pose.txt"))?;
                let residuals = xmodreg::evaluation::correspondence_residuals(&corrs, &truth.pose, &truth.depth, &k);
                records.push(PairRecord::new(&name, residuals, success.then_some(&pose), &truth.pose));
            }
            let pairs: Vec<PairMetrics> = records.iter().map(|r| r.metrics(&cfg.thresholds)).collect();
            let metrics = aggregate(&pairs, &cfg.thresholds)?;
            create_dir(&out)?;
            let mut summary: Value = serde_json::from_str(&metrics_json(&metrics)).expect("json");
            summary["skipped"] = json!(skipped);
            write_text(&out.join("metrics.json"), &serde_json::to_string_pretty(&summary).expect("json"))?;
            write_text(&out.join("pairs.csv"), &pairs_csv(&pairs))?;
            println!("{}", serde_json::to_string(&summary).expect("json"));
            Ok(0)
        }
        Command::Sweep(a) => {
            let cfg = opts.resolve(None)?;
            let specs: Vec<SynthSpec> = (a.synth_seed..a.synth_seed + a.pairs).map(|s| a.spec.spec(s)).collect();
            let weights: Vec<f64> = list(&a.weights, "weight")?;
            let solvers: Vec<SolverChoice> = list(&a.solvers, "solver")?;
            let settings: Vec<SweepSetting> = solvers
                .iter()
                .flat_map(|&solver| {
                    weights.iter().map(move |&w| SweepSetting {
                        w,
                        solver,
                        iterations: cfg.iterations,
                    })
                })
                .collect();
            let cells = sweep(&specs, &settings, &cfg.thresholds)?;
            create_dir(&a.out)?;
            let table = sweep_table_csv(&cells);
            write_text(&a.out.join("sweep.csv"), &table)?;
            print!("{table}");
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("{}", json!({ "error": e.to_string() }));
            ExitCode::from(exit_code(&e))
        }
    }
}
