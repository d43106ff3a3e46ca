//! Command-line front end. A JSON config file may preset any experiment
//! field; flags override it.

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use cupplan_core::drr::orbit_angles;
use cupplan_core::planner::SweepMode;
use cupplan_core::track::{MarkerNoise, OrbitAxis};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{AppError, AppResult};
use crate::experiments::{self as exp, ImageFormat};

#[derive(Debug, Parser)]
#[command(name = "cupplan", version, about = "Two-view acetabular cup planning experiments and session service")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Output directory; every file is written below it.
    #[arg(long, env = "CUPPLAN_OUT")]
    pub out: Option<PathBuf>,
    /// JSON config; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct Seeded {
    /// Base seed; runs use consecutive seeds from here.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of seeds.
    #[arg(long)]
    pub seeds: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulated X-ray / RGB co-calibration.
    CalibSim {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        seeded: Seeded,
        /// Board poses per calibration.
        #[arg(long)]
        poses: Option<usize>,
        /// 3D corner noise, mm.
        #[arg(long)]
        corner_sigma: Option<f64>,
        /// Corner pixel noise.
        #[arg(long)]
        pixel_sigma: Option<f64>,
    },
    /// Relative X-ray pose error against rotation angle.
    TrackSweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        seeded: Seeded,
        /// start:end:step, degrees.
        #[arg(long, allow_hyphen_values = true)]
        angles: Option<String>,
        #[arg(long, value_enum)]
        axis: Option<Axis>,
        /// Marker translation sigma, mm (rotation sigma 0.2°/mm).
        #[arg(long)]
        noise: Option<f64>,
        /// Marker rotation sigma, degrees.
        #[arg(long)]
        rot_sigma: Option<f64>,
    },
    /// Build and save the hip phantom volume.
    Phantom {
        #[command(flatten)]
        common: Common,
        /// Voxels per side.
        #[arg(long)]
        size: Option<usize>,
        /// Voxel spacing, mm.
        #[arg(long)]
        spacing: Option<f64>,
    },
    /// Render one DRR or an orbit of DRRs.
    Drr {
        #[command(flatten)]
        common: Common,
        /// Saved volume header; the hip phantom when absent.
        #[arg(long)]
        volume: Option<PathBuf>,
        /// start:end:step, degrees.
        #[arg(long, allow_hyphen_values = true)]
        orbit: Option<String>,
        #[arg(long, value_enum)]
        axis: Option<Axis>,
        /// Detector pixels per side.
        #[arg(long)]
        detector: Option<u32>,
        #[arg(long)]
        pixel_spacing: Option<f64>,
        /// Ray-march step, mm.
        #[arg(long)]
        step: Option<f64>,
        #[arg(long, value_enum)]
        format: Option<ImageFormat>,
        /// Phantom voxels per side.
        #[arg(long)]
        size: Option<usize>,
        /// Phantom voxel spacing, mm.
        #[arg(long)]
        spacing: Option<f64>,
    },
    /// Bb epipolar distances over 11 orbital and 9 cranial stations.
    EpipolarStudy {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        seeded: Seeded,
        /// Marker translation sigma, mm (rotation sigma 0.2°/mm).
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        rot_sigma: Option<f64>,
        /// Enable principal-point drift.
        #[arg(long)]
        drift: bool,
    },
    /// Oracle planning error against view separation.
    PlanSweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        seeded: Seeded,
        /// start:end:step, degrees.
        #[arg(long, allow_hyphen_values = true)]
        angles: Option<String>,
        /// Orientation preset to the true angles; translation only.
        #[arg(long, conflicts_with = "full")]
        preset: bool,
        /// Six degrees of freedom.
        #[arg(long)]
        full: bool,
        #[arg(long, value_enum)]
        axis: Option<Axis>,
        /// Plan on marker-tracked views with this translation sigma, mm.
        #[arg(long)]
        noise: Option<f64>,
        /// Oracle placement offset sigma, px.
        #[arg(long)]
        placement_sigma: Option<f64>,
        /// Oracle placement scale sigma (fraction).
        #[arg(long)]
        placement_scale_sigma: Option<f64>,
        #[arg(long)]
        mesh_resolution: Option<usize>,
    },
    /// Impactor axis error over simulated guidance poses.
    ArStudy {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        seeded: Seeded,
        /// Depth noise, mm.
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        poses: Option<usize>,
        /// Frames of an approach trace for the first pose.
        #[arg(long)]
        trace_frames: Option<usize>,
    },
    /// Start the HTTP / WebSocket session service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Axis {
    Orbital,
    Cranial,
}

impl From<Axis> for OrbitAxis {
    fn from(a: Axis) -> Self {
        match a {
            Axis::Orbital => OrbitAxis::Orbital,
            Axis::Cranial => OrbitAxis::Cranial,
        }
    }
}

fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> AppResult<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| AppError::Validation(format!("config {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| AppError::Validation(format!("config {}: {e}", p.display())))
        }
    }
}

fn out_dir(common: &Common) -> AppResult<PathBuf> {
    let out = common
        .out
        .clone()
        .ok_or_else(|| AppError::Validation(String::from("no output directory (--out or CUPPLAN_OUT)")))?;
    crate::io::create_dir(&out)?;
    Ok(out)
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn apply_seeded(seed: &mut Option<u64>, seeds: &mut usize, flags: &Seeded) {
    if flags.seed.is_some() {
        *seed = flags.seed;
    }
    set(seeds, flags.seeds);
}

fn apply_noise(noise: &mut MarkerNoise, sigma: Option<f64>, rot: Option<f64>) -> AppResult<()> {
    if let Some(s) = sigma {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(AppError::Validation(format!("noise sigma must be non-negative, got {s}")));
        }
        *noise = MarkerNoise::scaled(s);
    }
    if let Some(r) = rot {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(AppError::Validation(format!("rotation sigma must be non-negative, got {r}")));
        }
        noise.rot_deg_sigma = r;
    }
    Ok(())
}

/// Runs one parsed command and returns its JSON summary.
pub fn execute(command: Command) -> AppResult<serde_json::Value> {
    match command {
        Command::CalibSim { common, seeded, poses, corner_sigma, pixel_sigma } => {
            let mut cfg: exp::CalibSimConfig = load(common.config.as_deref())?;
            apply_seeded(&mut cfg.seed, &mut cfg.seeds, &seeded);
            set(&mut cfg.poses, poses);
            set(&mut cfg.noise.corner_3d_mm, corner_sigma);
            set(&mut cfg.noise.pixel_sigma, pixel_sigma);
            exp::calib_sim(&cfg, &out_dir(&common)?)
        }
        Command::TrackSweep { common, seeded, angles, axis, noise, rot_sigma } => {
            let mut cfg: exp::TrackSweepConfig = load(common.config.as_deref())?;
            apply_seeded(&mut cfg.seed, &mut cfg.seeds, &seeded);
            set(&mut cfg.angles, angles);
            set(&mut cfg.axis, axis.map(Into::into));
            apply_noise(&mut cfg.noise, noise, rot_sigma)?;
            exp::track_sweep_experiment(&cfg, &out_dir(&common)?)
        }
        Command::Phantom { common, size, spacing } => {
            let mut cfg: exp::PhantomConfig = load(common.config.as_deref())?;
            set(&mut cfg.size, size);
            set(&mut cfg.spacing_mm, spacing);
            exp::phantom(&cfg, &out_dir(&common)?)
        }
        Command::Drr { common, volume, orbit, axis, detector, pixel_spacing, step, format, size, spacing } => {
            let mut cfg: exp::DrrConfig = load(common.config.as_deref())?;
            if let Some(v) = volume {
                cfg.volume = Some(v.to_string_lossy().into_owned());
            }
            if let Some(o) = orbit {
                orbit_check(&o)?;
                cfg.orbit = Some(o);
            }
            set(&mut cfg.axis, axis.map(Into::into));
            set(&mut cfg.detector_px, detector);
            set(&mut cfg.pixel_spacing_mm, pixel_spacing);
            if step.is_some() {
                cfg.step_mm = step;
            }
            set(&mut cfg.format, format);
            set(&mut cfg.phantom.size, size);
            set(&mut cfg.phantom.spacing_mm, spacing);
            exp::drr(&cfg, &out_dir(&common)?)
        }
        Command::EpipolarStudy { common, seeded, noise, rot_sigma, drift } => {
            let mut cfg: exp::EpipolarConfig = load(common.config.as_deref())?;
            apply_seeded(&mut cfg.seed, &mut cfg.seeds, &seeded);
            apply_noise(&mut cfg.noise, noise, rot_sigma)?;
            cfg.drift |= drift;
            Ok(exp::epipolar(&cfg, &out_dir(&common)?)?.0)
        }
        Command::PlanSweep {
            common,
            seeded,
            angles,
            preset,
            full,
            axis,
            noise,
            placement_sigma,
            placement_scale_sigma,
            mesh_resolution,
        } => {
            let mut cfg: exp::PlanSweepConfig = load(common.config.as_deref())?;
            apply_seeded(&mut cfg.seed, &mut cfg.seeds, &seeded);
            set(&mut cfg.angles, angles);
            if preset {
                cfg.mode = SweepMode::Preset;
            } else if full {
                cfg.mode = SweepMode::Full6Dof;
            }
            set(&mut cfg.axis, axis.map(Into::into));
            if noise.is_some() {
                let mut n = MarkerNoise::NONE;
                apply_noise(&mut n, noise, None)?;
                cfg.noise = Some(n);
            }
            set(&mut cfg.placement_sigma_px, placement_sigma);
            set(&mut cfg.placement_scale_sigma, placement_scale_sigma);
            set(&mut cfg.mesh_resolution, mesh_resolution);
            if !(cfg.placement_sigma_px >= 0.0 && cfg.placement_scale_sigma >= 0.0) {
                return Err(AppError::Validation(String::from("placement sigmas must be non-negative")));
            }
            Ok(exp::plan_sweep(&cfg, &out_dir(&common)?)?.0)
        }
        Command::ArStudy { common, seeded, sigma, poses, trace_frames } => {
            let mut cfg: exp::ArConfig = load(common.config.as_deref())?;
            apply_seeded(&mut cfg.seed, &mut cfg.seeds, &seeded);
            set(&mut cfg.sigma_mm, sigma);
            set(&mut cfg.poses, poses);
            set(&mut cfg.trace_frames, trace_frames);
            Ok(exp::ar_study(&cfg, &out_dir(&common)?)?.0)
        }
        Command::Serve { addr } => {
            let rt = tokio::runtime::Runtime::new().map_err(|e| AppError::Runtime(e.to_string()))?;
            rt.block_on(crate::service::serve(addr)).map_err(|e| AppError::Runtime(format!("serve {addr}: {e}")))?;
            Ok(serde_json::json!({ "served": addr.to_string() }))
        }
    }
}

fn orbit_check(range: &str) -> AppResult<()> {
    if range.contains(':') {
        let p: Vec<f64> = range.split(':').filter_map(|s| s.parse().ok()).collect();
        if p.len() == 3 {
            orbit_angles(p[0], p[1], p[2])?;
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Summaries go to stdout, errors to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(summary) => {
            println!("{}", to_pretty(&summary));
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn to_pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Command {
        Cli::try_parse_from(std::iter::once("cupplan").chain(args.iter().copied())).unwrap().command
    }

    #[test]
    fn negative_ranges_parse() {
        match parse(&["drr", "--orbit", "-45:45:4.5", "--out", "x"]) {
            Command::Drr { orbit, .. } => assert_eq!(orbit.as_deref(), Some("-45:45:4.5")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn preset_and_full_conflict() {
        assert!(Cli::try_parse_from(["cupplan", "plan-sweep", "--preset", "--full"]).is_err());
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"seed": 3, "seeds": 2, "angles": "10:20:10", "mesh_resolution": 8}"#).unwrap();
        let mut c: exp::PlanSweepConfig = load(Some(&cfg)).unwrap();
        apply_seeded(&mut c.seed, &mut c.seeds, &Seeded { seed: Some(9), seeds: None });
        assert_eq!((c.seed, c.seeds, c.angles.as_str(), c.mesh_resolution), (Some(9), 2, "10:20:10", 8));
    }

    #[test]
    fn bad_config_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"unknown": true}"#).unwrap();
        assert_eq!(load::<exp::ArConfig>(Some(&cfg)).unwrap_err().exit_code(), 2);
        assert_eq!(load::<exp::ArConfig>(Some(&dir.path().join("missing.json"))).unwrap_err().exit_code(), 2);
    }
}
