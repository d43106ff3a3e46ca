//! Batch experiments behind the command line. Each writes one or more CSV
//! tables plus a `summary.json` into its output directory and returns the
//! summary. Work is spread over seeds with rayon; row order never depends
//! on scheduling.

use std::path::Path;

use cupplan_core::arsim::{self, ArRow, ArStudyConfig, ArSummary, TraceRow};
use cupplan_core::calib::{calibrate, simulate_checkerboard_views, BoardSpec, CalibrationRig, CornerNoise};
use cupplan_core::drr::{build_phantom, default_step, PhantomSpec, VoxelVolume};
use cupplan_core::planner::{aggregate_sweep, run_sweep_case, SweepConfig, SweepMode, SweepRow, SweepRun};
use cupplan_core::stereo::{epipolar_study, summarize, EpipolarStudyConfig, EpipolarSummary};
use cupplan_core::track::{
    default_marker_pose, track_sweep, CArmGeometry, IntrinsicDriftModel, MarkerNoise, OrbitAxis, RgbdFrustum,
    TrackSweepRow,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{AppError, AppResult};
use crate::io;
use crate::render::render_drr;

pub const SUMMARY: &str = "summary.json";

/// Parses `start:end:step` (inclusive ends) or a single value.
pub fn parse_range(text: &str) -> AppResult<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let num = |s: &str| {
        s.trim().parse::<f64>().map_err(|_| AppError::Validation(format!("bad number `{s}` in range `{text}`")))
    };
    match parts.as_slice() {
        [single] => {
            let v = num(single)?;
            if v.is_finite() {
                Ok(vec![v])
            } else {
                Err(AppError::Validation(format!("bad range `{text}`")))
            }
        }
        [a, b, c] => Ok(cupplan_core::drr::orbit_angles(num(a)?, num(b)?, num(c)?)?),
        _ => Err(AppError::Validation(format!("range `{text}` is not start:end:step"))),
    }
}

/// `count` consecutive seeds starting at `base`.
pub fn seed_list(base: u64, count: usize) -> AppResult<Vec<u64>> {
    if count == 0 {
        return Err(AppError::Validation(String::from("seed count must be positive")));
    }
    Ok((0..count as u64).map(|i| base.wrapping_add(i)).collect())
}

fn require_seed(seed: Option<u64>) -> AppResult<u64> {
    seed.ok_or_else(|| AppError::Validation(String::from("a seed is required (--seed or \"seed\" in the config)")))
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn finish(out: &Path, summary: Value) -> AppResult<Value> {
    io::write_json(&out.join(SUMMARY), &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------- calib-sim

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibSimConfig {
    pub seed: Option<u64>,
    pub seeds: usize,
    pub poses: usize,
    pub board: BoardSpec,
    pub noise: CornerNoise,
    pub rig: CalibrationRig,
}

impl Default for CalibSimConfig {
    fn default() -> Self {
        CalibSimConfig {
            seed: None,
            seeds: 20,
            poses: 10,
            board: BoardSpec::default(),
            noise: CornerNoise { corner_3d_mm: 0.5, pixel_sigma: 0.8 },
            rig: CalibrationRig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibRow {
    pub seed: u64,
    pub rotation_err_deg: f64,
    pub translation_err_mm: f64,
    pub rms_residual_mm: f64,
    pub xray_reprojection_px: f64,
    pub rgb_reprojection_px: f64,
}

pub fn calib_sim(cfg: &CalibSimConfig, out: &Path) -> AppResult<Value> {
    let seeds = seed_list(require_seed(cfg.seed)?, cfg.seeds)?;
    let rows = seeds
        .par_iter()
        .map(|&seed| {
            let views = simulate_checkerboard_views(&cfg.rig, &cfg.board, cfg.poses, &cfg.noise, seed)?;
            let r = calibrate(&cfg.rig, &views)?;
            let [x, rgb] = r.per_camera_reprojection_px.unwrap_or([f64::NAN; 2]);
            Ok(CalibRow {
                seed,
                rotation_err_deg: r.transform.rotation_angle_to_deg(&cfg.rig.rgb_to_xray),
                translation_err_mm: r.transform.translation_distance(&cfg.rig.rgb_to_xray),
                rms_residual_mm: r.rms_residual_mm,
                xray_reprojection_px: x,
                rgb_reprojection_px: rgb,
            })
        })
        .collect::<AppResult<Vec<_>>>()?;
    io::write_csv(&out.join("calib.csv"), &rows)?;
    finish(
        out,
        json!({
            "experiment": "calib-sim",
            "runs": rows.len(),
            "mean_rotation_err_deg": mean(rows.iter().map(|r| r.rotation_err_deg)),
            "mean_translation_err_mm": mean(rows.iter().map(|r| r.translation_err_mm)),
            "mean_rms_residual_mm": mean(rows.iter().map(|r| r.rms_residual_mm)),
            "mean_xray_reprojection_px": mean(rows.iter().map(|r| r.xray_reprojection_px)),
            "mean_rgb_reprojection_px": mean(rows.iter().map(|r| r.rgb_reprojection_px)),
        }),
    )
}

// -------------------------------------------------------------- track-sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackSweepConfig {
    pub seed: Option<u64>,
    pub seeds: usize,
    pub angles: String,
    pub axis: OrbitAxis,
    pub noise: MarkerNoise,
    pub geometry: CArmGeometry,
    pub frustum: RgbdFrustum,
}

impl Default for TrackSweepConfig {
    fn default() -> Self {
        TrackSweepConfig {
            seed: None,
            seeds: 20,
            angles: String::from("0:50:5"),
            axis: OrbitAxis::Orbital,
            noise: MarkerNoise::DEFAULT,
            geometry: CArmGeometry::desk(),
            frustum: RgbdFrustum::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackRow {
    pub angle: f64,
    pub seed: u64,
    pub rotation_err_deg: f64,
    pub translation_err_mm: f64,
}

pub fn track_sweep_experiment(cfg: &TrackSweepConfig, out: &Path) -> AppResult<Value> {
    let seeds = seed_list(require_seed(cfg.seed)?, cfg.seeds)?;
    let angles = parse_range(&cfg.angles)?;
    let marker = default_marker_pose();
    let per_seed = seeds
        .par_iter()
        .map(|&s| Ok(track_sweep(&cfg.geometry, cfg.axis, &angles, &[s], &cfg.noise, &marker, &cfg.frustum)?))
        .collect::<AppResult<Vec<Vec<TrackSweepRow>>>>()?;
    let rows: Vec<TrackRow> = (0..angles.len())
        .flat_map(|i| per_seed.iter().map(move |rows| rows[i]))
        .map(|r| TrackRow {
            angle: r.angle_deg,
            seed: r.seed,
            rotation_err_deg: r.rotation_err_deg,
            translation_err_mm: r.translation_err_mm,
        })
        .collect();
    io::write_csv(&out.join("track.csv"), &rows)?;
    let per_angle: Vec<Value> = angles
        .iter()
        .map(|&a| {
            let sel = || rows.iter().filter(move |r| r.angle == a);
            json!({
                "angle": a,
                "mean_rotation_err_deg": mean(sel().map(|r| r.rotation_err_deg)),
                "mean_translation_err_mm": mean(sel().map(|r| r.translation_err_mm)),
            })
        })
        .collect();
    finish(out, json!({ "experiment": "track-sweep", "noise": cfg.noise, "angles": per_angle }))
}

// ------------------------------------------------------------------ phantom

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub phantom: PhantomSpec,
    /// Voxels per side.
    pub size: usize,
    pub spacing_mm: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig { phantom: PhantomSpec::hip(), size: 256, spacing_mm: 1.0 }
    }
}

impl PhantomConfig {
    pub fn build(&self) -> AppResult<VoxelVolume> {
        if self.size == 0 || !(self.spacing_mm > 0.0 && self.spacing_mm.is_finite()) {
            return Err(AppError::Validation(String::from("volume size and spacing must be positive")));
        }
        Ok(build_phantom(&self.phantom, [self.size; 3], [self.spacing_mm; 3])?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveRow {
    pub kind: String,
    pub x_mm: f64,
    pub y_mm: f64,
    pub z_mm: f64,
    /// Largest extent: block edge, shell outer diameter or bb diameter.
    pub size_mm: f64,
    pub attenuation: f64,
}

pub fn phantom(cfg: &PhantomConfig, out: &Path) -> AppResult<Value> {
    let vol = cfg.build()?;
    let header = io::write_volume(out, "phantom", &vol)?;
    let p = &cfg.phantom;
    let mut rows = Vec::new();
    let row = |kind: &str, c: [f64; 3], size_mm: f64, attenuation: f64| PrimitiveRow {
        kind: kind.to_string(),
        x_mm: c[0],
        y_mm: c[1],
        z_mm: c[2],
        size_mm,
        attenuation,
    };
    if let Some(b) = &p.block {
        rows.push(row("block", b.center_mm, b.size_mm.iter().cloned().fold(0.0, f64::max), b.attenuation));
    }
    if let Some(s) = &p.shell {
        rows.push(row("shell", s.center_mm, 2.0 * s.outer_radius_mm, s.attenuation));
    }
    for bb in &p.bbs {
        rows.push(row("bb", bb.center_mm, bb.diameter_mm, bb.attenuation));
    }
    if let Some(c) = &p.cup {
        let t = c.pose.translation();
        rows.push(row("cup", [t.x, t.y, t.z], 2.0 * c.outer_radius_mm, c.attenuation));
    }
    io::write_csv(&out.join("primitives.csv"), &rows)?;
    let data = vol.data();
    finish(
        out,
        json!({
            "experiment": "phantom",
            "volume": header.file_name().and_then(|n| n.to_str()),
            "dims": vol.dims(),
            "spacing_mm": vol.spacing_mm(),
            "origin_mm": vol.origin_mm(),
            "nonzero_voxels": data.iter().filter(|v| **v != 0.0).count(),
            "max_attenuation": data.iter().cloned().fold(0.0f32, f32::max),
        }),
    )
}

// ---------------------------------------------------------------------- drr

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Pgm,
    Png,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DrrConfig {
    /// Header of a saved volume; the hip phantom is built when absent.
    pub volume: Option<String>,
    pub phantom: PhantomConfig,
    /// `start:end:step`; a single AP view when absent.
    pub orbit: Option<String>,
    pub axis: OrbitAxis,
    pub detector_px: u32,
    pub pixel_spacing_mm: f64,
    pub step_mm: Option<f64>,
    pub format: ImageFormat,
}

impl Default for DrrConfig {
    fn default() -> Self {
        DrrConfig {
            volume: None,
            phantom: PhantomConfig::default(),
            orbit: None,
            axis: OrbitAxis::Orbital,
            detector_px: 512,
            pixel_spacing_mm: 0.44,
            step_mm: None,
            format: ImageFormat::Pgm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrrStats {
    pub min: f32,
    pub mean: f64,
}

pub fn drr(cfg: &DrrConfig, out: &Path) -> AppResult<Value> {
    if cfg.detector_px == 0 || !(cfg.pixel_spacing_mm > 0.0) {
        return Err(AppError::Validation(String::from("detector size and pixel spacing must be positive")));
    }
    let vol = match &cfg.volume {
        Some(path) => io::read_volume(Path::new(path))?,
        None => cfg.phantom.build()?,
    };
    let step = cfg.step_mm.unwrap_or_else(|| default_step(&vol));
    let geometry = CArmGeometry::with_detector(cfg.detector_px, cfg.pixel_spacing_mm);
    let angles = match &cfg.orbit {
        Some(r) => parse_range(r)?,
        None => vec![0.0],
    };
    let ext = match cfg.format {
        ImageFormat::Pgm => "pgm",
        ImageFormat::Png => "png",
    };
    io::create_dir(out)?;
    let mut manifest = Vec::with_capacity(angles.len());
    let mut stats = Vec::with_capacity(angles.len());
    for (k, &angle) in angles.iter().enumerate() {
        let id = format!("s{k:02}");
        let cam = geometry.station_on(&id, cfg.axis, angle)?.xray_cam;
        let image = render_drr(&vol, &cam, step)?;
        let camera_json = format!("{id}.json");
        let image_name = format!("{id}.{ext}");
        io::write_camera(&out.join(&camera_json), &cam)?;
        match cfg.format {
            ImageFormat::Pgm => io::write_pgm(&out.join(&image_name), &image)?,
            ImageFormat::Png => io::write_png(&out.join(&image_name), &image)?,
        }
        stats.push(DrrStats {
            min: image.intensity.iter().cloned().fold(1.0, f32::min),
            mean: mean(image.intensity.iter().map(|&v| f64::from(v))),
        });
        manifest.push(io::ManifestRow { station_id: id, angle_deg: angle, camera_json, image: image_name });
    }
    io::write_csv(&out.join("manifest.csv"), &manifest)?;
    finish(
        out,
        json!({
            "experiment": "drr",
            "images": manifest.len(),
            "axis": cfg.axis,
            "step_mm": step,
            "detector_px": cfg.detector_px,
            "stats": stats,
        }),
    )
}

// ----------------------------------------------------------- epipolar-study

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpipolarConfig {
    pub seed: Option<u64>,
    pub seeds: usize,
    pub noise: MarkerNoise,
    pub drift: bool,
}

impl Default for EpipolarConfig {
    fn default() -> Self {
        EpipolarConfig { seed: None, seeds: 100, noise: MarkerNoise::DEFAULT, drift: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpipolarCsvRow {
    pub seed: u64,
    pub bb_id: usize,
    pub station_a: String,
    pub station_b: String,
    pub epipolar_px: f64,
    /// Space-separated x y z.
    pub triangulated_xyz_mm: String,
    pub error_mm: f64,
}

pub fn epipolar(cfg: &EpipolarConfig, out: &Path) -> AppResult<(Value, EpipolarSummary)> {
    let seeds = seed_list(require_seed(cfg.seed)?, cfg.seeds)?;
    let mut base = EpipolarStudyConfig::standard(cfg.noise, Vec::new());
    if cfg.drift {
        base.drift = Some(IntrinsicDriftModel::default());
    }
    let per_seed = seeds
        .par_iter()
        .map(|&s| {
            let mut c = base.clone();
            c.seeds = vec![s];
            Ok(epipolar_study(&c)?)
        })
        .collect::<AppResult<Vec<_>>>()?;
    let rows: Vec<_> = per_seed.into_iter().flatten().collect();
    let summary = summarize(&rows);
    let csv_rows: Vec<EpipolarCsvRow> = rows
        .iter()
        .map(|r| EpipolarCsvRow {
            seed: r.seed,
            bb_id: r.bb_id,
            station_a: r.station_a.clone(),
            station_b: r.station_b.clone(),
            epipolar_px: r.epipolar_px,
            triangulated_xyz_mm: format!(
                "{} {} {}",
                r.triangulated_xyz_mm[0], r.triangulated_xyz_mm[1], r.triangulated_xyz_mm[2]
            ),
            error_mm: r.error_mm,
        })
        .collect();
    io::write_csv(&out.join("epipolar.csv"), &csv_rows)?;
    let value = finish(
        out,
        json!({ "experiment": "epipolar-study", "noise": cfg.noise, "drift": cfg.drift, "seeds": seeds.len(), "summary": summary }),
    )?;
    Ok((value, summary))
}

// --------------------------------------------------------------- plan-sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanSweepConfig {
    pub seed: Option<u64>,
    pub seeds: usize,
    pub angles: String,
    pub mode: SweepMode,
    pub axis: OrbitAxis,
    /// Marker noise for tracked views; exact view geometry when absent.
    pub noise: Option<MarkerNoise>,
    pub placement_sigma_px: f64,
    pub placement_scale_sigma: f64,
    pub mesh_resolution: usize,
}

impl Default for PlanSweepConfig {
    fn default() -> Self {
        let base = SweepConfig::new(Vec::new(), Vec::new(), SweepMode::TranslationOnly);
        PlanSweepConfig {
            seed: None,
            seeds: 20,
            angles: String::from("4.5:45:4.5"),
            mode: SweepMode::TranslationOnly,
            axis: OrbitAxis::Orbital,
            noise: None,
            placement_sigma_px: base.placement_sigma_px,
            placement_scale_sigma: base.placement_scale_sigma,
            mesh_resolution: base.mesh_resolution,
        }
    }
}

impl PlanSweepConfig {
    pub fn sweep_config(&self) -> AppResult<SweepConfig> {
        let mut c = SweepConfig::new(
            parse_range(&self.angles)?,
            seed_list(require_seed(self.seed)?, self.seeds)?,
            self.mode,
        );
        if let Some(n) = self.noise {
            c.noise = n;
        }
        c.axis = self.axis;
        c.placement_sigma_px = self.placement_sigma_px;
        c.placement_scale_sigma = self.placement_scale_sigma;
        c.mesh_resolution = self.mesh_resolution;
        Ok(c)
    }
}

/// Every (separation, seed) oracle run, separations outermost.
pub fn sweep_runs(cfg: &SweepConfig) -> AppResult<Vec<SweepRun>> {
    let cases: Vec<(f64, u64)> =
        cfg.separations_deg.iter().flat_map(|&a| cfg.seeds.iter().map(move |&s| (a, s))).collect();
    cases.par_iter().map(|&(a, s)| Ok(run_sweep_case(cfg, a, s)?)).collect()
}

pub fn plan_sweep(cfg: &PlanSweepConfig, out: &Path) -> AppResult<(Value, Vec<SweepRow>)> {
    let sweep = cfg.sweep_config()?;
    let runs = sweep_runs(&sweep)?;
    let rows = aggregate_sweep(&runs);
    io::write_csv(&out.join("plan_runs.csv"), &runs)?;
    io::write_csv(&out.join("plan_sweep.csv"), &rows)?;
    let value = finish(
        out,
        json!({
            "experiment": "plan-sweep",
            "mode": sweep.mode,
            "noise": sweep.noise,
            "placement_sigma_px": sweep.placement_sigma_px,
            "placement_scale_sigma": sweep.placement_scale_sigma,
            "rows": rows,
        }),
    )?;
    Ok((value, rows))
}

// ----------------------------------------------------------------- ar-study

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArConfig {
    pub seed: Option<u64>,
    pub seeds: usize,
    pub poses: usize,
    /// Depth noise of the RGBD sensor, mm.
    pub sigma_mm: f64,
    /// Frames of the approach trace for pose 0; no trace when 0.
    pub trace_frames: usize,
    pub trace_rate_hz: f64,
    pub trace_offset_mm: f64,
    pub trace_offset_deg: f64,
}

impl Default for ArConfig {
    fn default() -> Self {
        ArConfig {
            seed: None,
            seeds: 10,
            poses: 10,
            sigma_mm: 1.0,
            trace_frames: 0,
            trace_rate_hz: 10.0,
            trace_offset_mm: 20.0,
            trace_offset_deg: 10.0,
        }
    }
}

impl ArConfig {
    pub fn study_config(&self) -> AppResult<ArStudyConfig> {
        let seeds = seed_list(require_seed(self.seed)?, self.seeds)?;
        let mut c = ArStudyConfig::new(self.sigma_mm, seeds);
        c.poses = self.poses;
        c.sensor.validate()?;
        Ok(c)
    }
}

/// Every (pose, seed) trial, poses outermost.
pub fn ar_trials(cfg: &ArStudyConfig) -> AppResult<Vec<ArRow>> {
    if cfg.poses == 0 || cfg.seeds.is_empty() {
        return Err(AppError::Validation(String::from("pose count and seed list must be non-empty")));
    }
    let cases: Vec<(usize, u64)> = (0..cfg.poses).flat_map(|k| cfg.seeds.iter().map(move |&s| (k, s))).collect();
    cases.par_iter().map(|&(k, s)| Ok(arsim::run_ar_trial(cfg, k, s)?)).collect()
}

pub fn ar_study(cfg: &ArConfig, out: &Path) -> AppResult<(Value, ArSummary)> {
    let study = cfg.study_config()?;
    let rows = ar_trials(&study)?;
    let summary = arsim::summarize_ar(&rows);
    io::write_csv(&out.join("ar_study.csv"), &rows)?;
    if cfg.trace_frames > 0 {
        let trace: Vec<TraceRow> = arsim::alignment_trace(
            &study,
            0,
            study.seeds[0],
            cfg.trace_frames,
            cfg.trace_rate_hz,
            cfg.trace_offset_mm,
            cfg.trace_offset_deg,
        )?;
        io::write_csv(&out.join("ar_trace.csv"), &trace)?;
    }
    let value = finish(
        out,
        json!({ "experiment": "ar-study", "sigma_mm": cfg.sigma_mm, "poses": study.poses, "summary": summary }),
    )?;
    Ok((value, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_grammar() {
        assert_eq!(parse_range("0:10:5").unwrap(), vec![0.0, 5.0, 10.0]);
        assert_eq!(parse_range("18").unwrap(), vec![18.0]);
        assert_eq!(parse_range("-45:45:4.5").unwrap().len(), 21);
        for bad in ["", "a:b:c", "0:10", "0:10:3", "10:0:1", "0:10:0", "nan"] {
            assert!(matches!(parse_range(bad), Err(e) if e.exit_code() == 2), "{bad}");
        }
    }

    #[test]
    fn seeds_are_consecutive_and_required() {
        assert_eq!(seed_list(7, 3).unwrap(), vec![7, 8, 9]);
        assert!(seed_list(0, 0).is_err());
        let err = calib_sim(&CalibSimConfig::default(), Path::new("/nonexistent")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn parallel_sweep_matches_core_order() {
        let mut cfg = SweepConfig::new(vec![10.0, 20.0], vec![1, 2], SweepMode::Preset);
        cfg.mesh_resolution = 16;
        cfg.oracle.max_evals = 60;
        let par = sweep_runs(&cfg).unwrap();
        let ser = cupplan_core::planner::separation_sweep_runs(&cfg).unwrap();
        assert_eq!(par, ser);
    }

    #[test]
    fn parallel_ar_matches_core_order() {
        let mut cfg = ArStudyConfig::new(1.0, vec![3, 4]);
        cfg.poses = 2;
        assert_eq!(ar_trials(&cfg).unwrap(), arsim::ar_study(&cfg).unwrap());
    }

    #[test]
    fn config_rejects_unknown_fields() {
        assert!(serde_json::from_str::<PlanSweepConfig>(r#"{"seedz": 1}"#).is_err());
        let c: PlanSweepConfig = serde_json::from_str(r#"{"seed": 5, "mode": "preset"}"#).unwrap();
        assert_eq!((c.seed, c.mode, c.seeds), (Some(5), SweepMode::Preset, 20));
    }
}
