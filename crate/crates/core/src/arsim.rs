//! RGBD guidance stage: plan-to-sensor pose chain, simulated depth frames of
//! the impactor, background subtraction, axis fitting and alignment scoring.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[cfg(not(test))]
#[allow(unused_imports)] // std inherent float methods shadow it when std is linked
use num_traits::Float;
use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geom::{axis_angle_between, RigidTransform, WORLD};
use crate::implant::{AnglePair, AppFrame, CupPose, ImpactorModel, IMPACTOR};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::rng;
use crate::track::{CArmGeometry, RgbdFrustum};
use crate::{Error, Result};

pub const RGBD: &str = "RGBD";
/// X-ray frame the default sensor mount is expressed in.
pub const XRAY: &str = "X";

/// Depth sensor: frustum, angular sampling grid and range noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RgbdSensor {
    pub frustum: RgbdFrustum,
    pub angular_resolution_deg: f64,
    /// Gaussian range noise along each ray, mm.
    pub depth_sigma_mm: f64,
    /// Per-point dropout probability.
    #[serde(default)]
    pub dropout: f64,
}

impl Default for RgbdSensor {
    fn default() -> Self {
        RgbdSensor { frustum: RgbdFrustum::default(), angular_resolution_deg: 0.25, depth_sigma_mm: 0.0, dropout: 0.0 }
    }
}

impl RgbdSensor {
    pub fn with_noise(depth_sigma_mm: f64) -> Self {
        RgbdSensor { depth_sigma_mm, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.angular_resolution_deg > 0.0
            && self.angular_resolution_deg.is_finite()
            && self.depth_sigma_mm >= 0.0
            && (0.0..=1.0).contains(&self.dropout)
            && self.frustum.h_fov_deg > 0.0
            && self.frustum.h_fov_deg < 180.0
            && self.frustum.v_fov_deg > 0.0
            && self.frustum.v_fov_deg < 180.0
            && self.frustum.min_range_mm < self.frustum.max_range_mm;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(String::from("invalid sensor parameters")))
        }
    }

    pub fn grid(&self) -> SensorGrid {
        SensorGrid {
            cols: (self.frustum.h_fov_deg / self.angular_resolution_deg).ceil() as u32,
            rows: (self.frustum.v_fov_deg / self.angular_resolution_deg).ceil() as u32,
            angular_resolution_deg: self.angular_resolution_deg,
        }
    }
}

/// Angular sampling grid, row-major cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorGrid {
    pub cols: u32,
    pub rows: u32,
    pub angular_resolution_deg: f64,
}

impl SensorGrid {
    pub fn cells(&self) -> usize {
        self.cols as usize * self.rows as usize
    }

    /// Unit ray direction through the center of `cell`.
    pub fn direction(&self, cell: u32) -> Vector3<f64> {
        let (i, j) = (cell % self.cols, cell / self.cols);
        let res = self.angular_resolution_deg;
        let az = (-(self.cols as f64) * res / 2.0 + (i as f64 + 0.5) * res).to_radians();
        let el = (-(self.rows as f64) * res / 2.0 + (j as f64 + 0.5) * res).to_radians();
        Vector3::new(az.tan(), el.tan(), 1.0).normalize()
    }
}

/// Depth frame in the sensor frame; `cells[i]` is the grid cell of
/// `points[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloudFrame {
    pub points: Vec<Vector3<f64>>,
    pub cells: Vec<u32>,
    pub grid: SensorGrid,
    pub timestamp_s: f64,
    pub is_reference: bool,
}

impl PointCloudFrame {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Scene primitives, posed in the sensor frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    /// Capped cylinder along local +Z from 0 to `length_mm`; `pose` maps
    /// local → sensor.
    Cylinder { pose: RigidTransform, radius_mm: f64, length_mm: f64 },
    /// Infinite plane through `point` with `normal`.
    Plane { point: [f64; 3], normal: [f64; 3] },
}

impl Primitive {
    pub fn impactor(impactor: &ImpactorModel, pose: &RigidTransform) -> Self {
        Primitive::Cylinder { pose: pose.clone(), radius_mm: impactor.radius_mm, length_mm: impactor.length_mm }
    }

    /// Nearest positive hit distance along the ray from the sensor origin.
    pub fn intersect(&self, dir: &Vector3<f64>) -> Option<f64> {
        match self {
            Primitive::Plane { point, normal } => {
                let n = Vector3::from(*normal);
                let denom = n.dot(dir);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = Vector3::from(*point).dot(&n) / denom;
                (t > 0.0).then_some(t)
            }
            Primitive::Cylinder { pose, radius_mm, length_mm } => {
                let inv = pose.inverse();
                let o = inv.transform_point(&Vector3::zeros());
                let d = inv.transform_vector(dir);
                ray_cylinder(&o, &d, *radius_mm, *length_mm)
            }
        }
    }
}

/// Nearest hit of `o + t d` (t > 0) with a capped cylinder on local Z.
fn ray_cylinder(o: &Vector3<f64>, d: &Vector3<f64>, r: f64, len: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    let mut take = |t: f64| {
        if t > 0.0 && best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    };
    let a = d.x * d.x + d.y * d.y;
    if a > 1e-15 {
        let b = 2.0 * (o.x * d.x + o.y * d.y);
        let c = o.x * o.x + o.y * o.y - r * r;
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let s = disc.sqrt();
            for t in [(-b - s) / (2.0 * a), (-b + s) / (2.0 * a)] {
                let z = o.z + t * d.z;
                if (0.0..=len).contains(&z) {
                    take(t);
                }
            }
        }
    }
    if d.z.abs() > 1e-15 {
        for zc in [0.0, len] {
            let t = (zc - o.z) / d.z;
            let (x, y) = (o.x + t * d.x, o.y + t * d.y);
            if x * x + y * y <= r * r {
                take(t);
            }
        }
    }
    best
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
}

impl Scene {
    /// Background for the guidance studies: a table plane `table_depth_mm`
    /// beyond the reference point `target`, facing the sensor.
    pub fn table(target: &Vector3<f64>, table_depth_mm: f64) -> Self {
        let n = target.normalize();
        Scene { primitives: alloc::vec![Primitive::Plane { point: (target + n * table_depth_mm).into(), normal: (-n).into() }] }
    }

    pub fn with(mut self, p: Primitive) -> Self {
        self.primitives.push(p);
        self
    }

    fn nearest(&self, dir: &Vector3<f64>) -> Option<f64> {
        self.primitives.iter().filter_map(|p| p.intersect(dir)).min_by(f64::total_cmp)
    }
}

/// Renders one depth frame: nearest hit per grid ray within the sensor
/// range, range noise along the ray, optional dropout.
pub fn render_frame(scene: &Scene, sensor: &RgbdSensor, seed: u64, timestamp_s: f64, is_reference: bool) -> Result<PointCloudFrame> {
    sensor.validate()?;
    let grid = sensor.grid();
    let mut rng = rng::seeded(seed);
    let mut points = Vec::new();
    let mut cells = Vec::new();
    for cell in 0..grid.cells() as u32 {
        let dir = grid.direction(cell);
        let Some(t) = scene.nearest(&dir) else { continue };
        if t < sensor.frustum.min_range_mm || t > sensor.frustum.max_range_mm {
            continue;
        }
        let noise = if sensor.depth_sigma_mm > 0.0 { rng::gaussian(&mut rng) * sensor.depth_sigma_mm } else { 0.0 };
        if sensor.dropout > 0.0 && rng.random::<f64>() < sensor.dropout {
            continue;
        }
        points.push(dir * (t + noise));
        cells.push(cell);
    }
    Ok(PointCloudFrame { points, cells, grid, timestamp_s, is_reference })
}

/// Depth frame of the impactor alone; `true_pose` maps impactor → sensor.
pub fn simulate_impactor_cloud(
    impactor: &ImpactorModel,
    true_pose: &RigidTransform,
    sensor: &RgbdSensor,
    seed: u64,
) -> Result<PointCloudFrame> {
    check_sensor_pose(true_pose)?;
    let scene = Scene::default().with(Primitive::impactor(impactor, true_pose));
    let frame = render_frame(&scene, sensor, seed, 0.0, false)?;
    if frame.is_empty() {
        return Err(Error::NothingVisible);
    }
    Ok(frame)
}

fn check_sensor_pose(pose: &RigidTransform) -> Result<()> {
    if pose.from_frame() != IMPACTOR || pose.to_frame() != RGBD {
        return Err(Error::FrameMismatch {
            expected: String::from("I -> RGBD"),
            found: alloc::format!("{} -> {}", pose.from_frame(), pose.to_frame()),
        });
    }
    Ok(())
}

/// Keeps points whose range differs from the reference range in the same
/// cell by more than `threshold_mm`. Cells empty in the reference count as
/// infinitely far.
pub fn background_subtract(frame: &PointCloudFrame, reference: &PointCloudFrame, threshold_mm: f64) -> Result<PointCloudFrame> {
    if frame.grid != reference.grid {
        return Err(Error::GridMismatch);
    }
    if !reference.is_reference {
        return Err(Error::InvalidArgument(String::from("background frame is not flagged as reference")));
    }
    if threshold_mm.is_nan() || threshold_mm < 0.0 {
        return Err(Error::InvalidArgument(String::from("threshold must be non-negative")));
    }
    let mut depth = alloc::vec![f64::INFINITY; frame.grid.cells()];
    for (p, &c) in reference.points.iter().zip(&reference.cells) {
        depth[c as usize] = p.norm();
    }
    let mut out = PointCloudFrame { points: Vec::new(), cells: Vec::new(), ..frame.clone() };
    out.is_reference = false;
    for (p, &c) in frame.points.iter().zip(&frame.cells) {
        if (depth[c as usize] - p.norm()).abs() > threshold_mm {
            out.points.push(*p);
            out.cells.push(c);
        }
    }
    Ok(out)
}

/// A fitted line: unit direction and a point on it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisFit {
    pub axis: Vector3<f64>,
    pub centroid: Vector3<f64>,
}

/// Largest-eigenvalue direction of the point covariance, oriented towards
/// the sensor's +Z.
pub fn fit_principal_axis(points: &[Vector3<f64>]) -> Result<AxisFit> {
    if points.len() < 3 {
        return Err(Error::TooFewPoints(points.len()));
    }
    let n = points.len() as f64;
    let centroid = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let (l1, l2) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    if !(l1 > 1.5 * l2.max(0.0)) || l1 <= 0.0 {
        return Err(Error::IllConditioned);
    }
    let mut axis: Vector3<f64> = eig.eigenvectors.column(order[0]).into();
    axis.normalize_mut();
    if axis.z < 0.0 {
        axis = -axis;
    }
    Ok(AxisFit { axis, centroid })
}

/// Orthonormal pair perpendicular to unit `a`.
fn perpendicular_basis(a: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if a.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = a.cross(&helper).normalize();
    (e1, a.cross(&e1))
}

fn line_distance(p: &Vector3<f64>, point: &Vector3<f64>, axis: &Vector3<f64>) -> f64 {
    let d = p - point;
    (d - axis * d.dot(axis)).norm()
}

fn fit_known_radius(points: &[Vector3<f64>], init: &AxisFit, radius_mm: f64) -> AxisFit {
    let (e1, e2) = perpendicular_basis(&init.axis);
    let line = |x: &[f64]| {
        let axis = (init.axis + e1 * x[0] + e2 * x[1]).normalize();
        (init.centroid + e1 * x[2] + e2 * x[3], axis)
    };
    let cost = |x: &[f64]| {
        let (c, a) = line(x);
        points.iter().map(|p| (line_distance(p, &c, &a) - radius_mm).powi(2)).sum::<f64>() / points.len() as f64
    };
    let opts = NelderMeadOptions { x_tol: 1e-7, max_evals: 4000 };
    let m = nelder_mead(cost, &[0.0; 4], &[0.01, 0.01, 0.5 * radius_mm, 0.5 * radius_mm], &opts);
    let (c, mut a) = line(&m.x);
    if a.z < 0.0 {
        a = -a;
    }
    // keep the reported point near the data
    let mean = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    AxisFit { axis: a, centroid: c + a * (mean - c).dot(&a) }
}

/// Cylinder axis with known radius: principal-axis start moved away from
/// the sensor by the mean depth offset of a visible half shell (πr/4),
/// then a least-squares fit of radial residuals, refit once without
/// outliers (end-cap points).
pub fn fit_cylinder_axis(points: &[Vector3<f64>], radius_mm: f64) -> Result<AxisFit> {
    let pca = fit_principal_axis(points)?;
    let view = pca.centroid.normalize();
    let away = view - pca.axis * view.dot(&pca.axis);
    let shift = away.try_normalize(1e-9).unwrap_or_else(Vector3::zeros) * (PI * radius_mm / 4.0);
    let init = AxisFit { axis: pca.axis, centroid: pca.centroid + shift };
    let first = fit_known_radius(points, &init, radius_mm);

    let residuals: Vec<f64> = points.iter().map(|p| line_distance(p, &first.centroid, &first.axis) - radius_mm).collect();
    let rms = (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt();
    let cut = (3.0 * rms).max(1.0);
    let inliers: Vec<Vector3<f64>> = points.iter().zip(&residuals).filter(|(_, r)| r.abs() <= cut).map(|(p, _)| *p).collect();
    if inliers.len() < 3 || inliers.len() == points.len() {
        return Ok(first);
    }
    Ok(fit_known_radius(&inliers, &first, radius_mm))
}

/// Planned cup pose in the sensor frame: cup → X-ray → RGBD.
pub fn cup_to_rgbd(plan_pose_in_xray: &RigidTransform, xray_to_rgbd: &RigidTransform) -> Result<RigidTransform> {
    xray_to_rgbd.compose(plan_pose_in_xray)
}

/// Planned impactor pose in the sensor frame.
pub fn planned_impactor_pose(
    plan_pose_in_xray: &RigidTransform,
    xray_to_rgbd: &RigidTransform,
    impactor: &ImpactorModel,
) -> Result<RigidTransform> {
    cup_to_rgbd(plan_pose_in_xray, xray_to_rgbd)?.compose(&impactor.mount)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentError {
    pub axis_deg: f64,
    pub tip_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentState {
    /// Impactor → RGBD from the committed plan.
    pub planned_impactor_pose: RigidTransform,
    /// Simulated truth; never used for scoring.
    pub live_impactor_pose: RigidTransform,
    pub current_axis_error_deg: f64,
    pub current_tip_error_mm: f64,
}

impl AlignmentState {
    pub fn new(planned: RigidTransform, live: RigidTransform) -> Result<Self> {
        check_sensor_pose(&planned)?;
        check_sensor_pose(&live)?;
        Ok(AlignmentState {
            planned_impactor_pose: planned,
            live_impactor_pose: live,
            current_axis_error_deg: 0.0,
            current_tip_error_mm: 0.0,
        })
    }

    pub fn planned_axis(&self) -> Vector3<f64> {
        self.planned_impactor_pose.rotation() * Vector3::z()
    }

    pub fn planned_tip(&self) -> Vector3<f64> {
        *self.planned_impactor_pose.translation()
    }

    /// Scores `fit` and stores the result.
    pub fn update(&mut self, fit: &AxisFit) -> AlignmentError {
        let e = alignment_error(self, &fit.axis, &fit.centroid);
        self.current_axis_error_deg = e.axis_deg;
        self.current_tip_error_mm = e.tip_mm;
        e
    }
}

/// Axis angle to the planned axis and distance of the planned tip from the
/// fitted line.
pub fn alignment_error(state: &AlignmentState, fitted_axis: &Vector3<f64>, fitted_centroid: &Vector3<f64>) -> AlignmentError {
    let planned = state.planned_axis();
    let axis_deg = axis_angle_between(fitted_axis, &planned).unwrap_or(90.0);
    let a = fitted_axis.try_normalize(1e-12).unwrap_or(planned);
    AlignmentError { axis_deg, tip_mm: line_distance(&state.planned_tip(), fitted_centroid, &a) }
}

/// Settings of the multi-pose guidance study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArStudyConfig {
    pub poses: usize,
    pub seeds: Vec<u64>,
    pub sensor: RgbdSensor,
    /// Mount of the sensor on the C-arm, RGBD → X.
    pub rgbd_to_xray: RigidTransform,
    /// Nominal cup center, world frame (the C-arm iso-center by default).
    pub cup_center_mm: [f64; 3],
    pub cup_radius_mm: f64,
    pub impactor_radius_mm: f64,
    pub impactor_length_mm: f64,
    /// Pose angles are drawn uniformly from these ranges.
    pub inclination_range_deg: (f64, f64),
    pub anteversion_range_deg: (f64, f64),
    /// Half-width of the uniform cup-center offset, mm.
    pub center_jitter_mm: f64,
    /// Table plane distance beyond the cup center along the sensor ray.
    pub table_depth_mm: f64,
    pub subtract_threshold_mm: f64,
}

impl ArStudyConfig {
    pub fn new(depth_sigma_mm: f64, seeds: Vec<u64>) -> Self {
        ArStudyConfig {
            poses: 10,
            seeds,
            sensor: RgbdSensor::with_noise(depth_sigma_mm),
            rgbd_to_xray: crate::track::default_rgbd_mount(),
            cup_center_mm: [0.0; 3],
            cup_radius_mm: 27.0,
            impactor_radius_mm: 5.0,
            impactor_length_mm: 300.0,
            inclination_range_deg: (30.0, 50.0),
            anteversion_range_deg: (10.0, 30.0),
            center_jitter_mm: 20.0,
            table_depth_mm: 150.0,
            subtract_threshold_mm: 20.0,
        }
    }
}

/// One guidance trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArRow {
    pub pose: usize,
    pub seed: u64,
    pub inclination_deg: f64,
    pub anteversion_deg: f64,
    pub points: usize,
    pub axis_deg: f64,
    pub tip_mm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArSummary {
    pub trials: usize,
    pub mean_axis_deg: f64,
    pub std_axis_deg: f64,
    pub max_axis_deg: f64,
    pub mean_tip_mm: f64,
    pub fraction_axis_below_1deg: f64,
}

/// World → AP X-ray frame `X` of the desk C-arm, and the anatomical frame
/// seen from it.
fn ap_frames() -> Result<(RigidTransform, AppFrame)> {
    let world_to_x = CArmGeometry::desk().station("ap", 0.0, 0.0)?.xray_cam.pose.relabel(WORLD, XRAY);
    let app = AppFrame { pose: world_to_x.compose(&AppFrame::identity(WORLD).pose)? };
    Ok((world_to_x, app))
}

/// Planned cup pose (cup → `X`) for study pose `k`; angles and center
/// offset are drawn from a fixed per-pose stream.
pub fn study_plan_pose(cfg: &ArStudyConfig, k: usize) -> Result<RigidTransform> {
    let mut r = rng::substream(0x4152, k as u64);
    let (i0, i1) = cfg.inclination_range_deg;
    let (a0, a1) = cfg.anteversion_range_deg;
    let ri: f64 = r.random_range(i0..=i1);
    let ra: f64 = r.random_range(a0..=a1);
    let j = cfg.center_jitter_mm;
    let mut offset = Vector3::zeros();
    if j > 0.0 {
        for c in offset.iter_mut() {
            *c = r.random_range(-j..=j);
        }
    }
    let (world_to_x, app) = ap_frames()?;
    let center = world_to_x.transform_point(&(Vector3::from(cfg.cup_center_mm) + offset));
    Ok(CupPose::from_angles(&AnglePair::new(ri, ra)?, &app, center)?.pose)
}

/// Static background with its reference frame, for live guidance frames.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceScene {
    pub background: Scene,
    pub reference: PointCloudFrame,
    pub sensor: RgbdSensor,
    pub impactor: ImpactorModel,
    pub threshold_mm: f64,
}

impl GuidanceScene {
    /// Table plane `table_depth_mm` beyond the planned cup along the sensor
    /// ray; the reference frame is rendered with `seed`.
    pub fn new(
        impactor: ImpactorModel,
        cup_in_rgbd: &RigidTransform,
        sensor: RgbdSensor,
        table_depth_mm: f64,
        threshold_mm: f64,
        seed: u64,
    ) -> Result<Self> {
        let background = Scene::table(cup_in_rgbd.translation(), table_depth_mm);
        let reference = render_frame(&background, &sensor, seed, 0.0, true)?;
        Ok(GuidanceScene { background, reference, sensor, impactor, threshold_mm })
    }

    /// Background-subtracted frame with the impactor at `live` (I → RGBD).
    pub fn foreground(&self, live: &RigidTransform, seed: u64, timestamp_s: f64) -> Result<PointCloudFrame> {
        check_sensor_pose(live)?;
        let scene = self.background.clone().with(Primitive::impactor(&self.impactor, live));
        let frame = render_frame(&scene, &self.sensor, seed, timestamp_s, false)?;
        background_subtract(&frame, &self.reference, self.threshold_mm)
    }

    /// Renders the live impactor of `state`, fits its axis and scores it.
    pub fn observe(&self, state: &mut AlignmentState, seed: u64, timestamp_s: f64) -> Result<(PointCloudFrame, AlignmentError)> {
        let fg = self.foreground(&state.live_impactor_pose, seed, timestamp_s)?;
        if fg.is_empty() {
            return Err(Error::NothingVisible);
        }
        let fit = fit_cylinder_axis(&fg.points, self.impactor.radius_mm)?;
        let e = state.update(&fit);
        Ok((fg, e))
    }
}

fn trial_setup(cfg: &ArStudyConfig, k: usize, seed: u64) -> Result<(RigidTransform, AlignmentState, GuidanceScene)> {
    let impactor = ImpactorModel::new(cfg.impactor_radius_mm, cfg.impactor_length_mm, cfg.cup_radius_mm);
    let plan = study_plan_pose(cfg, k)?;
    let xray_to_rgbd = cfg.rgbd_to_xray.inverse();
    let planned = planned_impactor_pose(&plan, &xray_to_rgbd, &impactor)?;
    let state = AlignmentState::new(planned.clone(), planned)?;
    let cup_in_rgbd = cup_to_rgbd(&plan, &xray_to_rgbd)?;
    let scene = GuidanceScene::new(
        impactor,
        &cup_in_rgbd,
        cfg.sensor,
        cfg.table_depth_mm,
        cfg.subtract_threshold_mm,
        rng::derive_seed(seed, 2 * k as u64),
    )?;
    Ok((plan, state, scene))
}

/// Runs one trial: the impactor is placed exactly at the planned pose, the
/// scene with and without it is rendered, subtracted and fitted.
pub fn run_ar_trial(cfg: &ArStudyConfig, k: usize, seed: u64) -> Result<ArRow> {
    let (plan, mut state, scene) = trial_setup(cfg, k, seed)?;
    let (fg, e) = scene.observe(&mut state, rng::derive_seed(seed, 2 * k as u64 + 1), 1.0)?;
    let angles = CupPose::new(plan).angles(&ap_frames()?.1)?;
    Ok(ArRow {
        pose: k,
        seed,
        inclination_deg: angles.inclination_deg,
        anteversion_deg: angles.anteversion_deg,
        points: fg.len(),
        axis_deg: e.axis_deg,
        tip_mm: e.tip_mm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub axis_deg: f64,
    pub tip_mm: f64,
}

/// Simulated approach of the impactor onto the plan of pose `k`: starts
/// `offset_mm` away and tilted `offset_deg` about the tip, and moves
/// linearly onto the plan over `frames` frames at `rate_hz`.
pub fn alignment_trace(
    cfg: &ArStudyConfig,
    k: usize,
    seed: u64,
    frames: usize,
    rate_hz: f64,
    offset_mm: f64,
    offset_deg: f64,
) -> Result<Vec<TraceRow>> {
    if frames < 2 || !(rate_hz > 0.0) {
        return Err(Error::InvalidArgument(String::from("trace needs at least two frames and a positive rate")));
    }
    let (_, mut state, scene) = trial_setup(cfg, k, seed)?;
    let planned = state.planned_impactor_pose.clone();
    let (e1, e2) = perpendicular_basis(&state.planned_axis());
    let tilt_axis = nalgebra::Unit::new_normalize(e2);
    let mut rows = Vec::with_capacity(frames);
    for i in 0..frames {
        let s = 1.0 - i as f64 / (frames - 1) as f64;
        let q = nalgebra::UnitQuaternion::from_axis_angle(&tilt_axis, (s * offset_deg).to_radians());
        state.live_impactor_pose = planned
            .with_rotation(q * planned.rotation())
            .with_translation(planned.translation() + e1 * (s * offset_mm));
        let t = i as f64 / rate_hz;
        let (_, e) = scene.observe(&mut state, rng::derive_seed(seed, 1000 + i as u64), t)?;
        rows.push(TraceRow { t, axis_deg: e.axis_deg, tip_mm: e.tip_mm });
    }
    Ok(rows)
}

/// Every (pose, seed) trial, poses outermost.
pub fn ar_study(cfg: &ArStudyConfig) -> Result<Vec<ArRow>> {
    if cfg.poses == 0 || cfg.seeds.is_empty() {
        return Err(Error::InvalidArgument(String::from("pose count and seed list must be non-empty")));
    }
    let mut rows = Vec::with_capacity(cfg.poses * cfg.seeds.len());
    for k in 0..cfg.poses {
        for &seed in &cfg.seeds {
            rows.push(run_ar_trial(cfg, k, seed)?);
        }
    }
    Ok(rows)
}

pub fn summarize_ar(rows: &[ArRow]) -> ArSummary {
    let n = rows.len().max(1) as f64;
    let mean = rows.iter().map(|r| r.axis_deg).sum::<f64>() / n;
    let var = rows.iter().map(|r| (r.axis_deg - mean).powi(2)).sum::<f64>() / n;
    ArSummary {
        trials: rows.len(),
        mean_axis_deg: mean,
        std_axis_deg: var.sqrt(),
        max_axis_deg: rows.iter().map(|r| r.axis_deg).fold(0.0, f64::max),
        mean_tip_mm: rows.iter().map(|r| r.tip_mm).sum::<f64>() / n,
        fraction_axis_below_1deg: rows.iter().filter(|r| r.axis_deg < 1.0).count() as f64 / n,
    }
}
