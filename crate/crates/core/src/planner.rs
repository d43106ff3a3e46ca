//! Two-view cup planning sessions, the contour-matching oracle planner, pose
//! error metrics and the view-separation sweep.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{Unit, UnitQuaternion, Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::drr::XrayImage;
use crate::geom::{ProjectiveCamera, RigidTransform, WORLD};
use crate::implant::{
    make_component, preset_orientation, silhouette_contour, symmetric_contour_distance, AnglePair, AppFrame, CupModel,
    CupPose, ImpactorModel, DEFAULT_TAU,
};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::track::{
    relative_xray_pose, simulate_marker_observation, true_relative_pose, xray_frame, CArmGeometry, CArmStation,
    MarkerNoise, OrbitAxis, RgbdFrustum,
};
use crate::{rng, Error, Result};

/// Objective value used when a candidate pose cannot be projected.
pub const INFEASIBLE: f64 = 1e6;

pub type Contour = Vec<Vec<Vector2<f64>>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionState {
    Planning,
    Committed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanningView {
    /// Camera used for planning (estimated pose).
    pub camera: ProjectiveCamera,
    #[serde(skip)]
    pub image: Option<XrayImage>,
}

/// Simulation truth, hidden from the operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub cup_pose: CupPose,
    pub cameras: [ProjectiveCamera; 2],
}

/// Change requested by the operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PoseDelta {
    Translate { mm: [f64; 3] },
    /// Rotation about the cup center, axis in session coordinates.
    Rotate { axis: [f64; 3], angle_deg: f64 },
    Absolute { pose: RigidTransform },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseUpdate {
    pub contours: [Contour; 2],
    pub angles: AnglePair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanningSession {
    pub views: [PlanningView; 2],
    pub cup: CupModel,
    pub impactor: ImpactorModel,
    cup_pose: CupPose,
    pub app_frame: AppFrame,
    pub ground_truth: Option<GroundTruth>,
    state: SessionState,
    preset: Option<AnglePair>,
    pub tau: f64,
}

impl PlanningSession {
    pub fn new(
        cameras: [ProjectiveCamera; 2],
        cup: CupModel,
        impactor: ImpactorModel,
        initial: CupPose,
        app_frame: AppFrame,
        ground_truth: Option<GroundTruth>,
    ) -> Result<Self> {
        let world = cameras[0].pose.from_frame();
        if cameras[1].pose.from_frame() != world || initial.pose.to_frame() != world || app_frame.pose.to_frame() != world {
            return Err(Error::FrameMismatch {
                expected: String::from(world),
                found: format!("{} / {} / {}", cameras[1].pose.from_frame(), initial.pose.to_frame(), app_frame.pose.to_frame()),
            });
        }
        let [a, b] = cameras;
        let session = PlanningSession {
            views: [PlanningView { camera: a, image: None }, PlanningView { camera: b, image: None }],
            cup,
            impactor,
            cup_pose: initial,
            app_frame,
            ground_truth,
            state: SessionState::Planning,
            preset: None,
            tau: DEFAULT_TAU,
        };
        session.contours()?;
        Ok(session)
    }

    pub fn cup_pose(&self) -> &CupPose {
        &self.cup_pose
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn preset(&self) -> Option<AnglePair> {
        self.preset
    }

    pub fn angles(&self) -> Result<AnglePair> {
        self.cup_pose.angles(&self.app_frame)
    }

    pub fn cameras(&self) -> [&ProjectiveCamera; 2] {
        [&self.views[0].camera, &self.views[1].camera]
    }

    pub fn contours_for(&self, pose: &CupPose) -> Result<[Contour; 2]> {
        Ok([
            silhouette_contour(&self.cup, pose, &self.views[0].camera, self.tau)?,
            silhouette_contour(&self.cup, pose, &self.views[1].camera, self.tau)?,
        ])
    }

    pub fn contours(&self) -> Result<[Contour; 2]> {
        self.contours_for(&self.cup_pose)
    }

    fn ensure_planning(&self) -> Result<()> {
        match self.state {
            SessionState::Planning => Ok(()),
            SessionState::Committed => Err(Error::SessionCommitted),
        }
    }

    /// Pose after `delta`, without applying it.
    pub fn apply_delta(&self, delta: &PoseDelta) -> Result<CupPose> {
        let pose = &self.cup_pose.pose;
        match delta {
            PoseDelta::Translate { mm } => {
                let t = Vector3::from(*mm);
                if !t.iter().all(|v| v.is_finite()) {
                    return Err(Error::InvalidArgument(String::from("translation must be finite")));
                }
                Ok(CupPose::new(pose.with_translation(pose.translation() + t)))
            }
            PoseDelta::Rotate { axis, angle_deg } => {
                if self.preset.is_some() {
                    return Err(Error::RotationLocked);
                }
                let axis = Unit::try_new(Vector3::from(*axis), 1e-12).ok_or(Error::ZeroVector)?;
                if !angle_deg.is_finite() {
                    return Err(Error::InvalidArgument(String::from("angle must be finite")));
                }
                let q = UnitQuaternion::from_axis_angle(&axis, angle_deg.to_radians());
                Ok(CupPose::new(pose.with_rotation(q * pose.rotation())))
            }
            PoseDelta::Absolute { pose: target } => {
                if target.from_frame() != pose.from_frame() || target.to_frame() != pose.to_frame() {
                    return Err(Error::FrameMismatch {
                        expected: format!("{} -> {}", pose.from_frame(), pose.to_frame()),
                        found: format!("{} -> {}", target.from_frame(), target.to_frame()),
                    });
                }
                if self.preset.is_some() && target.rotation() != pose.rotation() {
                    return Err(Error::RotationLocked);
                }
                Ok(CupPose::new(target.clone()))
            }
        }
    }

    /// Moves the cup and returns the new contours; on error the pose is
    /// unchanged.
    pub fn set_cup_pose(&mut self, delta: &PoseDelta) -> Result<PoseUpdate> {
        self.ensure_planning()?;
        let next = self.apply_delta(delta)?;
        let contours = self.contours_for(&next)?;
        let angles = next.angles(&self.app_frame)?;
        self.cup_pose = next;
        Ok(PoseUpdate { contours, angles })
    }

    /// Fixes the cup orientation to `angles`; later rotations are rejected.
    pub fn set_preset(&mut self, angles: AnglePair) -> Result<PoseUpdate> {
        self.ensure_planning()?;
        angles.validate()?;
        let next = preset_orientation(&angles, &self.app_frame, &self.cup_pose);
        let contours = self.contours_for(&next)?;
        self.cup_pose = next;
        self.preset = Some(angles);
        Ok(PoseUpdate { contours, angles: self.angles()? })
    }

    /// Releases the orientation lock; the pose is kept.
    pub fn clear_preset(&mut self) -> Result<()> {
        self.ensure_planning()?;
        self.preset = None;
        Ok(())
    }

    pub fn commit(&mut self) -> Result<CupPose> {
        self.ensure_planning()?;
        self.state = SessionState::Committed;
        Ok(self.cup_pose.clone())
    }

    /// Contours of the true cup seen by the true cameras.
    pub fn reference_contours(&self) -> Result<[Contour; 2]> {
        let gt = self.ground_truth.as_ref().ok_or(Error::NoGroundTruth)?;
        Ok([
            silhouette_contour(&self.cup, &gt.cup_pose, &gt.cameras[0], self.tau)?,
            silhouette_contour(&self.cup, &gt.cup_pose, &gt.cameras[1], self.tau)?,
        ])
    }

    /// Mean over both views of the symmetric contour distance, pixels.
    pub fn objective(&self, pose: &CupPose, reference: &[Contour; 2]) -> f64 {
        match self.contours_for(pose) {
            Ok(c) => 0.5 * (symmetric_contour_distance(&c[0], &reference[0]) + symmetric_contour_distance(&c[1], &reference[1])),
            Err(_) => INFEASIBLE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    TranslationOnly,
    Full6Dof,
}

/// Offset of the oracle's starting pose from the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub translation_mm: [f64; 3],
    /// Rotation vector about the cup center, degrees.
    pub rotation_deg: [f64; 3],
}

impl Perturbation {
    pub const NONE: Perturbation = Perturbation { translation_mm: [0.0; 3], rotation_deg: [0.0; 3] };

    /// Random direction of length `translation_mm`; random axis with angle
    /// `rotation_deg`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, translation_mm: f64, rotation_deg: f64) -> Self {
        let t = rng::unit_vector(rng) * translation_mm;
        let r = rng::unit_vector(rng) * rotation_deg;
        Perturbation { translation_mm: t.into(), rotation_deg: r.into() }
    }

    pub fn apply(&self, pose: &CupPose) -> CupPose {
        let r = Vector3::from(self.rotation_deg).map(f64::to_radians);
        let q = UnitQuaternion::from_scaled_axis(r);
        let rotation = if r == Vector3::zeros() { *pose.pose.rotation() } else { q * pose.pose.rotation() };
        CupPose::new(RigidTransform::new(
            rotation,
            pose.pose.translation() + Vector3::from(self.translation_mm),
            pose.pose.from_frame(),
            pose.pose.to_frame(),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub committed_pose: CupPose,
    pub translation_error_mm: f64,
    pub inclination_error_deg: f64,
    pub anteversion_error_deg: f64,
    pub objective_value: f64,
    pub initial_objective: f64,
    pub evaluations: usize,
    /// The evaluation budget ran out before convergence.
    pub budget_exhausted: bool,
    /// Best objective after each evaluation.
    #[serde(skip)]
    pub best_trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    pub max_evals: usize,
    /// Simplex diameter at convergence, mm or degrees.
    pub x_tol: f64,
    pub initial_step_mm: f64,
    pub initial_step_deg: f64,
    pub restarts: usize,
    /// Image offset, per view, at which the oracle perceives the reference
    /// outline (its placement error), pixels.
    #[serde(default)]
    pub placement_offset_px: [[f64; 2]; 2],
    /// Per-view scale of the perceived reference outline about its centroid.
    #[serde(default = "unit_scales")]
    pub placement_scale: [f64; 2],
}

fn unit_scales() -> [f64; 2] {
    [1.0; 2]
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            max_evals: 1500,
            x_tol: 0.05,
            initial_step_mm: 4.0,
            initial_step_deg: 3.0,
            restarts: 2,
            placement_offset_px: [[0.0; 2]; 2],
            placement_scale: [1.0; 2],
        }
    }
}

/// Candidate pose from the parameter vector: translation mm, then an
/// optional rotation vector in degrees, both relative to `start`.
fn pose_from_params(start: &CupPose, x: &[f64]) -> CupPose {
    let t = start.pose.translation() + Vector3::new(x[0], x[1], x[2]);
    let rotation = if x.len() == 6 {
        UnitQuaternion::from_scaled_axis(Vector3::new(x[3], x[4], x[5]).map(f64::to_radians)) * start.pose.rotation()
    } else {
        *start.pose.rotation()
    };
    CupPose::new(RigidTransform::new(rotation, t, start.pose.from_frame(), start.pose.to_frame()))
}

/// Automated operator: starts from the perturbed truth and aligns the
/// projected contours with the reference contours by simplex search, then
/// commits. Preset sessions only translate.
pub fn plan_oracle(
    session: &mut PlanningSession,
    init: &Perturbation,
    mode: PlanMode,
    opts: &OracleOptions,
) -> Result<PlanResult> {
    session.ensure_planning()?;
    let gt = session.ground_truth.clone().ok_or(Error::NoGroundTruth)?;
    let mut reference = session.reference_contours()?;
    for ((contour, offset), scale) in reference.iter_mut().zip(opts.placement_offset_px).zip(opts.placement_scale) {
        let n = contour.iter().map(Vec::len).sum::<usize>().max(1) as f64;
        let c = contour.iter().flatten().sum::<Vector2<f64>>() / n;
        let d = Vector2::new(offset[0], offset[1]);
        contour.iter_mut().flatten().for_each(|p| *p = c + (*p - c) * scale + d);
    }
    let mut start = init.apply(&gt.cup_pose);
    if let Some(angles) = session.preset {
        start = preset_orientation(&angles, &session.app_frame, &CupPose::new(start.pose.with_rotation(*gt.cup_pose.pose.rotation())));
    }
    let dims = if mode == PlanMode::Full6Dof && session.preset.is_none() { 6 } else { 3 };

    let mut trace = Vec::new();
    let mut best_f = f64::INFINITY;
    let mut objective = |x: &[f64]| {
        let f = session.objective(&pose_from_params(&start, x), &reference);
        if f < best_f {
            best_f = f;
        }
        trace.push(best_f);
        f
    };
    let initial = objective(&[0.0; 6][..dims]);
    let mut x = alloc::vec![0.0; dims];
    let mut evals = 1;
    let mut converged = false;
    let mut step: Vec<f64> = (0..dims).map(|i| if i < 3 { opts.initial_step_mm } else { opts.initial_step_deg }).collect();
    for _ in 0..=opts.restarts {
        if evals >= opts.max_evals {
            break;
        }
        let nm = NelderMeadOptions { x_tol: opts.x_tol, max_evals: opts.max_evals - evals };
        let m = nelder_mead(&mut objective, &x, &step, &nm);
        evals += m.evals;
        let improved = m.f < best_of(&x, &m);
        x = m.x;
        converged = m.converged;
        if !converged || !improved {
            break;
        }
        // restart with a smaller simplex around the optimum
        step.iter_mut().for_each(|s| *s *= 0.25);
    }
    drop(objective);
    let best = pose_from_params(&start, &x);
    session.cup_pose = best.clone();
    session.commit()?;
    let errors = pose_errors(&best, &gt.cup_pose, &session.app_frame)?;
    Ok(PlanResult {
        committed_pose: best,
        translation_error_mm: errors.translation_mm,
        inclination_error_deg: errors.inclination_deg,
        anteversion_error_deg: errors.anteversion_deg,
        objective_value: *trace.last().unwrap_or(&initial),
        initial_objective: initial,
        evaluations: evals,
        budget_exhausted: !converged && evals >= opts.max_evals,
        best_trace: trace,
    })
}

/// Restarts continue only while the previous run moved the optimum.
fn best_of(x: &[f64], m: &crate::optim::Minimum) -> f64 {
    if x.iter().zip(&m.x).all(|(a, b)| a == b) {
        m.f
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseErrors {
    pub translation_mm: f64,
    pub inclination_deg: f64,
    pub anteversion_deg: f64,
}

/// Center distance and absolute angle differences in the APP frame; roll
/// about the cup axis is ignored.
pub fn pose_errors(estimate: &CupPose, truth: &CupPose, app: &AppFrame) -> Result<PoseErrors> {
    if estimate.pose.to_frame() != truth.pose.to_frame() {
        return Err(Error::FrameMismatch {
            expected: String::from(truth.pose.to_frame()),
            found: String::from(estimate.pose.to_frame()),
        });
    }
    let a = estimate.angles(app)?;
    let b = truth.angles(app)?;
    Ok(PoseErrors {
        translation_mm: (estimate.center() - truth.center()).norm(),
        inclination_deg: (a.inclination_deg - b.inclination_deg).abs(),
        anteversion_deg: (a.anteversion_deg - b.anteversion_deg).abs(),
    })
}

/// Translation error split into the component along `ray` and the rest.
pub fn decompose_translation(estimate: &CupPose, truth: &CupPose, ray: &Vector3<f64>) -> (f64, f64) {
    let d = estimate.center() - truth.center();
    let r = ray.normalize();
    let along = d.dot(&r);
    (along.abs(), (d - r * along).norm())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    TranslationOnly,
    Full6Dof,
    /// Orientation preset to the true angles; translation only.
    Preset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub geometry: CArmGeometry,
    pub separations_deg: Vec<f64>,
    pub axis: OrbitAxis,
    pub seeds: Vec<u64>,
    pub mode: SweepMode,
    pub noise: MarkerNoise,
    pub truth_angles: AnglePair,
    pub truth_center_mm: [f64; 3],
    pub cup_diameter_mm: f64,
    pub mesh_resolution: usize,
    pub tau: f64,
    pub perturbation_mm: f64,
    pub perturbation_deg: f64,
    /// Sigma of the per-view placement offset drawn for each run, pixels.
    pub placement_sigma_px: f64,
    /// Relative sigma of the per-view placement scale.
    pub placement_scale_sigma: f64,
    pub oracle: OracleOptions,
}

impl SweepConfig {
    /// Exact view geometry, as with DRR views; the error comes from the
    /// oracle's placement offset and scale. Set `noise` to plan on
    /// marker-tracked views instead.
    pub fn new(separations_deg: Vec<f64>, seeds: Vec<u64>, mode: SweepMode) -> Self {
        SweepConfig {
            geometry: CArmGeometry::desk(),
            separations_deg,
            axis: OrbitAxis::Orbital,
            seeds,
            mode,
            noise: MarkerNoise::NONE,
            truth_angles: AnglePair { inclination_deg: 40.0, anteversion_deg: 25.0 },
            truth_center_mm: [0.0; 3],
            cup_diameter_mm: 54.0,
            mesh_resolution: 64,
            tau: DEFAULT_TAU,
            perturbation_mm: 10.0,
            perturbation_deg: 5.0,
            placement_sigma_px: 1.0,
            placement_scale_sigma: 0.01,
            oracle: OracleOptions::default(),
        }
    }
}

/// One oracle run of the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub separation_deg: f64,
    pub seed: u64,
    pub translation_mm: f64,
    pub along_ray_mm: f64,
    pub orthogonal_mm: f64,
    pub inclination_err_deg: f64,
    pub anteversion_err_deg: f64,
    pub objective_px: f64,
    pub evaluations: usize,
    pub budget_exhausted: bool,
}

/// Per-separation aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub separation_deg: f64,
    pub runs: usize,
    pub mean_translation_mm: f64,
    pub max_translation_mm: f64,
    pub mean_along_ray_mm: f64,
    pub mean_orthogonal_mm: f64,
    pub mean_inclination_err_deg: f64,
    pub mean_anteversion_err_deg: f64,
    pub max_inclination_err_deg: f64,
    pub max_anteversion_err_deg: f64,
    pub fraction_below_3mm: f64,
}

/// Cameras of a two-view study, expressed in the AP X-ray frame `X@a`.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyViews {
    pub station_a: CArmStation,
    pub station_b: CArmStation,
    /// World → `X@a`.
    pub world_to_a: RigidTransform,
    pub cam_a: ProjectiveCamera,
    /// Camera B from the marker-tracked relative pose.
    pub estimated_b: ProjectiveCamera,
    pub true_b: ProjectiveCamera,
}

/// AP view plus a view rotated by `separation_deg` about `axis`, with the
/// second pose estimated from two simulated marker observations.
pub fn study_views(
    geometry: &CArmGeometry,
    axis: OrbitAxis,
    separation_deg: f64,
    noise: &MarkerNoise,
    seed: u64,
) -> Result<StudyViews> {
    let a = geometry.station("a", 0.0, 0.0)?;
    let b = geometry.station_on("b", axis, separation_deg)?;
    let marker = crate::track::default_marker_pose();
    let frustum = RgbdFrustum::default();
    let obs_a = simulate_marker_observation(&a, &marker, noise, &frustum, rng::derive_seed(seed, 1))?;
    let obs_b = simulate_marker_observation(&b, &marker, noise, &frustum, rng::derive_seed(seed, 2))?;
    let estimated = relative_xray_pose(&obs_a, &obs_b, &geometry.rgbd_to_xray)?;
    let truth = true_relative_pose(&a, &b)?;
    Ok(StudyViews {
        world_to_a: a.xray_cam.pose.clone(),
        cam_a: ProjectiveCamera::new(geometry.xray, RigidTransform::identity(xray_frame("a"))),
        estimated_b: ProjectiveCamera::new(geometry.xray, estimated),
        true_b: ProjectiveCamera::new(geometry.xray, truth),
        station_a: a,
        station_b: b,
    })
}

impl StudyViews {
    /// Anatomical frame as seen from `X@a`.
    pub fn app_frame(&self) -> Result<AppFrame> {
        Ok(AppFrame { pose: self.world_to_a.compose(&AppFrame::identity(WORLD).pose)? })
    }

    /// Cup pose in `X@a` from angles and a world-frame center.
    pub fn cup_pose(&self, angles: &AnglePair, center_world: &Vector3<f64>) -> Result<CupPose> {
        CupPose::from_angles(angles, &self.app_frame()?, self.world_to_a.transform_point(center_world))
    }

    /// Session on the estimated cameras with the truth on the true ones.
    /// The cup starts at `initial` (or at the truth when `None`).
    pub fn session(&self, truth: CupPose, initial: Option<CupPose>, cup: CupModel, impactor: ImpactorModel) -> Result<PlanningSession> {
        let gt = GroundTruth { cup_pose: truth.clone(), cameras: [self.cam_a.clone(), self.true_b.clone()] };
        PlanningSession::new(
            [self.cam_a.clone(), self.estimated_b.clone()],
            cup,
            impactor,
            initial.unwrap_or(truth),
            self.app_frame()?,
            Some(gt),
        )
    }
}

/// Planning session between the AP view and a view rotated by
/// `separation_deg`, expressed in the AP X-ray frame.
pub fn build_study_session(cfg: &SweepConfig, separation_deg: f64, seed: u64) -> Result<PlanningSession> {
    let views = study_views(&cfg.geometry, cfg.axis, separation_deg, &cfg.noise, seed)?;
    let truth = views.cup_pose(&cfg.truth_angles, &Vector3::from(cfg.truth_center_mm))?;
    let (cup, impactor) = make_component(cfg.cup_diameter_mm, cfg.mesh_resolution)?;
    let mut session = views.session(truth, None, cup, impactor)?;
    session.tau = cfg.tau;
    if cfg.mode == SweepMode::Preset {
        session.set_preset(cfg.truth_angles)?;
    }
    Ok(session)
}

pub fn run_sweep_case(cfg: &SweepConfig, separation_deg: f64, seed: u64) -> Result<SweepRun> {
    let mut session = build_study_session(cfg, separation_deg, seed)?;
    let rot = if cfg.mode == SweepMode::Full6Dof { cfg.perturbation_deg } else { 0.0 };
    let perturbation = Perturbation::random(&mut rng::substream(seed, 3), cfg.perturbation_mm, rot);
    let mode = if cfg.mode == SweepMode::Full6Dof { PlanMode::Full6Dof } else { PlanMode::TranslationOnly };
    let mut placement = rng::substream(seed, 4);
    let mut opts = cfg.oracle;
    for offset in opts.placement_offset_px.iter_mut() {
        for c in offset.iter_mut() {
            *c = rng::gaussian(&mut placement) * cfg.placement_sigma_px;
        }
    }
    for scale in opts.placement_scale.iter_mut() {
        *scale = 1.0 + rng::gaussian(&mut placement) * cfg.placement_scale_sigma;
    }
    let result = plan_oracle(&mut session, &perturbation, mode, &opts)?;
    let gt = session.ground_truth.as_ref().ok_or(Error::NoGroundTruth)?;
    let ray = session.views[0].camera.optical_axis();
    let (along, orth) = decompose_translation(&result.committed_pose, &gt.cup_pose, &ray);
    Ok(SweepRun {
        separation_deg,
        seed,
        translation_mm: result.translation_error_mm,
        along_ray_mm: along,
        orthogonal_mm: orth,
        inclination_err_deg: result.inclination_error_deg,
        anteversion_err_deg: result.anteversion_error_deg,
        objective_px: result.objective_value,
        evaluations: result.evaluations,
        budget_exhausted: result.budget_exhausted,
    })
}

/// Every (separation, seed) run, in input order.
pub fn separation_sweep_runs(cfg: &SweepConfig) -> Result<Vec<SweepRun>> {
    if cfg.separations_deg.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::InvalidArgument(String::from("separation and seed lists must be non-empty")));
    }
    let mut runs = Vec::with_capacity(cfg.separations_deg.len() * cfg.seeds.len());
    for &sep in &cfg.separations_deg {
        for &seed in &cfg.seeds {
            runs.push(run_sweep_case(cfg, sep, seed)?);
        }
    }
    Ok(runs)
}

/// Aggregates runs per separation, keeping first-seen order.
pub fn aggregate_sweep(runs: &[SweepRun]) -> Vec<SweepRow> {
    let mut seps: Vec<f64> = Vec::new();
    for r in runs {
        if !seps.contains(&r.separation_deg) {
            seps.push(r.separation_deg);
        }
    }
    seps.into_iter()
        .map(|sep| {
            let group: Vec<&SweepRun> = runs.iter().filter(|r| r.separation_deg == sep).collect();
            let n = group.len() as f64;
            let mean = |f: fn(&SweepRun) -> f64| group.iter().map(|r| f(r)).sum::<f64>() / n;
            let max = |f: fn(&SweepRun) -> f64| group.iter().map(|r| f(r)).fold(0.0, f64::max);
            SweepRow {
                separation_deg: sep,
                runs: group.len(),
                mean_translation_mm: mean(|r| r.translation_mm),
                max_translation_mm: max(|r| r.translation_mm),
                mean_along_ray_mm: mean(|r| r.along_ray_mm),
                mean_orthogonal_mm: mean(|r| r.orthogonal_mm),
                mean_inclination_err_deg: mean(|r| r.inclination_err_deg),
                mean_anteversion_err_deg: mean(|r| r.anteversion_err_deg),
                max_inclination_err_deg: max(|r| r.inclination_err_deg),
                max_anteversion_err_deg: max(|r| r.anteversion_err_deg),
                fraction_below_3mm: group.iter().filter(|r| r.translation_mm < 3.0).count() as f64 / n,
            }
        })
        .collect()
}

pub fn separation_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    Ok(aggregate_sweep(&separation_sweep_runs(cfg)?))
}
