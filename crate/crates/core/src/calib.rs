//! Rigid co-calibration of the X-ray source and the RGB(D) camera from
//! corresponding 3D checkerboard corners.

use alloc::string::String;
use alloc::vec::Vec;

#[cfg(not(test))]
#[allow(unused_imports)] // std inherent float methods shadow it when std is linked
use num_traits::Float;
use nalgebra::{Matrix3, UnitQuaternion, Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geom::{look_at, PinholeIntrinsics, ProjectiveCamera, RigidTransform};
use crate::rng;
use crate::{Error, Result};

/// Second singular value of the centered point set must exceed this.
const COLLINEARITY_TOL: f64 = 1e-6;

/// Index-matched point sets expressed in two frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceSet3D {
    #[serde(rename = "a_mm", with = "points_serde")]
    points_a: Vec<Vector3<f64>>,
    #[serde(rename = "b_mm", with = "points_serde")]
    points_b: Vec<Vector3<f64>>,
    #[serde(rename = "from", default = "default_frame_a")]
    frame_a: String,
    #[serde(rename = "to", default = "default_frame_b")]
    frame_b: String,
}

fn default_frame_a() -> String {
    String::from("RGB")
}

fn default_frame_b() -> String {
    String::from("X")
}

pub(crate) mod points_serde {
    use alloc::vec::Vec;
    use nalgebra::Vector3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(pts: &[Vector3<f64>], s: S) -> Result<S::Ok, S::Error> {
        let raw: Vec<[f64; 3]> = pts.iter().map(|p| [p.x, p.y, p.z]).collect();
        raw.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vector3<f64>>, D::Error> {
        let raw: Vec<[f64; 3]> = Vec::deserialize(d)?;
        Ok(raw.into_iter().map(Vector3::from).collect())
    }
}

impl CorrespondenceSet3D {
    pub fn new(
        points_a: Vec<Vector3<f64>>,
        points_b: Vec<Vector3<f64>>,
        frame_a: impl Into<String>,
        frame_b: impl Into<String>,
    ) -> Result<Self> {
        let set = CorrespondenceSet3D { points_a, points_b, frame_a: frame_a.into(), frame_b: frame_b.into() };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points_a.len() != self.points_b.len() {
            return Err(Error::LengthMismatch { left: self.points_a.len(), right: self.points_b.len() });
        }
        if self.points_a.len() < 3 {
            return Err(Error::DegenerateConfiguration("at least three correspondences are required"));
        }
        if self.points_a.iter().chain(&self.points_b).any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::DegenerateConfiguration("non-finite coordinate"));
        }
        let sv = centered_singular_values(&self.points_a);
        if !(sv[1] > COLLINEARITY_TOL) {
            return Err(Error::DegenerateConfiguration("points are collinear"));
        }
        Ok(())
    }

    pub fn points_a(&self) -> &[Vector3<f64>] {
        &self.points_a
    }

    pub fn points_b(&self) -> &[Vector3<f64>] {
        &self.points_b
    }

    pub fn frame_a(&self) -> &str {
        &self.frame_a
    }

    pub fn frame_b(&self) -> &str {
        &self.frame_b
    }

    pub fn len(&self) -> usize {
        self.points_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points_a.is_empty()
    }
}

fn centroid(points: &[Vector3<f64>]) -> Vector3<f64> {
    points.iter().fold(Vector3::zeros(), |acc, p| acc + p) / points.len() as f64
}

/// Singular values of the centered N×3 point matrix, descending.
fn centered_singular_values(points: &[Vector3<f64>]) -> [f64; 3] {
    let c = centroid(points);
    let scatter = points.iter().fold(Matrix3::zeros(), |acc, p| {
        let d = p - c;
        acc + d * d.transpose()
    });
    let eig = scatter.symmetric_eigenvalues();
    let mut sv = [eig[0].max(0.0).sqrt(), eig[1].max(0.0).sqrt(), eig[2].max(0.0).sqrt()];
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(core::cmp::Ordering::Equal));
    sv
}

/// Outcome of a rigid co-calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// Maps frame A (RGB) into frame B (X-ray).
    pub transform: RigidTransform,
    pub rms_residual_mm: f64,
    /// Mean reprojection error of the X-ray and RGB cameras, when measured.
    pub per_camera_reprojection_px: Option<[f64; 2]>,
}

/// Least-squares rigid transform taking `points_a` onto `points_b`
/// (centroid subtraction + orthogonal Procrustes with reflection fix).
pub fn register_rigid(set: &CorrespondenceSet3D) -> Result<CalibrationResult> {
    set.validate()?;
    let ca = centroid(&set.points_a);
    let cb = centroid(&set.points_b);
    let h = set
        .points_a
        .iter()
        .zip(&set.points_b)
        .fold(Matrix3::zeros(), |acc, (a, b)| acc + (a - ca) * (b - cb).transpose());
    let svd = h.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::DegenerateConfiguration("SVD did not converge")),
    };
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let r = v * correction * u.transpose();
    let rotation = UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(r));
    let t = cb - rotation * ca;
    let transform = RigidTransform::new(rotation, t, set.frame_a.clone(), set.frame_b.clone());
    let rms = rms_residual(&transform, &set.points_a, &set.points_b);
    Ok(CalibrationResult { transform, rms_residual_mm: rms, per_camera_reprojection_px: None })
}

/// Root-mean-square of `|T·a_i − b_i|`.
pub fn rms_residual(t: &RigidTransform, a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let sum: f64 = a.iter().zip(b).map(|(a, b)| (t.transform_point(a) - b).norm_squared()).sum();
    (sum / a.len() as f64).sqrt()
}

/// Mean pixel distance between projections of `world_points` and `measured_px`.
pub fn reprojection_error(
    cam: &ProjectiveCamera,
    world_points: &[Vector3<f64>],
    measured_px: &[Vector2<f64>],
) -> Result<f64> {
    if world_points.len() != measured_px.len() {
        return Err(Error::LengthMismatch { left: world_points.len(), right: measured_px.len() });
    }
    if world_points.is_empty() {
        return Err(Error::InvalidArgument(String::from("no points")));
    }
    let mut sum = 0.0;
    for (p, m) in world_points.iter().zip(measured_px) {
        sum += (cam.project(p)? - m).norm();
    }
    Ok(sum / world_points.len() as f64)
}

/// Planar checkerboard: inner-corner grid of `rows × cols`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoardSpec {
    pub rows: usize,
    pub cols: usize,
    pub square_mm: f64,
}

impl Default for BoardSpec {
    fn default() -> Self {
        BoardSpec { rows: 7, cols: 9, square_mm: 10.0 }
    }
}

impl BoardSpec {
    /// Corner positions in the board frame, centered on the board.
    pub fn corners(&self) -> Vec<Vector3<f64>> {
        let ox = (self.cols as f64 - 1.0) * self.square_mm / 2.0;
        let oy = (self.rows as f64 - 1.0) * self.square_mm / 2.0;
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push(Vector3::new(c as f64 * self.square_mm - ox, r as f64 * self.square_mm - oy, 0.0));
            }
        }
        out
    }
}

/// Noise applied to simulated corner estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CornerNoise {
    /// RMS 3D displacement of every corner estimate, in each camera frame, mm.
    pub corner_3d_mm: f64,
    /// Per-axis standard deviation of detected corner pixels.
    pub pixel_sigma: f64,
}

impl CornerNoise {
    pub const NONE: CornerNoise = CornerNoise { corner_3d_mm: 0.0, pixel_sigma: 0.0 };
}

/// The two cameras being co-calibrated and their ground-truth relation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRig {
    pub xray: PinholeIntrinsics,
    pub rgb: PinholeIntrinsics,
    /// Ground truth, RGB → X.
    pub rgb_to_xray: RigidTransform,
    /// Depth range of board centers along the X-ray axis, mm.
    pub board_depth_mm: (f64, f64),
}

impl Default for CalibrationRig {
    /// Full-resolution X-ray detector and a 640×480 RGB camera beside the
    /// detector, aimed at the iso-center.
    fn default() -> Self {
        let xray = PinholeIntrinsics::from_detector(1000.0, 1024, 1024, 0.22).expect("valid detector");
        let rgb = PinholeIntrinsics::new(615.0, 615.0, 319.5, 239.5, 640, 480, 1.0).expect("valid intrinsics");
        let pose = look_at(&Vector3::new(0.0, -180.0, 900.0), &Vector3::new(0.0, 0.0, 600.0), &Vector3::y(), "X", "RGB")
            .expect("valid mount");
        CalibrationRig { xray, rgb, rgb_to_xray: pose.inverse(), board_depth_mm: (520.0, 680.0) }
    }
}

impl CalibrationRig {
    pub fn xray_camera(&self) -> ProjectiveCamera {
        ProjectiveCamera::new(self.xray, RigidTransform::identity(self.rgb_to_xray.to_frame()))
    }

    /// RGB camera expressed with the X-ray frame as world.
    pub fn rgb_camera(&self) -> ProjectiveCamera {
        ProjectiveCamera::new(self.rgb, self.rgb_to_xray.inverse())
    }
}

/// One simulated board placement.
#[derive(Debug, Clone, PartialEq)]
pub struct BoardView {
    /// Board → X-ray frame.
    pub board_pose: RigidTransform,
    pub xray_px: Vec<Vector2<f64>>,
    pub rgb_px: Vec<Vector2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckerboardViews {
    /// All corners: A = RGB frame estimates, B = X-ray frame estimates.
    pub correspondences: CorrespondenceSet3D,
    pub views: Vec<BoardView>,
}

/// Simulates `n_poses` simultaneous RGB/X-ray acquisitions of a checkerboard.
pub fn simulate_checkerboard_views(
    rig: &CalibrationRig,
    board: &BoardSpec,
    n_poses: usize,
    noise: &CornerNoise,
    seed: u64,
) -> Result<CheckerboardViews> {
    if board.rows < 2 || board.cols < 2 {
        return Err(Error::InvalidArgument(String::from("board needs at least 2x2 corners")));
    }
    if !(board.square_mm > 0.0) {
        return Err(Error::InvalidArgument(String::from("square size must be positive")));
    }
    if n_poses == 0 {
        return Err(Error::InvalidArgument(String::from("n_poses must be positive")));
    }
    let mut rng = rng::seeded(seed);
    let corners = board.corners();
    let xray_frame = rig.rgb_to_xray.to_frame();
    let rgb_frame = rig.rgb_to_xray.from_frame();
    let x_cam = rig.xray_camera();
    let rgb_cam = rig.rgb_camera();
    let xray_to_rgb = rig.rgb_to_xray.inverse();
    // per-axis sigma so the expected 3D displacement norm is corner_3d_mm
    let axis_sigma = noise.corner_3d_mm / 3f64.sqrt();

    let mut points_a = Vec::with_capacity(n_poses * corners.len());
    let mut points_b = Vec::with_capacity(n_poses * corners.len());
    let mut views = Vec::with_capacity(n_poses);
    for _ in 0..n_poses {
        let depth = rng.random_range(rig.board_depth_mm.0..=rig.board_depth_mm.1);
        let center = Vector3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), depth);
        // face the board roughly toward the X-ray source, then tilt it
        let facing = look_at(&center, &Vector3::zeros(), &Vector3::y(), xray_frame, "board")?.inverse();
        let tilt_deg: f64 = rng.random_range(0.0..30.0);
        let tilt = rng::rotation_with_angle(&mut rng, tilt_deg.to_radians());
        let board_pose = RigidTransform::new(tilt * facing.rotation(), center, "board", xray_frame);

        let mut xray_px = Vec::with_capacity(corners.len());
        let mut rgb_px = Vec::with_capacity(corners.len());
        for c in &corners {
            let in_x = board_pose.transform_point(c);
            let in_rgb = xray_to_rgb.transform_point(&in_x);
            points_b.push(in_x + rng::gaussian_vector(&mut rng, axis_sigma));
            points_a.push(in_rgb + rng::gaussian_vector(&mut rng, axis_sigma));
            let px_noise = |r: &mut rng::SimRng| {
                Vector2::new(rng::gaussian(r), rng::gaussian(r)) * noise.pixel_sigma
            };
            xray_px.push(x_cam.project(&in_x)? + px_noise(&mut rng));
            rgb_px.push(rgb_cam.project(&in_x)? + px_noise(&mut rng));
        }
        views.push(BoardView { board_pose, xray_px, rgb_px });
    }
    Ok(CheckerboardViews {
        correspondences: CorrespondenceSet3D::new(points_a, points_b, rgb_frame, xray_frame)?,
        views,
    })
}

/// Registers the simulated corners and measures the reprojection error of
/// the estimated relation in each camera.
pub fn calibrate(rig: &CalibrationRig, data: &CheckerboardViews) -> Result<CalibrationResult> {
    let mut result = register_rigid(&data.correspondences)?;
    let t = &result.transform;
    let x_cam = rig.xray_camera();
    let rgb_cam = ProjectiveCamera::new(rig.rgb, t.inverse());
    let n_corners = data.views.first().map_or(0, |v| v.xray_px.len());
    let mut x_pts = Vec::new();
    let mut x_meas = Vec::new();
    let mut rgb_pts = Vec::new();
    let mut rgb_meas = Vec::new();
    for (i, view) in data.views.iter().enumerate() {
        let a = &data.correspondences.points_a[i * n_corners..(i + 1) * n_corners];
        let b = &data.correspondences.points_b[i * n_corners..(i + 1) * n_corners];
        // X-ray: RGB-frame estimates mapped through the calibration
        x_pts.extend(a.iter().map(|p| t.transform_point(p)));
        x_meas.extend_from_slice(&view.xray_px);
        // RGB: X-frame estimates mapped back through the inverse
        rgb_pts.extend_from_slice(b);
        rgb_meas.extend_from_slice(&view.rgb_px);
    }
    let ex = reprojection_error(&x_cam, &x_pts, &x_meas)?;
    let er = reprojection_error(&rgb_cam, &rgb_pts, &rgb_meas)?;
    result.per_camera_reprojection_px = Some([ex, er]);
    Ok(result)
}

/// Combined mean reprojection error over both cameras.
pub fn combined_reprojection(result: &CalibrationResult) -> Option<f64> {
    result.per_camera_reprojection_px.map(|[x, r]| 0.5 * (x + r))
}
