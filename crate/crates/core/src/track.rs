//! Relative X-ray poses between C-arm stations from a world-fixed visual
//! marker seen by the gantry-mounted RGBD camera.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[cfg(not(test))]
#[allow(unused_imports)] // std inherent float methods shadow it when std is linked
use num_traits::Float;
use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::geom::{look_at, rotation_about_point, PinholeIntrinsics, ProjectiveCamera, RigidTransform, WORLD};
use crate::rng;
use crate::{Error, Result};

/// Frame label of the marker.
pub const MARKER: &str = "M";

pub fn xray_frame(station: &str) -> String {
    format!("X@{station}")
}

pub fn rgbd_frame(station: &str) -> String {
    format!("RGBD@{station}")
}

/// Marker pose reported by the RGBD camera at one station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerObservation {
    /// Marker → `RGBD@station`.
    pub pose: RigidTransform,
    pub timestamp_s: f64,
    pub station_id: String,
    pub marker_id: String,
}

/// One C-arm arrangement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CArmStation {
    pub id: String,
    /// World → `X@id`.
    pub xray_cam: ProjectiveCamera,
    /// Device constant, `RGBD` → `X`.
    pub rgbd_to_xray: RigidTransform,
    pub orbital_angle_deg: f64,
    pub cranial_angle_deg: f64,
}

impl CArmStation {
    /// World → `RGBD@id`.
    pub fn rgbd_pose(&self) -> Result<RigidTransform> {
        let xray_to_rgbd = self.rgbd_to_xray.inverse().relabel(xray_frame(&self.id), rgbd_frame(&self.id));
        xray_to_rgbd.compose(&self.xray_cam.pose)
    }
}

/// Rotation axis of a C-arm orbit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrbitAxis {
    /// Oblique rotation about the patient's longitudinal (superior) axis.
    Orbital,
    /// Cranial/caudal tilt about the patient's left-right axis.
    Cranial,
}

impl OrbitAxis {
    pub fn world_axis(self) -> Vector3<f64> {
        match self {
            OrbitAxis::Orbital => Vector3::y(),
            OrbitAxis::Cranial => Vector3::x(),
        }
    }
}

/// Fixed geometry of one C-arm with its rigidly mounted RGBD camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CArmGeometry {
    pub xray: PinholeIntrinsics,
    pub source_to_iso_mm: f64,
    pub iso_center: [f64; 3],
    /// `RGBD` → `X`.
    pub rgbd_to_xray: RigidTransform,
}

impl CArmGeometry {
    /// Desk-scale mobile C-arm: 512² detector at 0.44 mm, source–iso 600 mm,
    /// source–detector 1000 mm.
    pub fn desk() -> Self {
        Self::with_detector(512, 0.44)
    }

    /// Full-resolution detector: 1024² at 0.22 mm.
    pub fn full_resolution() -> Self {
        Self::with_detector(1024, 0.22)
    }

    pub fn with_detector(pixels: u32, spacing_mm: f64) -> Self {
        let xray = PinholeIntrinsics::from_detector(1000.0, pixels, pixels, spacing_mm)
            .expect("detector defaults are valid");
        CArmGeometry {
            xray,
            source_to_iso_mm: 600.0,
            iso_center: [0.0, 0.0, 0.0],
            rgbd_to_xray: default_rgbd_mount(),
        }
    }

    pub fn iso(&self) -> Vector3<f64> {
        Vector3::from(self.iso_center)
    }

    /// AP view: source posterior of the patient, beam toward anterior,
    /// image +v toward inferior.
    pub fn ap_camera(&self, id: &str) -> Result<ProjectiveCamera> {
        let iso = self.iso();
        let eye = iso - Vector3::z() * self.source_to_iso_mm;
        let pose = look_at(&eye, &iso, &-Vector3::y(), WORLD, xray_frame(id))?;
        Ok(ProjectiveCamera::new(self.xray, pose))
    }

    /// Camera after orbital then cranial rotation about the iso-center.
    pub fn camera_at(&self, id: &str, orbital_deg: f64, cranial_deg: f64) -> Result<ProjectiveCamera> {
        let iso = self.iso();
        let orbital = rotation_about_point(&Vector3::y(), orbital_deg.to_radians(), &iso, WORLD)?;
        let cranial = rotation_about_point(&Vector3::x(), cranial_deg.to_radians(), &iso, WORLD)?;
        let motion = cranial.compose(&orbital)?;
        self.ap_camera(id)?.moved_by(&motion, xray_frame(id))
    }

    pub fn station(&self, id: &str, orbital_deg: f64, cranial_deg: f64) -> Result<CArmStation> {
        Ok(CArmStation {
            id: String::from(id),
            xray_cam: self.camera_at(id, orbital_deg, cranial_deg)?,
            rgbd_to_xray: self.rgbd_to_xray.clone(),
            orbital_angle_deg: orbital_deg,
            cranial_angle_deg: cranial_deg,
        })
    }

    pub fn station_on(&self, id: &str, axis: OrbitAxis, angle_deg: f64) -> Result<CArmStation> {
        match axis {
            OrbitAxis::Orbital => self.station(id, angle_deg, 0.0),
            OrbitAxis::Cranial => self.station(id, 0.0, angle_deg),
        }
    }
}

/// RGBD camera beside the detector, 100 mm in front of it and 180 mm toward
/// the patient's head, looking back toward the surgical site.
pub fn default_rgbd_mount() -> RigidTransform {
    look_at(
        &Vector3::new(0.0, -180.0, 900.0),
        &Vector3::new(-40.0, 60.0, 640.0),
        &Vector3::y(),
        "X",
        "RGBD",
    )
    .expect("mount defaults are valid")
    .inverse()
}

/// Default pose of the tracking marker: beside the phantom, facing anterior,
/// outside the X-ray field of view.
pub fn default_marker_pose() -> RigidTransform {
    RigidTransform::new(
        nalgebra::UnitQuaternion::identity(),
        Vector3::new(-95.0, 45.0, 70.0),
        MARKER,
        WORLD,
    )
}

/// Viewing frustum of the RGBD sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RgbdFrustum {
    pub h_fov_deg: f64,
    pub v_fov_deg: f64,
    pub min_range_mm: f64,
    pub max_range_mm: f64,
}

impl Default for RgbdFrustum {
    fn default() -> Self {
        RgbdFrustum { h_fov_deg: 70.0, v_fov_deg: 55.0, min_range_mm: 200.0, max_range_mm: 1500.0 }
    }
}

impl RgbdFrustum {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        if !(p.z > 0.0) {
            return false;
        }
        let range = p.norm();
        let h = (p.x / p.z).atan().abs().to_degrees();
        let v = (p.y / p.z).atan().abs().to_degrees();
        range >= self.min_range_mm && range <= self.max_range_mm && h <= self.h_fov_deg / 2.0 && v <= self.v_fov_deg / 2.0
    }
}

/// Pose noise of marker detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerNoise {
    pub rot_deg_sigma: f64,
    /// Translation sigma across the RGBD image plane (x, y).
    pub trans_mm_sigma: f64,
    /// Translation sigma along the RGBD optical axis (z).
    pub depth_mm_sigma: f64,
}

impl MarkerNoise {
    pub const NONE: MarkerNoise = MarkerNoise { rot_deg_sigma: 0.0, trans_mm_sigma: 0.0, depth_mm_sigma: 0.0 };

    /// Rotation sigma per millimetre of translation sigma, degrees.
    pub const ROT_DEG_PER_MM: f64 = 0.2;

    /// Default detection noise, tuned so the bb epipolar study on the
    /// full-resolution detector averages about 7.6 px.
    pub const DEFAULT: MarkerNoise = MarkerNoise { rot_deg_sigma: 0.186, trans_mm_sigma: 0.93, depth_mm_sigma: 0.93 };

    /// Same sigma on all three translation axes.
    pub fn isotropic(rot_deg_sigma: f64, trans_mm_sigma: f64) -> Self {
        MarkerNoise { rot_deg_sigma, trans_mm_sigma, depth_mm_sigma: trans_mm_sigma }
    }

    /// Noise at `trans_mm_sigma` with the default rotation and depth ratios.
    pub fn scaled(trans_mm_sigma: f64) -> Self {
        MarkerNoise {
            rot_deg_sigma: Self::ROT_DEG_PER_MM * trans_mm_sigma,
            trans_mm_sigma,
            depth_mm_sigma: trans_mm_sigma,
        }
    }
}

/// Relative X-ray pose `X@a → X@b` from two observations of the same marker:
/// `X@a → RGBD@a → M → RGBD@b → X@b`.
pub fn relative_xray_pose(
    obs_a: &MarkerObservation,
    obs_b: &MarkerObservation,
    rgbd_to_xray: &RigidTransform,
) -> Result<RigidTransform> {
    if obs_a.marker_id != obs_b.marker_id {
        return Err(Error::MarkerMismatch(obs_a.marker_id.clone(), obs_b.marker_id.clone()));
    }
    if obs_a.pose.from_frame() != obs_b.pose.from_frame() {
        return Err(Error::MarkerMismatch(
            String::from(obs_a.pose.from_frame()),
            String::from(obs_b.pose.from_frame()),
        ));
    }
    let mount_a = rgbd_to_xray.relabel(rgbd_frame(&obs_a.station_id), xray_frame(&obs_a.station_id));
    let mount_b = rgbd_to_xray.relabel(rgbd_frame(&obs_b.station_id), xray_frame(&obs_b.station_id));
    mount_b
        .compose(&obs_b.pose)?
        .compose(&obs_a.pose.inverse())?
        .compose(&mount_a.inverse())
}

/// Rotates `pose` about its own origin (in the target frame) and shifts it.
pub fn perturb_pose(pose: &RigidTransform, rotation: nalgebra::UnitQuaternion<f64>, shift: Vector3<f64>) -> RigidTransform {
    RigidTransform::new(
        rotation * pose.rotation(),
        pose.translation() + shift,
        pose.from_frame(),
        pose.to_frame(),
    )
}

/// Simulated marker detection at `station`; `marker_world` maps M → world.
pub fn simulate_marker_observation(
    station: &CArmStation,
    marker_world: &RigidTransform,
    noise: &MarkerNoise,
    frustum: &RgbdFrustum,
    seed: u64,
) -> Result<MarkerObservation> {
    let truth = station.rgbd_pose()?.compose(marker_world)?;
    if !frustum.contains(truth.translation()) {
        return Err(Error::MarkerOutOfView);
    }
    let mut rng = rng::seeded(seed);
    let rot = rng::rotation_noise(&mut rng, noise.rot_deg_sigma.to_radians());
    let unit = rng::gaussian_vector(&mut rng, 1.0);
    let shift = Vector3::new(unit.x * noise.trans_mm_sigma, unit.y * noise.trans_mm_sigma, unit.z * noise.depth_mm_sigma);
    Ok(MarkerObservation {
        pose: perturb_pose(&truth, rot, shift),
        timestamp_s: 0.0,
        station_id: station.id.clone(),
        marker_id: String::from(marker_world.from_frame()),
    })
}

/// Ground-truth relative pose between two stations.
pub fn true_relative_pose(a: &CArmStation, b: &CArmStation) -> Result<RigidTransform> {
    b.xray_cam.pose.compose(&a.xray_cam.pose.inverse())
}

/// Principal-point drift as a function of C-arm lateral opening.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicDriftModel {
    /// `(|angle| deg, shift px)` knots, ascending in angle, starting at 0.
    pub table: Vec<(f64, f64)>,
    /// Unit image direction of the shift.
    pub direction: [f64; 2],
    /// Detector pixel spacing the table was measured at.
    pub reference_pixel_spacing_mm: f64,
}

impl Default for IntrinsicDriftModel {
    fn default() -> Self {
        IntrinsicDriftModel {
            table: alloc::vec![(0.0, 0.0), (10.0, 5.17), (20.0, 7.3), (30.0, 17.0)],
            direction: [1.0, 0.0],
            reference_pixel_spacing_mm: 0.22,
        }
    }
}

impl IntrinsicDriftModel {
    pub fn validate(&self) -> Result<()> {
        let first = self.table.first().ok_or_else(|| Error::InvalidArgument(String::from("empty drift table")))?;
        if first.0 != 0.0 || first.1 != 0.0 {
            return Err(Error::InvalidArgument(String::from("drift table must start at (0, 0)")));
        }
        for w in self.table.windows(2) {
            if !(w[1].0 > w[0].0) || w[1].1 < w[0].1 {
                return Err(Error::InvalidArgument(String::from("drift table must be increasing")));
            }
        }
        let n = Vector2::from(self.direction).norm();
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(String::from("drift direction must be a unit vector")));
        }
        Ok(())
    }

    /// Piecewise-linear shift in reference pixels; clamped past the last knot.
    pub fn shift_px(&self, lateral_opening_deg: f64) -> f64 {
        let a = lateral_opening_deg.abs();
        let last = self.table[self.table.len() - 1];
        if a >= last.0 {
            return last.1;
        }
        for w in self.table.windows(2) {
            let (a0, s0) = w[0];
            let (a1, s1) = w[1];
            if a <= a1 {
                return s0 + (s1 - s0) * (a - a0) / (a1 - a0);
            }
        }
        last.1
    }
}

/// Intrinsics with the principal point moved by the modelled drift.
pub fn apply_intrinsic_drift(
    intr: &PinholeIntrinsics,
    model: &IntrinsicDriftModel,
    lateral_opening_deg: f64,
) -> Result<PinholeIntrinsics> {
    model.validate()?;
    // the table is in reference pixels; keep the physical shift on the detector
    let shift = model.shift_px(lateral_opening_deg) * model.reference_pixel_spacing_mm / intr.pixel_spacing_mm;
    let mut out = *intr;
    out.cx += shift * model.direction[0];
    out.cy += shift * model.direction[1];
    out.cx = out.cx.clamp(0.0, intr.width as f64 - 1e-9);
    out.cy = out.cy.clamp(0.0, intr.height as f64 - 1e-9);
    Ok(out)
}

/// One row of a tracking-noise sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackSweepRow {
    pub angle_deg: f64,
    pub seed: u64,
    pub rotation_err_deg: f64,
    pub translation_err_mm: f64,
}

/// Relative-pose error between the AP station and a station rotated by each
/// angle about `axis`, for each seed.
pub fn track_sweep(
    geometry: &CArmGeometry,
    axis: OrbitAxis,
    angles_deg: &[f64],
    seeds: &[u64],
    noise: &MarkerNoise,
    marker_world: &RigidTransform,
    frustum: &RgbdFrustum,
) -> Result<Vec<TrackSweepRow>> {
    let ap = geometry.station("ap", 0.0, 0.0)?;
    let mut rows = Vec::with_capacity(angles_deg.len() * seeds.len());
    for &angle in angles_deg {
        let other = geometry.station_on("b", axis, angle)?;
        let truth = true_relative_pose(&ap, &other)?;
        for &seed in seeds {
            let obs_a = simulate_marker_observation(&ap, marker_world, noise, frustum, seed.wrapping_mul(2))?;
            let obs_b = simulate_marker_observation(&other, marker_world, noise, frustum, seed.wrapping_mul(2) + 1)?;
            let est = relative_xray_pose(&obs_a, &obs_b, &geometry.rgbd_to_xray)?;
            rows.push(TrackSweepRow {
                angle_deg: angle,
                seed,
                rotation_err_deg: est.rotation_angle_to_deg(&truth),
                translation_err_mm: est.translation_distance(&truth),
            });
        }
    }
    Ok(rows)
}
