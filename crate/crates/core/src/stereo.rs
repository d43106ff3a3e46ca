//! Two-view geometry: fundamental matrix, epipolar distance, midpoint
//! triangulation, and the bb-phantom epipolar study.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[cfg(not(test))]
#[allow(unused_imports)] // std inherent float methods shadow it when std is linked
use num_traits::Float;
use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::drr::PhantomSpec;
use crate::geom::{PinholeIntrinsics, ProjectiveCamera, Ray, RigidTransform};
use crate::track::{
    apply_intrinsic_drift, relative_xray_pose, simulate_marker_observation, CArmGeometry, CArmStation,
    IntrinsicDriftModel, MarkerNoise, OrbitAxis, RgbdFrustum,
};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StereoPair {
    pub cam_a: ProjectiveCamera,
    pub cam_b: ProjectiveCamera,
    /// `A → B`.
    pub relative: RigidTransform,
}

impl StereoPair {
    pub fn new(cam_a: ProjectiveCamera, cam_b: ProjectiveCamera) -> Result<Self> {
        let relative = cam_b.pose.compose(&cam_a.pose.inverse())?;
        Ok(StereoPair { cam_a, cam_b, relative })
    }

    /// Pair in the frame of camera A: A sits at the identity, B at `relative`.
    pub fn from_relative(intr_a: PinholeIntrinsics, intr_b: PinholeIntrinsics, relative: RigidTransform) -> Self {
        let a = relative.from_frame();
        let cam_a = ProjectiveCamera::new(intr_a, RigidTransform::identity(a));
        let cam_b = ProjectiveCamera::new(intr_b, relative.clone());
        StereoPair { cam_a, cam_b, relative }
    }

    pub fn check_consistency(&self) -> Result<()> {
        let rel = self.cam_b.pose.compose(&self.cam_a.pose.inverse())?;
        if rel.rotation_angle_to_deg(&self.relative) > 1e-9_f64.to_degrees() || rel.translation_distance(&self.relative) > 1e-9 {
            return Err(Error::InvalidArgument(String::from("relative pose disagrees with camera poses")));
        }
        Ok(())
    }
}

pub fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

/// `F = K_b⁻ᵀ [t]× R K_a⁻¹`, scaled to unit Frobenius norm.
pub fn fundamental_matrix(pair: &StereoPair) -> Result<Matrix3<f64>> {
    let t = pair.relative.translation();
    if t.norm() < 1e-6 {
        return Err(Error::DegenerateBaseline);
    }
    let e = skew(t) * pair.relative.rotation_matrix();
    let f = pair.cam_b.intrinsics.inverse_matrix().transpose() * e * pair.cam_a.intrinsics.inverse_matrix();
    Ok(f / f.norm())
}

/// Line `a·u + b·v + c = 0` with `a² + b² = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpipolarLine {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl EpipolarLine {
    pub fn through(f: &Matrix3<f64>, px_a: &Vector2<f64>) -> Result<Self> {
        let l = f * Vector3::new(px_a.x, px_a.y, 1.0);
        let n = (l.x * l.x + l.y * l.y).sqrt();
        if n < 1e-300 {
            return Err(Error::DegenerateConfiguration("point maps to the epipole"));
        }
        Ok(EpipolarLine { a: l.x / n, b: l.y / n, c: l.z / n })
    }

    pub fn distance(&self, p: &Vector2<f64>) -> f64 {
        (self.a * p.x + self.b * p.y + self.c).abs()
    }
}

/// Perpendicular distance of `px_b` to the epipolar line of `px_a`.
pub fn epipolar_distance(f: &Matrix3<f64>, px_a: &Vector2<f64>, px_b: &Vector2<f64>) -> f64 {
    match EpipolarLine::through(f, px_a) {
        Ok(line) => line.distance(px_b),
        Err(_) => f64::NAN,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Triangulation {
    pub point: Vector3<f64>,
    pub ray_gap_mm: f64,
}

/// Closest points of two lines as `(s, t)` along each.
fn closest_parameters(a: &Ray, b: &Ray) -> Result<(f64, f64)> {
    let cos = a.direction.dot(&b.direction).clamp(-1.0, 1.0);
    let angle = a.direction.cross(&b.direction).norm().atan2(cos);
    if angle < 1e-4 || core::f64::consts::PI - angle < 1e-4 {
        return Err(Error::ParallelRays);
    }
    let w = a.origin - b.origin;
    let d1 = a.direction.dot(&w);
    let d2 = b.direction.dot(&w);
    let denom = 1.0 - cos * cos;
    let s = (cos * d2 - d1) / denom;
    let t = (d2 - cos * d1) / denom;
    Ok((s, t))
}

/// Midpoint of the common perpendicular of the two back-projected rays.
pub fn triangulate_midpoint(pair: &StereoPair, px_a: &Vector2<f64>, px_b: &Vector2<f64>) -> Result<Triangulation> {
    let ra = pair.cam_a.backproject_ray(px_a);
    let rb = pair.cam_b.backproject_ray(px_b);
    let (s, t) = closest_parameters(&ra, &rb)?;
    let pa = ra.at(s);
    let pb = rb.at(t);
    Ok(Triangulation { point: (pa + pb) / 2.0, ray_gap_mm: (pa - pb).norm() })
}

/// Settings of the bb epipolar study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpipolarStudyConfig {
    pub geometry: CArmGeometry,
    pub phantom: PhantomSpec,
    pub marker_world: RigidTransform,
    pub noise: MarkerNoise,
    pub frustum: RgbdFrustum,
    /// Shift the true principal point with the lateral opening; the
    /// estimate always uses the nominal intrinsics.
    pub drift: Option<IntrinsicDriftModel>,
    pub seeds: Vec<u64>,
}

impl EpipolarStudyConfig {
    /// Full-resolution detector, nine-bb phantom, default marker noise.
    pub fn standard(noise: MarkerNoise, seeds: Vec<u64>) -> Self {
        EpipolarStudyConfig {
            geometry: CArmGeometry::full_resolution(),
            phantom: PhantomSpec::hip(),
            marker_world: crate::track::default_marker_pose(),
            noise,
            frustum: RgbdFrustum::default(),
            drift: None,
            seeds,
        }
    }
}

/// Stations of the study: 11 orbital (−50..50 by 10) and 9 cranial
/// (−40..40 by 10).
pub fn study_series() -> [(OrbitAxis, Vec<f64>); 2] {
    [
        (OrbitAxis::Orbital, (0..11).map(|k| -50.0 + 10.0 * k as f64).collect()),
        (OrbitAxis::Cranial, (0..9).map(|k| -40.0 + 10.0 * k as f64).collect()),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpipolarRow {
    pub seed: u64,
    pub bb_id: usize,
    pub station_a: String,
    pub station_b: String,
    pub epipolar_px: f64,
    pub triangulated_xyz_mm: [f64; 3],
    pub error_mm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpipolarSummary {
    pub pairs: usize,
    pub measurements: usize,
    pub mean_px: f64,
    pub std_px: f64,
    pub max_px: f64,
    pub triangulation_rmse_mm: f64,
}

pub fn summarize(rows: &[EpipolarRow]) -> EpipolarSummary {
    let n = rows.len().max(1) as f64;
    let mean = rows.iter().map(|r| r.epipolar_px).sum::<f64>() / n;
    let var = rows.iter().map(|r| (r.epipolar_px - mean).powi(2)).sum::<f64>() / n;
    let mut pairs: Vec<(u64, &str, &str)> = rows.iter().map(|r| (r.seed, r.station_a.as_str(), r.station_b.as_str())).collect();
    pairs.sort_unstable();
    pairs.dedup();
    EpipolarSummary {
        pairs: pairs.len(),
        measurements: rows.len(),
        mean_px: mean,
        std_px: var.sqrt(),
        max_px: rows.iter().map(|r| r.epipolar_px).fold(0.0, f64::max),
        triangulation_rmse_mm: (rows.iter().map(|r| r.error_mm * r.error_mm).sum::<f64>() / n).sqrt(),
    }
}

fn station_id(axis: OrbitAxis, angle: f64) -> String {
    match axis {
        OrbitAxis::Orbital => format!("orb{angle:+.0}"),
        OrbitAxis::Cranial => format!("cra{angle:+.0}"),
    }
}

/// Epipolar distances and triangulation errors over every unordered station
/// pair of each series, with relative poses estimated through the marker.
pub fn epipolar_study(cfg: &EpipolarStudyConfig) -> Result<Vec<EpipolarRow>> {
    let bbs: Vec<Vector3<f64>> = cfg.phantom.bbs.iter().map(|b| Vector3::from(b.center_mm)).collect();
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        for (series, (axis, angles)) in study_series().into_iter().enumerate() {
            let stations: Vec<CArmStation> = angles
                .iter()
                .map(|&a| cfg.geometry.station_on(&station_id(axis, a), axis, a))
                .collect::<Result<_>>()?;
            let mut observations = Vec::with_capacity(stations.len());
            for (k, s) in stations.iter().enumerate() {
                let sub = rng::derive_seed(seed, (series * 64 + k) as u64);
                observations.push(simulate_marker_observation(s, &cfg.marker_world, &cfg.noise, &cfg.frustum, sub)?);
            }
            // the detector the bbs were imaged with, possibly drifted
            let true_cams: Vec<ProjectiveCamera> = stations
                .iter()
                .map(|s| {
                    let k = match &cfg.drift {
                        Some(model) => apply_intrinsic_drift(&s.xray_cam.intrinsics, model, s.orbital_angle_deg)?,
                        None => s.xray_cam.intrinsics,
                    };
                    Ok(ProjectiveCamera::new(k, s.xray_cam.pose.clone()))
                })
                .collect::<Result<_>>()?;
            for i in 0..stations.len() {
                for j in (i + 1)..stations.len() {
                    let rel = relative_xray_pose(&observations[i], &observations[j], &cfg.geometry.rgbd_to_xray)?;
                    let pair = StereoPair::from_relative(cfg.geometry.xray, cfg.geometry.xray, rel);
                    let f = fundamental_matrix(&pair)?;
                    for (bb_id, bb) in bbs.iter().enumerate() {
                        let pa = true_cams[i].project(bb)?;
                        let pb = true_cams[j].project(bb)?;
                        let tri = triangulate_midpoint(&pair, &pa, &pb)?;
                        let truth = stations[i].xray_cam.pose.transform_point(bb);
                        rows.push(EpipolarRow {
                            seed,
                            bb_id,
                            station_a: stations[i].id.clone(),
                            station_b: stations[j].id.clone(),
                            epipolar_px: epipolar_distance(&f, &pa, &pb),
                            triangulated_xyz_mm: tri.point.into(),
                            error_mm: (tri.point - truth).norm(),
                        });
                    }
                }
            }
        }
    }
    Ok(rows)
}
