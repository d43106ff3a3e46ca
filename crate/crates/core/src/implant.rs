//! Acetabular cup and impactor geometry, radiographic angle algebra,
//! component projection and silhouette contours.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use alloc::format;
use core::f64::consts::PI;

#[cfg(not(test))]
#[allow(unused_imports)] // std inherent float methods shadow it when std is linked
use num_traits::Float;
use nalgebra::{UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::geom::{minimal_rotation, ProjectiveCamera, RigidTransform};
use crate::{Error, Result};

pub const CUP: &str = "C";
pub const IMPACTOR: &str = "I";
pub const APP: &str = "APP";

/// Default silhouette threshold on `|r·n|`.
pub const DEFAULT_TAU: f64 = 0.12;

/// Radiographic inclination (abduction) and anteversion, degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnglePair {
    pub inclination_deg: f64,
    pub anteversion_deg: f64,
}

impl AnglePair {
    pub fn new(inclination_deg: f64, anteversion_deg: f64) -> Result<Self> {
        let a = AnglePair { inclination_deg, anteversion_deg };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.inclination_deg >= 0.0 && self.inclination_deg < 180.0) {
            return Err(Error::AngleOutOfRange(format!("inclination {} not in [0, 180)", self.inclination_deg)));
        }
        if !(self.anteversion_deg > -90.0 && self.anteversion_deg < 90.0) {
            return Err(Error::AngleOutOfRange(format!("anteversion {} not in (-90, 90)", self.anteversion_deg)));
        }
        Ok(())
    }
}

/// Cup opening axis in the APP frame (x left, y superior, z anterior).
pub fn axis_from_angles(a: &AnglePair) -> Vector3<f64> {
    let (si, ci) = a.inclination_deg.to_radians().sin_cos();
    let (sa, ca) = a.anteversion_deg.to_radians().sin_cos();
    Vector3::new(si * ca, -ci * ca, sa)
}

pub fn angles_from_axis(axis: &Vector3<f64>) -> Result<AnglePair> {
    let n = axis.norm();
    if !(n > 1e-12) {
        return Err(Error::ZeroVector);
    }
    let a = axis / n;
    if (a.x * a.x + a.y * a.y).sqrt() < 1e-9 {
        return Err(Error::GimbalDegenerate);
    }
    let pair = AnglePair {
        inclination_deg: a.x.atan2(-a.y).to_degrees(),
        anteversion_deg: a.z.clamp(-1.0, 1.0).asin().to_degrees(),
    };
    pair.validate()?;
    Ok(pair)
}

/// Anterior pelvic plane frame, APP → world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppFrame {
    pub pose: RigidTransform,
}

impl AppFrame {
    pub fn identity(world: &str) -> Self {
        AppFrame { pose: RigidTransform::identity_between(APP, world) }
    }

    /// APP-frame direction expressed in the world.
    pub fn to_world(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.pose.transform_vector(v)
    }

    pub fn from_world(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.pose.rotation().inverse_transform_vector(v)
    }
}

/// Hemispherical cup shell, cup frame: origin at the sphere center, +Z the
/// opening axis, pole at `-r·Z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CupModel {
    pub outer_radius_mm: f64,
    pub segments: usize,
    pub rings: usize,
    pub vertices: Vec<Vector3<f64>>,
    pub normals: Vec<Vector3<f64>>,
    pub triangles: Vec<[u32; 3]>,
}

impl CupModel {
    /// Grid index of ring `i` (0 = pole) and column `j` (0..=segments).
    pub fn vertex_index(&self, i: usize, j: usize) -> usize {
        i * (self.segments + 1) + j
    }

    /// Canonical index after welding the duplicated seam column and pole row.
    pub fn welded_index(&self, idx: usize) -> usize {
        let i = idx / (self.segments + 1);
        let j = idx % (self.segments + 1);
        if i == 0 {
            0
        } else {
            self.vertex_index(i, j % self.segments)
        }
    }

    /// Mesh neighbours on the ring/segment grid, welded.
    fn neighbours(&self, idx: usize) -> Vec<usize> {
        let i = idx / (self.segments + 1);
        let j = idx % (self.segments + 1);
        let s = self.segments;
        let mut out = Vec::with_capacity(4);
        if i == 0 {
            out.extend((0..s).map(|j| self.vertex_index(1, j)));
            return out;
        }
        out.push(self.welded_index(self.vertex_index(i, (j + 1) % s)));
        out.push(self.welded_index(self.vertex_index(i, (j + s - 1) % s)));
        out.push(self.welded_index(self.vertex_index(i - 1, j)));
        if i < self.rings {
            out.push(self.vertex_index(i + 1, j % s));
        }
        out
    }

    /// Signed volume of the closed mesh (positive for outward winding).
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i as usize]);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Every welded edge is shared by exactly two triangles with opposite
    /// orientation.
    pub fn is_watertight(&self) -> bool {
        let mut edges: Vec<(usize, usize)> = Vec::with_capacity(self.triangles.len() * 3);
        for t in &self.triangles {
            let w = t.map(|i| self.welded_index(i as usize));
            if w[0] == w[1] || w[1] == w[2] || w[0] == w[2] {
                return false;
            }
            for k in 0..3 {
                edges.push((w[k], w[(k + 1) % 3]));
            }
        }
        edges.sort_unstable();
        if edges.windows(2).any(|p| p[0] == p[1]) {
            return false;
        }
        edges.iter().all(|&(a, b)| edges.binary_search(&(b, a)).is_ok())
    }
}

/// Straight cylindrical impactor. Impactor frame: origin at the tip (the
/// cup pole), +Z along the shaft.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactorModel {
    pub radius_mm: f64,
    pub length_mm: f64,
    /// Impactor → cup.
    pub mount: RigidTransform,
}

impl ImpactorModel {
    pub fn new(radius_mm: f64, length_mm: f64, cup_radius_mm: f64) -> Self {
        ImpactorModel {
            radius_mm,
            length_mm,
            mount: RigidTransform::new(UnitQuaternion::identity(), Vector3::new(0.0, 0.0, -cup_radius_mm), IMPACTOR, CUP),
        }
    }

    /// Closed cylinder mesh in the impactor frame.
    pub fn mesh(&self, segments: usize) -> (Vec<Vector3<f64>>, Vec<[u32; 3]>) {
        let mut v = Vec::with_capacity(2 * segments + 2);
        for z in [0.0, self.length_mm] {
            for j in 0..segments {
                let phi = 2.0 * PI * j as f64 / segments as f64;
                v.push(Vector3::new(self.radius_mm * phi.cos(), self.radius_mm * phi.sin(), z));
            }
        }
        let bottom = v.len() as u32;
        v.push(Vector3::zeros());
        let top = v.len() as u32;
        v.push(Vector3::new(0.0, 0.0, self.length_mm));
        let s = segments as u32;
        let mut t = Vec::with_capacity(4 * segments);
        for j in 0..s {
            let k = (j + 1) % s;
            t.push([j, k, s + k]);
            t.push([j, s + k, s + j]);
            t.push([bottom, k, j]);
            t.push([top, s + j, s + k]);
        }
        (v, t)
    }
}

/// Builds the cup mesh at `resolution` segments (even, ≥ 8) and the default
/// impactor (radius 5 mm, length 300 mm).
pub fn make_component(cup_diameter_mm: f64, resolution: usize) -> Result<(CupModel, ImpactorModel)> {
    if !(cup_diameter_mm > 0.0 && cup_diameter_mm.is_finite()) {
        return Err(Error::InvalidArgument(format!("cup diameter {cup_diameter_mm} must be positive")));
    }
    if resolution < 8 || resolution % 2 != 0 {
        return Err(Error::BadResolution(resolution));
    }
    let r = cup_diameter_mm / 2.0;
    let segments = resolution;
    let rings = resolution / 2;
    let mut vertices = Vec::with_capacity((rings + 1) * (segments + 1));
    for i in 0..=rings {
        let theta = i as f64 * (PI / 2.0) / rings as f64;
        let (st, ct) = theta.sin_cos();
        for j in 0..=segments {
            let phi = 2.0 * PI * (j % segments) as f64 / segments as f64;
            let (sp, cp) = phi.sin_cos();
            vertices.push(Vector3::new(r * st * cp, r * st * sp, -r * ct));
        }
    }
    let normals = vertices.iter().map(|v| v / r).collect();
    let mut cup = CupModel { outer_radius_mm: r, segments, rings, vertices, normals, triangles: Vec::new() };

    let mut triangles = Vec::new();
    for i in 0..rings {
        for j in 0..segments {
            let a = cup.vertex_index(i, j) as u32;
            let b = cup.vertex_index(i, j + 1) as u32;
            let c = cup.vertex_index(i + 1, j) as u32;
            let d = cup.vertex_index(i + 1, j + 1) as u32;
            if i == 0 {
                triangles.push([a, d, c]);
            } else {
                triangles.push([a, d, c]);
                triangles.push([a, b, d]);
            }
        }
    }
    // rim disk closing the opening, fanned from the first rim vertex
    let rim0 = cup.vertex_index(rings, 0) as u32;
    for j in 1..segments - 1 {
        triangles.push([rim0, cup.vertex_index(rings, j) as u32, cup.vertex_index(rings, j + 1) as u32]);
    }
    cup.triangles = triangles;
    Ok((cup, ImpactorModel::new(5.0, 300.0, r)))
}

/// Cup pose (cup → world).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CupPose {
    pub pose: RigidTransform,
}

impl CupPose {
    pub fn new(pose: RigidTransform) -> Self {
        CupPose { pose }
    }

    pub fn center(&self) -> Vector3<f64> {
        *self.pose.translation()
    }

    /// Opening axis in world coordinates.
    pub fn axis(&self) -> Vector3<f64> {
        self.pose.rotation() * Vector3::z()
    }

    pub fn angles(&self, app: &AppFrame) -> Result<AnglePair> {
        angles_from_axis(&app.from_world(&self.axis()))
    }

    /// Pose whose axis follows `angles` in `app`, centered at `center`.
    pub fn from_angles(angles: &AnglePair, app: &AppFrame, center: Vector3<f64>) -> Result<Self> {
        angles.validate()?;
        let world = app.pose.to_frame();
        let start = CupPose::new(RigidTransform::new(UnitQuaternion::identity(), center, CUP, world));
        Ok(preset_orientation(angles, app, &start))
    }
}

/// Cup orientation with the axis set to `desired` (in `app`); roll follows
/// the minimal rotation from `current`, translation is kept.
pub fn preset_orientation(desired: &AnglePair, app: &AppFrame, current: &CupPose) -> CupPose {
    let target = app.to_world(&axis_from_angles(desired));
    let axis = current.axis();
    if axis == target {
        return current.clone();
    }
    let q = minimal_rotation(&axis, &target) * current.pose.rotation();
    CupPose::new(current.pose.with_rotation(q))
}

/// Pixel positions of every cup vertex in each camera.
pub fn project_component(
    model: &CupModel,
    cup_pose: &CupPose,
    cams: &[ProjectiveCamera],
) -> Result<Vec<Vec<Vector2<f64>>>> {
    cams.iter()
        .map(|cam| {
            let cup_to_cam = cam.pose.compose(&cup_pose.pose)?;
            model
                .vertices
                .iter()
                .map(|v| cam.project_camera_point(&cup_to_cam.transform_point(v)))
                .collect()
        })
        .collect()
}

/// Silhouette polylines of the cup in `cam`: vertices with `|r·n| < tau`,
/// grouped by mesh adjacency and ordered around the projected cup center.
pub fn silhouette_contour(
    model: &CupModel,
    cup_pose: &CupPose,
    cam: &ProjectiveCamera,
    tau: f64,
) -> Result<Vec<Vec<Vector2<f64>>>> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!("tau {tau} not in (0, 1)")));
    }
    let cup_to_cam = cam.pose.compose(&cup_pose.pose)?;
    let n = model.vertices.len();
    let mut selected = vec![false; n];
    let mut px = vec![Vector2::zeros(); n];
    for idx in 0..n {
        if model.welded_index(idx) != idx {
            continue;
        }
        // camera center is the origin of the camera frame
        let p = cup_to_cam.transform_point(&model.vertices[idx]);
        let normal = cup_to_cam.transform_vector(&model.normals[idx]);
        let ray = p / p.norm();
        if ray.dot(&normal).abs() < tau {
            px[idx] = cam.project_camera_point(&p)?;
            selected[idx] = true;
        }
    }
    let center = cam.project_camera_point(&cup_to_cam.transform_point(&Vector3::zeros()))?;

    let gap = 4.0 * 2.0 * PI / model.segments as f64;
    let mut label = vec![usize::MAX; n];
    let mut polylines = Vec::new();
    for seed in 0..n {
        if !selected[seed] || label[seed] != usize::MAX {
            continue;
        }
        let mut stack = vec![seed];
        let mut members = Vec::new();
        label[seed] = seed;
        while let Some(v) = stack.pop() {
            members.push(v);
            for w in model.neighbours(v) {
                if selected[w] && label[w] == usize::MAX {
                    label[w] = seed;
                    stack.push(w);
                }
            }
        }
        let mut ordered: Vec<(f64, usize)> = members
            .iter()
            .map(|&v| {
                let d = px[v] - center;
                (d.y.atan2(d.x), v)
            })
            .collect();
        ordered.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        polylines.extend(split_at_gaps(&ordered, &px, gap));
    }
    if polylines.is_empty() {
        return Err(Error::EmptyContour);
    }
    Ok(polylines)
}

/// Splits an angle-sorted ring of points where consecutive angles jump by
/// more than `gap`; a ring without gaps is closed.
fn split_at_gaps(ordered: &[(f64, usize)], px: &[Vector2<f64>], gap: f64) -> Vec<Vec<Vector2<f64>>> {
    let m = ordered.len();
    if m == 1 {
        return vec![vec![px[ordered[0].1]]];
    }
    // start after the largest angular jump (including the wrap-around one)
    let mut start = 0;
    let mut largest = ordered[0].0 + 2.0 * PI - ordered[m - 1].0;
    for k in 1..m {
        let d = ordered[k].0 - ordered[k - 1].0;
        if d > largest {
            largest = d;
            start = k;
        }
    }
    let mut out = Vec::new();
    let mut current = Vec::new();
    for step in 0..m {
        let k = (start + step) % m;
        if step > 0 {
            let prev = ordered[(k + m - 1) % m].0;
            let mut d = ordered[k].0 - prev;
            if d < 0.0 {
                d += 2.0 * PI;
            }
            if d > gap {
                out.push(core::mem::take(&mut current));
            }
        }
        current.push(px[ordered[k].1]);
    }
    if largest <= gap {
        current.push(current[0]);
    }
    out.push(current);
    out
}

/// Mean distance from each point of `points` to the polylines.
pub fn mean_distance_to_polylines(points: &[Vector2<f64>], polylines: &[Vec<Vector2<f64>>]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    points.iter().map(|p| distance_to_polylines(p, polylines)).sum::<f64>() / points.len() as f64
}

pub fn distance_to_polylines(p: &Vector2<f64>, polylines: &[Vec<Vector2<f64>>]) -> f64 {
    let mut best = f64::INFINITY;
    for line in polylines {
        if line.len() == 1 {
            best = best.min((p - line[0]).norm());
            continue;
        }
        for seg in line.windows(2) {
            best = best.min(point_segment_distance(p, &seg[0], &seg[1]));
        }
    }
    best
}

fn point_segment_distance(p: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Symmetric mean nearest-point distance between two contours, pixels.
pub fn symmetric_contour_distance(a: &[Vec<Vector2<f64>>], b: &[Vec<Vector2<f64>>]) -> f64 {
    let pa: Vec<Vector2<f64>> = a.iter().flatten().copied().collect();
    let pb: Vec<Vector2<f64>> = b.iter().flatten().copied().collect();
    0.5 * (mean_distance_to_polylines(&pa, b) + mean_distance_to_polylines(&pb, a))
}

/// Contour as `[[u, v], ...]` lists for serialization.
pub fn contour_to_lists(contour: &[Vec<Vector2<f64>>]) -> Vec<Vec<[f64; 2]>> {
    contour.iter().map(|l| l.iter().map(|p| [p.x, p.y]).collect()).collect()
}

pub fn frame_label(kind: &str, id: &str) -> String {
    format!("{kind}@{id}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{look_at, PinholeIntrinsics, WORLD};
    use crate::track::CArmGeometry;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cup_at(center: Vector3<f64>, angles: AnglePair) -> CupPose {
        CupPose::from_angles(&angles, &AppFrame::identity(WORLD), center).unwrap()
    }

    #[test]
    fn angle_anchors() {
        let a = |i, v| axis_from_angles(&AnglePair::new(i, v).unwrap());
        assert_relative_eq!(a(0.0, 0.0), Vector3::new(0.0, -1.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(a(90.0, 0.0), Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-15);
        // direct evaluation: (sin40·cos25, −cos40·cos25, sin25)
        assert_relative_eq!(a(40.0, 25.0), Vector3::new(0.58256, -0.69427, 0.42262), epsilon = 1e-5);
        let back = angles_from_axis(&a(40.0, 25.0)).unwrap();
        assert_relative_eq!(back.inclination_deg, 40.0, epsilon = 1e-9);
        assert_relative_eq!(back.anteversion_deg, 25.0, epsilon = 1e-9);
        assert_eq!(angles_from_axis(&Vector3::new(0.0, -1.0, 0.0)).unwrap(), AnglePair::new(0.0, 0.0).unwrap());
        assert_eq!(angles_from_axis(&Vector3::new(1.0, 0.0, 0.0)).unwrap(), AnglePair::new(90.0, 0.0).unwrap());
    }

    #[test]
    fn angle_grid_round_trip() {
        for i in 1..180 {
            for v in -89..90 {
                let pair = AnglePair::new(i as f64, v as f64).unwrap();
                let back = angles_from_axis(&axis_from_angles(&pair)).unwrap();
                assert!((back.inclination_deg - pair.inclination_deg).abs() < 1e-9);
                assert!((back.anteversion_deg - pair.anteversion_deg).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn angle_errors() {
        assert_eq!(angles_from_axis(&Vector3::z()), Err(Error::GimbalDegenerate));
        assert_eq!(angles_from_axis(&-Vector3::z()), Err(Error::GimbalDegenerate));
        assert!(matches!(angles_from_axis(&Vector3::new(-1.0, -1.0, 0.0)), Err(Error::AngleOutOfRange(_))));
        assert!(AnglePair::new(180.0, 0.0).is_err());
        assert!(AnglePair::new(10.0, 90.0).is_err());
    }

    #[test]
    fn mesh_counts_and_radius() {
        let (cup, imp) = make_component(54.0, 32).unwrap();
        assert_eq!(cup.vertices.len(), 561);
        for (v, n) in cup.vertices.iter().zip(&cup.normals) {
            assert!((v.norm() - 27.0).abs() < 1e-6);
            assert!((n.norm() - 1.0).abs() < 1e-12);
            assert!((n.dot(&(v / v.norm())) - 1.0).abs() < 1e-6);
        }
        assert!(cup.is_watertight());
        assert!(cup.signed_volume() > 0.0);
        // closed hemisphere volume 2/3·π·r³ less the faceting loss
        let exact = 2.0 / 3.0 * PI * 27f64.powi(3);
        assert!(cup.signed_volume() < exact && cup.signed_volume() > 0.95 * exact);
        assert_eq!(imp.radius_mm, 5.0);
        assert_eq!(imp.length_mm, 300.0);
    }

    #[test]
    fn minimal_mesh_is_watertight() {
        let (cup, _) = make_component(54.0, 8).unwrap();
        assert_eq!(cup.vertices.len(), 5 * 9);
        assert!(cup.is_watertight());
        assert_eq!(make_component(54.0, 6), Err(Error::BadResolution(6)));
        assert_eq!(make_component(54.0, 9), Err(Error::BadResolution(9)));
    }

    #[test]
    fn impactor_mesh_is_closed() {
        let (_, imp) = make_component(54.0, 32).unwrap();
        let (v, t) = imp.mesh(24);
        let vol: f64 = t
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| v[i as usize]);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum();
        let prism = 0.5 * 24.0 * 25.0 * (2.0 * PI / 24.0).sin() * 300.0;
        assert_relative_eq!(vol, prism, max_relative = 1e-9);
    }

    #[test]
    fn projection_centered_and_magnified() {
        let g = CArmGeometry::desk();
        let cam = g.ap_camera("a").unwrap();
        let (cup, _) = make_component(54.0, 32).unwrap();
        // average over welded vertices so seam and pole copies do not bias it
        let centroid = |pose: &CupPose| {
            let p = &project_component(&cup, pose, core::slice::from_ref(&cam)).unwrap()[0];
            let unique: Vec<_> = (0..p.len()).filter(|&i| cup.welded_index(i) == i).map(|i| p[i]).collect();
            unique.iter().sum::<Vector2<f64>>() / unique.len() as f64
        };
        // (40, 25) is not symmetric about the ray, so use an axis along it
        let along = CupPose::new(RigidTransform::new(
            minimal_rotation(&Vector3::z(), &Vector3::z()),
            Vector3::zeros(),
            CUP,
            WORLD,
        ));
        let c0 = centroid(&along);
        assert!((c0 - g.xray.principal_point()).norm() < 1.0);
        // axis across the ray keeps the mean vertex depth at the iso-center;
        // +u on the detector is world −x for the AP view
        let across = cup_at(Vector3::zeros(), AnglePair::new(0.0, 0.0).unwrap());
        let shifted = CupPose::new(across.pose.with_translation(Vector3::new(-10.0, 0.0, 0.0)));
        let du = centroid(&shifted).x - centroid(&across).x;
        assert_relative_eq!(du, 10.0 * g.xray.fx / 600.0, max_relative = 0.01);
    }

    #[test]
    fn identical_cameras_identical_projections() {
        let g = CArmGeometry::desk();
        let cam = g.camera_at("a", 20.0, 0.0).unwrap();
        let (cup, _) = make_component(54.0, 16).unwrap();
        let pose = cup_at(Vector3::new(3.0, 4.0, 5.0), AnglePair::new(40.0, 25.0).unwrap());
        let p = project_component(&cup, &pose, &[cam.clone(), cam]).unwrap();
        assert_eq!(p[0], p[1]);
    }

    #[test]
    fn behind_camera_rejected() {
        let g = CArmGeometry::desk();
        let cam = g.ap_camera("a").unwrap();
        let (cup, _) = make_component(54.0, 16).unwrap();
        let pose = cup_at(Vector3::new(0.0, 0.0, -700.0), AnglePair::new(40.0, 25.0).unwrap());
        assert!(matches!(project_component(&cup, &pose, &[cam]), Err(Error::BehindCamera { .. })));
    }

    #[test]
    fn silhouette_matches_sphere_outline() {
        let g = CArmGeometry::desk();
        let cam = g.ap_camera("a").unwrap();
        let (cup, _) = make_component(54.0, 64).unwrap();
        // opening away from the source: the outline is the sphere limb
        let pose = CupPose::new(RigidTransform::identity_between(CUP, WORLD));
        let contour = silhouette_contour(&cup, &pose, &cam, DEFAULT_TAU).unwrap();
        assert_eq!(contour.len(), 1);
        let pp = g.xray.principal_point();
        let r = 27.0 * g.xray.fx / 600.0;
        for p in contour.iter().flatten() {
            assert!(((p - pp).norm() - r).abs() < 2.0);
        }
        let closed = &contour[0];
        assert_eq!(closed.first(), closed.last());
    }

    #[test]
    fn silhouette_threshold_limits() {
        let g = CArmGeometry::desk();
        let cam = g.ap_camera("a").unwrap();
        let (cup, _) = make_component(54.0, 32).unwrap();
        let pose = cup_at(Vector3::zeros(), AnglePair::new(40.0, 25.0).unwrap());
        let all = silhouette_contour(&cup, &pose, &cam, 0.999).unwrap();
        let count: usize = all.iter().map(|l| l.len()).sum();
        let welded = (cup.rings) * cup.segments + 1;
        assert!(count as f64 > 0.9 * welded as f64);
        // the pole vertex faces the source along the ray only when aligned
        let facing = CupPose::new(RigidTransform::identity_between(CUP, WORLD));
        let p = cam.pose.compose(&facing.pose).unwrap().transform_point(&cup.vertices[0]);
        let n = cam.pose.transform_vector(&cup.normals[0]);
        assert_relative_eq!((p / p.norm()).dot(&n).abs(), 1.0, epsilon = 1e-12);
        let edge = silhouette_contour(&cup, &facing, &cam, 0.5).unwrap();
        let pole_px = cam.project(&facing.pose.transform_point(&cup.vertices[0])).unwrap();
        assert!(edge.iter().flatten().all(|q| (q - pole_px).norm() > 1.0));
        assert_eq!(silhouette_contour(&cup, &pose, &cam, 1e-9), Err(Error::EmptyContour));
    }

    #[test]
    fn roll_is_invisible() {
        let g = CArmGeometry::desk();
        let (cup, _) = make_component(54.0, 64).unwrap();
        // same threshold on a dense mesh as the reference outline
        let (dense, _) = make_component(54.0, 512).unwrap();
        let base = cup_at(Vector3::new(5.0, -3.0, 2.0), AnglePair::new(40.0, 25.0).unwrap());
        for cam in [g.ap_camera("a").unwrap(), g.camera_at("b", 30.0, 0.0).unwrap()] {
            let reference = silhouette_contour(&dense, &base, &cam, DEFAULT_TAU).unwrap();
            for roll in [10.0f64, 30.0, 77.0] {
                let q = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(base.axis()), roll.to_radians());
                let rolled = CupPose::new(base.pose.with_rotation(q * base.pose.rotation()));
                let contour = silhouette_contour(&cup, &rolled, &cam, DEFAULT_TAU).unwrap();
                for p in contour.iter().flatten() {
                    let d = distance_to_polylines(p, &reference);
                    assert!(d < 2.0, "roll {roll}: {d}");
                }
            }
        }
    }

    #[test]
    fn silhouette_is_view_covariant() {
        // rotating camera and cup together about the cup center
        let k = PinholeIntrinsics::from_detector(1000.0, 512, 512, 0.44).unwrap();
        let cam = ProjectiveCamera::new(
            k,
            look_at(&Vector3::new(0.0, 0.0, -600.0), &Vector3::zeros(), &-Vector3::y(), WORLD, "X").unwrap(),
        );
        let (cup, _) = make_component(54.0, 64).unwrap();
        let pose = cup_at(Vector3::zeros(), AnglePair::new(40.0, 25.0).unwrap());
        let reference = silhouette_contour(&cup, &pose, &cam, DEFAULT_TAU).unwrap();
        let q = UnitQuaternion::from_euler_angles(0.3, -0.2, 0.5);
        let motion = RigidTransform::new(q, Vector3::zeros(), WORLD, WORLD);
        let cam2 = cam.moved_by(&motion, "X").unwrap();
        let pose2 = CupPose::new(motion.compose(&pose.pose).unwrap());
        let moved = silhouette_contour(&cup, &pose2, &cam2, DEFAULT_TAU).unwrap();
        for p in moved.iter().flatten() {
            assert!(distance_to_polylines(p, &reference) < 1.0);
        }
    }

    #[test]
    fn preset_round_trip() {
        let app = AppFrame {
            pose: RigidTransform::new(UnitQuaternion::from_euler_angles(0.1, 0.2, -0.3), Vector3::new(1.0, 2.0, 3.0), APP, WORLD),
        };
        let current = CupPose::new(RigidTransform::new(
            UnitQuaternion::from_euler_angles(0.4, 0.0, 0.2),
            Vector3::new(5.0, 6.0, 7.0),
            CUP,
            WORLD,
        ));
        let desired = AnglePair::new(40.0, 25.0).unwrap();
        let preset = preset_orientation(&desired, &app, &current);
        let got = preset.angles(&app).unwrap();
        assert!((got.inclination_deg - 40.0).abs() < 1e-9 && (got.anteversion_deg - 25.0).abs() < 1e-9);
        assert_eq!(preset.center(), current.center());
        let moved = CupPose::new(preset.pose.with_translation(Vector3::new(-50.0, 0.0, 9.0)));
        assert_eq!(moved.angles(&app).unwrap(), got);
        // already at the desired axis: rotation untouched
        assert_eq!(preset_orientation(&desired, &app, &preset), preset);
    }

    #[test]
    fn contour_distance_basics() {
        let a = vec![vec![Vector2::new(0.0, 0.0), Vector2::new(10.0, 0.0)]];
        let b = vec![vec![Vector2::new(0.0, 3.0), Vector2::new(10.0, 3.0)]];
        assert_relative_eq!(symmetric_contour_distance(&a, &b), 3.0);
        assert_eq!(symmetric_contour_distance(&a, &a), 0.0);
    }

    proptest! {
        #[test]
        fn angles_round_trip(i in 0.5..179.5f64, v in -89.5..89.5f64) {
            let pair = AnglePair::new(i, v).unwrap();
            let back = angles_from_axis(&axis_from_angles(&pair)).unwrap();
            prop_assert!((back.inclination_deg - i).abs() < 1e-9);
            prop_assert!((back.anteversion_deg - v).abs() < 1e-9);
        }

        #[test]
        fn axis_is_unit(i in 0.0..179.9f64, v in -89.9..89.9f64) {
            let a = axis_from_angles(&AnglePair::new(i, v).unwrap());
            prop_assert!((a.norm() - 1.0).abs() < 1e-12);
        }
    }
}
