//! Rigid-body and pinhole-camera algebra.

use alloc::string::{String, ToString};
use core::fmt;

#[cfg(not(test))]
#[allow(unused_imports)] // std inherent float methods shadow it when std is linked
use num_traits::Float;
use nalgebra::{Matrix3, Matrix4, Unit, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Label of the simulated world frame.
pub const WORLD: &str = "W";

/// Depth below which a point counts as behind the camera, mm.
pub const MIN_DEPTH_MM: f64 = 1e-6;

/// Frame-tagged rigid transform mapping points from `from` into `to`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "TransformRepr", try_from = "TransformRepr")]
pub struct RigidTransform {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
    from: String,
    to: String,
}

#[derive(Serialize, Deserialize)]
struct TransformRepr {
    from: String,
    to: String,
    q: [f64; 4],
    t_mm: [f64; 3],
}

impl From<RigidTransform> for TransformRepr {
    fn from(t: RigidTransform) -> Self {
        let q = t.rotation.quaternion();
        TransformRepr {
            from: t.from,
            to: t.to,
            q: [q.w, q.i, q.j, q.k],
            t_mm: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl TryFrom<TransformRepr> for RigidTransform {
    type Error = Error;

    fn try_from(r: TransformRepr) -> Result<Self> {
        RigidTransform::from_wxyz(r.q, Vector3::from(r.t_mm), r.from, r.to)
    }
}

impl fmt::Debug for RigidTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = self.rotation.quaternion();
        write!(
            f,
            "RigidTransform({} -> {}, q=[{}, {}, {}, {}], t=[{}, {}, {}])",
            self.from, self.to, q.w, q.i, q.j, q.k, self.translation.x, self.translation.y, self.translation.z
        )
    }
}

impl RigidTransform {
    pub fn new(
        rotation: UnitQuaternion<f64>,
        translation: Vector3<f64>,
        from: impl Into<String>,
        to: impl Into<String>,
    ) -> Self {
        // renormalize so long chains do not drift off the unit sphere
        let rotation = UnitQuaternion::new_normalize(rotation.into_inner());
        RigidTransform { rotation, translation, from: from.into(), to: to.into() }
    }

    /// Builds a transform from a `[w, x, y, z]` quaternion, normalizing it.
    pub fn from_wxyz(
        q: [f64; 4],
        translation: Vector3<f64>,
        from: impl Into<String>,
        to: impl Into<String>,
    ) -> Result<Self> {
        let quat = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = quat.norm();
        if !(norm > 1e-12) || !norm.is_finite() {
            return Err(Error::ZeroVector);
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite translation".to_string()));
        }
        Ok(Self::new(UnitQuaternion::new_unchecked(quat / norm), translation, from, to))
    }

    pub fn from_matrix(
        rotation: &Matrix3<f64>,
        translation: Vector3<f64>,
        from: impl Into<String>,
        to: impl Into<String>,
    ) -> Self {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(*rotation);
        Self::new(UnitQuaternion::from_rotation_matrix(&rot), translation, from, to)
    }

    /// Rotation of `angle_rad` about `axis` followed by `translation`.
    pub fn from_axis_angle(
        axis: &Vector3<f64>,
        angle_rad: f64,
        translation: Vector3<f64>,
        from: impl Into<String>,
        to: impl Into<String>,
    ) -> Result<Self> {
        let axis = Unit::try_new(*axis, 1e-12).ok_or(Error::ZeroVector)?;
        Ok(Self::new(UnitQuaternion::from_axis_angle(&axis, angle_rad), translation, from, to))
    }

    pub fn identity(frame: impl Into<String>) -> Self {
        let frame = frame.into();
        Self::new(UnitQuaternion::identity(), Vector3::zeros(), frame.clone(), frame)
    }

    /// Identity map that only renames a frame.
    pub fn identity_between(from: impl Into<String>, to: impl Into<String>) -> Self {
        Self::new(UnitQuaternion::identity(), Vector3::zeros(), from, to)
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn from_frame(&self) -> &str {
        &self.from
    }

    pub fn to_frame(&self) -> &str {
        &self.to
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rot = self.rotation.inverse();
        let t = -(rot * self.translation);
        RigidTransform { rotation: rot, translation: t, from: self.to.clone(), to: self.from.clone() }
    }

    /// `self ∘ inner`: applies `inner` first. Requires `inner.to == self.from`.
    pub fn compose(&self, inner: &RigidTransform) -> Result<Self> {
        if inner.to != self.from {
            return Err(Error::FrameMismatch { expected: self.from.clone(), found: inner.to.clone() });
        }
        Ok(self.compose_unchecked(inner, inner.from.clone(), self.to.clone()))
    }

    fn compose_unchecked(&self, inner: &RigidTransform, from: String, to: String) -> Self {
        Self::new(
            self.rotation * inner.rotation,
            self.rotation * inner.translation + self.translation,
            from,
            to,
        )
    }

    /// Same map with new frame labels.
    pub fn relabel(&self, from: impl Into<String>, to: impl Into<String>) -> Self {
        RigidTransform { rotation: self.rotation, translation: self.translation, from: from.into(), to: to.into() }
    }

    pub fn with_translation(&self, translation: Vector3<f64>) -> Self {
        RigidTransform { translation, ..self.clone() }
    }

    pub fn with_rotation(&self, rotation: UnitQuaternion<f64>) -> Self {
        Self::new(rotation, self.translation, self.from.clone(), self.to.clone())
    }

    /// Angle of the relative rotation between `self` and `other`, degrees.
    pub fn rotation_angle_to_deg(&self, other: &RigidTransform) -> f64 {
        self.rotation.angle_to(&other.rotation).to_degrees()
    }

    pub fn translation_distance(&self, other: &RigidTransform) -> f64 {
        (self.translation - other.translation).norm()
    }
}

/// `a ∘ b`; see [`RigidTransform::compose`].
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> Result<RigidTransform> {
    a.compose(b)
}

pub fn invert(t: &RigidTransform) -> RigidTransform {
    t.inverse()
}

/// Pinhole intrinsics without skew.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IntrinsicsRepr", into = "IntrinsicsRepr")]
pub struct PinholeIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub pixel_spacing_mm: f64,
}

#[derive(Serialize, Deserialize)]
struct IntrinsicsRepr {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    pixel_spacing_mm: f64,
}

impl From<PinholeIntrinsics> for IntrinsicsRepr {
    fn from(k: PinholeIntrinsics) -> Self {
        IntrinsicsRepr {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
            pixel_spacing_mm: k.pixel_spacing_mm,
        }
    }
}

impl TryFrom<IntrinsicsRepr> for PinholeIntrinsics {
    type Error = Error;

    fn try_from(r: IntrinsicsRepr) -> Result<Self> {
        PinholeIntrinsics::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height, r.pixel_spacing_mm)
    }
}

impl PinholeIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        pixel_spacing_mm: f64,
    ) -> Result<Self> {
        let k = PinholeIntrinsics { fx, fy, cx, cy, width, height, pixel_spacing_mm };
        k.validate()?;
        Ok(k)
    }

    /// X-ray style intrinsics: focal length from the source-to-detector
    /// distance and detector pixel spacing, principal point at the image center.
    pub fn from_detector(source_detector_mm: f64, width: u32, height: u32, pixel_spacing_mm: f64) -> Result<Self> {
        let f = source_detector_mm / pixel_spacing_mm;
        Self::new(
            f,
            f,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
            pixel_spacing_mm,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(Error::InvalidIntrinsics("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidIntrinsics("image size must be non-zero"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) || !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::InvalidIntrinsics("principal point outside the image"));
        }
        if !(self.pixel_spacing_mm > 0.0) {
            return Err(Error::InvalidIntrinsics("pixel spacing must be positive"));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    pub fn principal_point(&self) -> Vector2<f64> {
        Vector2::new(self.cx, self.cy)
    }
}

/// Pinhole camera with a pose mapping world points into the camera frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectiveCamera {
    pub intrinsics: PinholeIntrinsics,
    pub pose: RigidTransform,
}

impl ProjectiveCamera {
    pub fn new(intrinsics: PinholeIntrinsics, pose: RigidTransform) -> Self {
        ProjectiveCamera { intrinsics, pose }
    }

    /// Frame label of the camera.
    pub fn id(&self) -> &str {
        self.pose.to_frame()
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        self.pose.inverse().translation
    }

    /// Unit viewing direction (+Z of the camera) in world coordinates.
    pub fn optical_axis(&self) -> Vector3<f64> {
        self.pose.rotation.inverse() * Vector3::z()
    }

    pub fn to_camera(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        self.pose.transform_point(p_world)
    }

    pub fn project(&self, p_world: &Vector3<f64>) -> Result<Vector2<f64>> {
        self.project_camera_point(&self.to_camera(p_world))
    }

    pub fn project_camera_point(&self, p: &Vector3<f64>) -> Result<Vector2<f64>> {
        if !(p.z > MIN_DEPTH_MM) {
            return Err(Error::BehindCamera { depth_mm: p.z });
        }
        let k = &self.intrinsics;
        Ok(Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
    }

    /// Ray from the camera center through pixel `px`, in world coordinates.
    pub fn backproject_ray(&self, px: &Vector2<f64>) -> Ray {
        let k = &self.intrinsics;
        let d_cam = Vector3::new((px.x - k.cx) / k.fx, (px.y - k.cy) / k.fy, 1.0);
        let inv = self.pose.inverse();
        Ray { origin: inv.translation, direction: (inv.rotation * d_cam).normalize() }
    }

    /// Rigidly moves the camera: `motion` is a world-to-world map applied to
    /// the camera body.
    pub fn moved_by(&self, motion: &RigidTransform, id: impl Into<String>) -> Result<Self> {
        let body_to_world = self.pose.inverse();
        let moved = motion.compose(&body_to_world)?;
        let id: String = id.into();
        let pose = moved.inverse();
        let from = pose.from.clone();
        Ok(ProjectiveCamera { intrinsics: self.intrinsics, pose: pose.relabel(from, id) })
    }
}

/// Pose of a camera at `eye` looking at `target`; `down` is the world
/// direction that should map to image +v (projected to be orthogonal).
pub fn look_at(
    eye: &Vector3<f64>,
    target: &Vector3<f64>,
    down: &Vector3<f64>,
    world: impl Into<String>,
    camera: impl Into<String>,
) -> Result<RigidTransform> {
    let z = target - eye;
    let z = z.try_normalize(1e-12).ok_or(Error::ZeroVector)?;
    let y = down - z * down.dot(&z);
    let y = y.try_normalize(1e-12).ok_or(Error::ZeroVector)?;
    let x = y.cross(&z);
    // rows of the world->camera rotation are the camera axes in world coordinates
    let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    let t = -(r * eye);
    Ok(RigidTransform::from_matrix(&r, t, world, camera))
}

/// Rotation about an axis through `center`, as a world-to-world transform.
pub fn rotation_about_point(
    axis: &Vector3<f64>,
    angle_rad: f64,
    center: &Vector3<f64>,
    frame: impl Into<String>,
) -> Result<RigidTransform> {
    let axis = Unit::try_new(*axis, 1e-12).ok_or(Error::ZeroVector)?;
    let q = UnitQuaternion::from_axis_angle(&axis, angle_rad);
    let t = center - q * center;
    let frame = frame.into();
    Ok(RigidTransform::new(q, t, frame.clone(), frame))
}

/// Half-line with unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
}

impl Ray {
    pub fn new(origin: Vector3<f64>, direction: Vector3<f64>) -> Result<Self> {
        let direction = direction.try_normalize(1e-12).ok_or(Error::ZeroVector)?;
        Ok(Ray { origin, direction })
    }

    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }

    /// Distance from `p` to the infinite line carrying the ray.
    pub fn distance_to_point(&self, p: &Vector3<f64>) -> f64 {
        let d = p - self.origin;
        (d - self.direction * d.dot(&self.direction)).norm()
    }
}

/// Unsigned angle between two axes in degrees, in `[0, 90]`.
pub fn axis_angle_between(u: &Vector3<f64>, v: &Vector3<f64>) -> Result<f64> {
    let nu = u.norm();
    let nv = v.norm();
    if nu < 1e-9 || nv < 1e-9 {
        return Err(Error::ZeroVector);
    }
    let u = u / nu;
    let v = v / nv;
    // atan2 keeps precision near 0 where acos does not
    Ok(u.cross(&v).norm().atan2(u.dot(&v).abs()).to_degrees())
}

/// Minimal rotation taking unit vector `from` onto unit vector `to`.
pub fn minimal_rotation(from: &Vector3<f64>, to: &Vector3<f64>) -> UnitQuaternion<f64> {
    match UnitQuaternion::rotation_between(from, to) {
        Some(q) => q,
        None => {
            // antiparallel: half turn about a deterministic perpendicular
            let helper = if from.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
            let axis = Unit::new_normalize(from.cross(&helper));
            UnitQuaternion::from_axis_angle(&axis, core::f64::consts::PI)
        }
    }
}
