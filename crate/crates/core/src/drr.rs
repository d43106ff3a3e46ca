//! Voxel attenuation volumes, the synthetic hip phantom, ray-cast
//! radiographs and C-arm orbit series.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(test))]
#[allow(unused_imports)] // std inherent float methods shadow it when std is linked
use num_traits::Float;
use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::geom::{rotation_about_point, ProjectiveCamera, Ray, RigidTransform, WORLD};
use crate::implant::{axis_from_angles, AnglePair};
use crate::track::OrbitAxis;
use crate::{Error, Result};

/// Scalar attenuation grid (1/mm). Voxel `(i, j, k)` is stored at
/// `i + nx * (j + ny * k)`; `origin_mm` is the center of voxel `(0, 0, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelVolume {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    origin_mm: [f64; 3],
    data: Vec<f32>,
}

impl VoxelVolume {
    pub fn new(dims: [usize; 3], spacing_mm: [f64; 3], origin_mm: [f64; 3], data: Vec<f32>) -> Result<Self> {
        if dims.iter().any(|&n| n < 2) {
            return Err(Error::InvalidArgument(format!("volume dims must be >= 2, got {dims:?}")));
        }
        if spacing_mm.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument(format!("voxel spacing must be positive, got {spacing_mm:?}")));
        }
        if origin_mm.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidArgument(String::from("volume origin must be finite")));
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::LengthMismatch { left: n, right: data.len() });
        }
        if data.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument(String::from("attenuation must be finite and non-negative")));
        }
        Ok(VoxelVolume { dims, spacing_mm, origin_mm, data })
    }

    pub fn zeros(dims: [usize; 3], spacing_mm: [f64; 3], origin_mm: [f64; 3]) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, spacing_mm, origin_mm, vec![0.0; n])
    }

    /// Cube of `n³` voxels at isotropic `spacing`, centered on the world origin.
    pub fn centered(n: usize, spacing: f64) -> Result<Self> {
        let o = -(n as f64 - 1.0) * spacing / 2.0;
        Self::zeros([n; 3], [spacing; 3], [o; 3])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }

    pub fn origin_mm(&self) -> [f64; 3] {
        self.origin_mm
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing_mm.iter().copied().fold(f64::INFINITY, f64::min)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f32) -> Result<()> {
        if !(value >= 0.0 && value.is_finite()) {
            return Err(Error::InvalidArgument(String::from("attenuation must be finite and non-negative")));
        }
        let idx = self.index(i, j, k);
        self.data[idx] = value;
        Ok(())
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        Vector3::new(
            self.origin_mm[0] + i as f64 * self.spacing_mm[0],
            self.origin_mm[1] + j as f64 * self.spacing_mm[1],
            self.origin_mm[2] + k as f64 * self.spacing_mm[2],
        )
    }

    /// Extent spanned by the voxel centers.
    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let lo = Vector3::from(self.origin_mm);
        let hi = self.voxel_center(self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1);
        (lo, hi)
    }

    /// Trilinear interpolation between voxel centers; zero outside the
    /// center extent.
    pub fn sample(&self, p: &Vector3<f64>) -> f64 {
        let mut base = [0usize; 3];
        let mut frac = [0f64; 3];
        for a in 0..3 {
            let g = (p[a] - self.origin_mm[a]) / self.spacing_mm[a];
            let max = (self.dims[a] - 1) as f64;
            if !(g >= 0.0 && g <= max) {
                return 0.0;
            }
            let f = g.floor().min(max - 1.0);
            base[a] = f as usize;
            frac[a] = g - f;
        }
        let [i, j, k] = base;
        let [fx, fy, fz] = frac;
        let sx = 1;
        let sy = self.dims[0];
        let sz = self.dims[0] * self.dims[1];
        let i0 = self.index(i, j, k);
        let d = &self.data;
        let c00 = d[i0] as f64 * (1.0 - fx) + d[i0 + sx] as f64 * fx;
        let c10 = d[i0 + sy] as f64 * (1.0 - fx) + d[i0 + sy + sx] as f64 * fx;
        let c01 = d[i0 + sz] as f64 * (1.0 - fx) + d[i0 + sz + sx] as f64 * fx;
        let c11 = d[i0 + sz + sy] as f64 * (1.0 - fx) + d[i0 + sz + sy + sx] as f64 * fx;
        let c0 = c00 * (1.0 - fy) + c10 * fy;
        let c1 = c01 * (1.0 - fy) + c11 * fy;
        c0 * (1.0 - fz) + c1 * fz
    }

    /// Parameter interval where `ray` is inside the voxel-center extent.
    pub fn clip_ray(&self, ray: &Ray) -> Option<(f64, f64)> {
        let (lo, hi) = self.bounds();
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            let o = ray.origin[a];
            let d = ray.direction[a];
            if d.abs() < 1e-15 {
                if o < lo[a] || o > hi[a] {
                    return None;
                }
                continue;
            }
            let (mut ta, mut tb) = ((lo[a] - o) / d, (hi[a] - o) / d);
            if ta > tb {
                core::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
        (t1 > t0).then_some((t0, t1))
    }

    /// `∫ μ ds` along `ray` by midpoint quadrature with at most `step_mm`
    /// between samples.
    pub fn line_integral(&self, ray: &Ray, step_mm: f64) -> f64 {
        let Some((t0, t1)) = self.clip_ray(ray) else {
            return 0.0;
        };
        let len = t1 - t0;
        let n = (len / step_mm).ceil().max(1.0) as usize;
        let h = len / n as f64;
        let mut sum = 0.0;
        for s in 0..n {
            sum += self.sample(&ray.at(t0 + (s as f64 + 0.5) * h));
        }
        sum * h
    }
}

/// Rendered radiograph; `intensity` is row-major, 1 = air.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XrayImage {
    pub width: u32,
    pub height: u32,
    pub intensity: Vec<f32>,
    pub camera: ProjectiveCamera,
}

impl XrayImage {
    pub fn at(&self, u: u32, v: u32) -> f32 {
        self.intensity[(v * self.width + u) as usize]
    }
}

pub fn check_step(vol: &VoxelVolume, step_mm: f64) -> Result<()> {
    if !(step_mm > 0.0) || step_mm > vol.min_spacing() / 2.0 + 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "step {step_mm} mm must be positive and at most half the voxel spacing"
        )));
    }
    Ok(())
}

/// Default quadrature step: half the smallest voxel spacing.
pub fn default_step(vol: &VoxelVolume) -> f64 {
    vol.min_spacing() / 2.0
}

/// Intensity `exp(-∫μ)` of the ray through pixel `(u, v)`.
pub fn pixel_intensity(vol: &VoxelVolume, cam: &ProjectiveCamera, step_mm: f64, u: f64, v: f64) -> f32 {
    let ray = cam.backproject_ray(&Vector2::new(u, v));
    (-vol.line_integral(&ray, step_mm)).exp() as f32
}

/// One image row; rows are independent so callers may render them in
/// parallel.
pub fn render_row(vol: &VoxelVolume, cam: &ProjectiveCamera, step_mm: f64, v: u32) -> Vec<f32> {
    (0..cam.intrinsics.width)
        .map(|u| pixel_intensity(vol, cam, step_mm, u as f64, v as f64))
        .collect()
}

/// Single-threaded radiograph render.
pub fn raycast_drr(vol: &VoxelVolume, cam: &ProjectiveCamera, step_mm: f64) -> Result<XrayImage> {
    check_step(vol, step_mm)?;
    let mut intensity = Vec::with_capacity((cam.intrinsics.width * cam.intrinsics.height) as usize);
    for v in 0..cam.intrinsics.height {
        intensity.extend(render_row(vol, cam, step_mm, v));
    }
    Ok(XrayImage { width: cam.intrinsics.width, height: cam.intrinsics.height, intensity, camera: cam.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub center_mm: [f64; 3],
    pub size_mm: [f64; 3],
    pub attenuation: f64,
}

/// Hemispherical shell: points with `inner ≤ |p − c| ≤ outer` on the side
/// opposite `axis`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShellSpec {
    pub center_mm: [f64; 3],
    pub inner_radius_mm: f64,
    pub outer_radius_mm: f64,
    pub axis: [f64; 3],
    pub attenuation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BbSpec {
    pub center_mm: [f64; 3],
    pub diameter_mm: f64,
    pub attenuation: f64,
}

/// Metal cup shell in its own frame (opening toward +Z), placed by `pose`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CupShellSpec {
    /// Cup → world.
    pub pose: RigidTransform,
    pub inner_radius_mm: f64,
    pub outer_radius_mm: f64,
    pub attenuation: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PhantomSpec {
    #[serde(default)]
    pub block: Option<BlockSpec>,
    #[serde(default)]
    pub shell: Option<ShellSpec>,
    #[serde(default)]
    pub bbs: Vec<BbSpec>,
    #[serde(default)]
    pub cup: Option<CupShellSpec>,
}

/// Diameter of the radiopaque skin markers.
pub const BB_DIAMETER_MM: f64 = 1.5;

impl PhantomSpec {
    /// Pelvis-sized block with a reamed acetabulum at the world origin
    /// opening along (40°, 25°), and nine bbs on voxel centers of a 1 mm grid
    /// whose origin is at a half-millimetre offset.
    pub fn hip() -> Self {
        let axis = axis_from_angles(&AnglePair::new(40.0, 25.0).expect("valid angles"));
        let bbs = [
            [-60.5, 40.5, -20.5],
            [-30.5, -45.5, 25.5],
            [0.5, 55.5, -35.5],
            [35.5, -30.5, -40.5],
            [60.5, 30.5, 20.5],
            [-55.5, -20.5, 40.5],
            [20.5, 60.5, 35.5],
            [45.5, -55.5, 5.5],
            [-15.5, 15.5, 50.5],
        ]
        .into_iter()
        .map(|c| BbSpec { center_mm: c, diameter_mm: BB_DIAMETER_MM, attenuation: 2.0 })
        .collect();
        PhantomSpec {
            block: Some(BlockSpec { center_mm: [0.0, 0.0, 0.0], size_mm: [180.0, 160.0, 130.0], attenuation: 0.004 }),
            shell: Some(ShellSpec {
                center_mm: [0.0, 0.0, 0.0],
                inner_radius_mm: 27.0,
                outer_radius_mm: 36.0,
                axis: [axis.x, axis.y, axis.z],
                attenuation: 0.03,
            }),
            bbs,
            cup: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let oob = |m: String| Err(Error::SpecOutOfBounds(m));
        let nonneg = |a: f64| a >= 0.0 && a.is_finite();
        if let Some(b) = &self.block {
            if b.size_mm.iter().any(|s| !(*s > 0.0)) || !nonneg(b.attenuation) {
                return oob(String::from("block size must be positive and attenuation non-negative"));
            }
        }
        if let Some(s) = &self.shell {
            if !(s.inner_radius_mm >= 0.0 && s.inner_radius_mm < s.outer_radius_mm) || !nonneg(s.attenuation) {
                return oob(String::from("shell radii must satisfy 0 <= inner < outer"));
            }
            if Vector3::from(s.axis).norm() < 1e-9 {
                return oob(String::from("shell axis must be non-zero"));
            }
        }
        if let Some(c) = &self.cup {
            if !(c.inner_radius_mm >= 0.0 && c.inner_radius_mm < c.outer_radius_mm) || !nonneg(c.attenuation) {
                return oob(String::from("cup radii must satisfy 0 <= inner < outer"));
            }
        }
        for (n, bb) in self.bbs.iter().enumerate() {
            if !(bb.diameter_mm > 0.0) || !nonneg(bb.attenuation) {
                return oob(format!("bb {n}: diameter must be positive"));
            }
            if let Some(b) = &self.block {
                let r = bb.diameter_mm / 2.0;
                for a in 0..3 {
                    if (bb.center_mm[a] - b.center_mm[a]).abs() + r > b.size_mm[a] / 2.0 {
                        return oob(format!("bb {n} is not inside the block"));
                    }
                }
            }
        }
        Ok(())
    }
}

fn index_range(vol: &VoxelVolume, axis: usize, lo: f64, hi: f64) -> core::ops::Range<usize> {
    let o = vol.origin_mm[axis];
    let s = vol.spacing_mm[axis];
    let n = vol.dims[axis] as f64;
    let a = ((lo - o) / s).ceil().clamp(0.0, n) as usize;
    let b = ((hi - o) / s).floor().clamp(-1.0, n - 1.0);
    if b < a as f64 {
        return 0..0;
    }
    a..(b as usize + 1)
}

/// Adds `value` to every voxel whose center lies in the axis-aligned box
/// `[lo, hi]` and satisfies `inside`.
fn rasterize(
    vol: &mut VoxelVolume,
    lo: Vector3<f64>,
    hi: Vector3<f64>,
    value: f64,
    inside: impl Fn(&Vector3<f64>) -> bool,
) {
    let (ri, rj, rk) = (index_range(vol, 0, lo.x, hi.x), index_range(vol, 1, lo.y, hi.y), index_range(vol, 2, lo.z, hi.z));
    for k in rk {
        for j in rj.clone() {
            for i in ri.clone() {
                if inside(&vol.voxel_center(i, j, k)) {
                    let idx = vol.index(i, j, k);
                    vol.data[idx] += value as f32;
                }
            }
        }
    }
}

/// Voxelizes `spec`: each voxel holds the summed attenuation of every
/// primitive containing its center.
pub fn build_phantom(spec: &PhantomSpec, dims: [usize; 3], spacing_mm: [f64; 3]) -> Result<VoxelVolume> {
    spec.validate()?;
    let origin = [
        -(dims[0] as f64 - 1.0) * spacing_mm[0] / 2.0,
        -(dims[1] as f64 - 1.0) * spacing_mm[1] / 2.0,
        -(dims[2] as f64 - 1.0) * spacing_mm[2] / 2.0,
    ];
    let mut vol = VoxelVolume::zeros(dims, spacing_mm, origin)?;
    let (vlo, vhi) = vol.bounds();
    for (n, bb) in spec.bbs.iter().enumerate() {
        let c = Vector3::from(bb.center_mm);
        if (0..3).any(|a| c[a] < vlo[a] || c[a] > vhi[a]) {
            return Err(Error::SpecOutOfBounds(format!("bb {n} is outside the volume")));
        }
    }

    if let Some(b) = &spec.block {
        let c = Vector3::from(b.center_mm);
        let h = Vector3::from(b.size_mm) / 2.0;
        rasterize(&mut vol, c - h, c + h, b.attenuation, |_| true);
    }
    if let Some(s) = &spec.shell {
        let c = Vector3::from(s.center_mm);
        let axis = Vector3::from(s.axis).normalize();
        let r = Vector3::repeat(s.outer_radius_mm);
        rasterize(&mut vol, c - r, c + r, s.attenuation, |p| {
            let d = p - c;
            let n = d.norm();
            n >= s.inner_radius_mm && n <= s.outer_radius_mm && d.dot(&axis) <= 0.0
        });
    }
    for bb in &spec.bbs {
        let c = Vector3::from(bb.center_mm);
        let r = bb.diameter_mm / 2.0;
        rasterize(&mut vol, c - Vector3::repeat(r), c + Vector3::repeat(r), bb.attenuation, |p| (p - c).norm() <= r);
    }
    if let Some(cup) = &spec.cup {
        let c = *cup.pose.translation();
        let to_cup = cup.pose.inverse();
        let r = Vector3::repeat(cup.outer_radius_mm);
        rasterize(&mut vol, c - r, c + r, cup.attenuation, |p| {
            let q = to_cup.transform_point(p);
            let n = q.norm();
            n >= cup.inner_radius_mm && n <= cup.outer_radius_mm && q.z <= 0.0
        });
    }
    Ok(vol)
}

/// Number of stations of an orbit, validating that `step` divides the range.
pub fn orbit_count(start_deg: f64, end_deg: f64, step_deg: f64) -> Result<usize> {
    if !(start_deg.is_finite() && end_deg.is_finite() && step_deg > 0.0 && step_deg.is_finite()) {
        return Err(Error::BadRange(format!("invalid orbit {start_deg}:{end_deg}:{step_deg}")));
    }
    if end_deg <= start_deg {
        return Err(Error::BadRange(format!("orbit end {end_deg} must exceed start {start_deg}")));
    }
    let intervals = (end_deg - start_deg) / step_deg;
    let rounded = intervals.round();
    if (intervals - rounded).abs() > 1e-9 * rounded.max(1.0) || rounded < 1.0 {
        return Err(Error::BadRange(format!("step {step_deg} does not divide {start_deg}..{end_deg}")));
    }
    Ok(rounded as usize + 1)
}

/// Orbit angles; each is `start + k·step`, so the values are reproducible.
pub fn orbit_angles(start_deg: f64, end_deg: f64, step_deg: f64) -> Result<Vec<f64>> {
    let n = orbit_count(start_deg, end_deg, step_deg)?;
    Ok((0..n).map(|k| if k + 1 == n { end_deg } else { start_deg + k as f64 * step_deg }).collect())
}

/// Cameras obtained by rotating `base` about `center` around the orbit axis.
pub fn generate_orbit(
    base: &ProjectiveCamera,
    axis: OrbitAxis,
    start_deg: f64,
    end_deg: f64,
    step_deg: f64,
    center: &Vector3<f64>,
) -> Result<Vec<(f64, ProjectiveCamera)>> {
    let world = base.pose.from_frame();
    orbit_angles(start_deg, end_deg, step_deg)?
        .into_iter()
        .enumerate()
        .map(|(k, angle)| {
            let motion = rotation_about_point(&axis.world_axis(), angle.to_radians(), center, world)?;
            Ok((angle, base.moved_by(&motion, format!("{}#{k:02}", base.id()))?))
        })
        .collect()
}

/// Orbit about the world iso-center in the default world frame.
pub fn generate_world_orbit(
    base: &ProjectiveCamera,
    axis: OrbitAxis,
    start_deg: f64,
    end_deg: f64,
    step_deg: f64,
) -> Result<Vec<(f64, ProjectiveCamera)>> {
    debug_assert_eq!(base.pose.from_frame(), WORLD);
    generate_orbit(base, axis, start_deg, end_deg, step_deg, &Vector3::zeros())
}
