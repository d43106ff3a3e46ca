//! Seeded sampling helpers shared by the simulators.

use nalgebra::{Unit, UnitQuaternion, Vector3};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SimRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream for sub-task `index` of a seeded experiment.
pub fn substream(seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_add(1));
    rng
}

/// Seed of sub-task `index`, drawn from its own stream.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    substream(seed, index).next_u64()
}

pub fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> Vector3<f64> {
    Vector3::new(gaussian(rng), gaussian(rng), gaussian(rng)) * sigma
}

/// Uniformly distributed direction on the unit sphere.
pub fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = gaussian_vector(rng, 1.0);
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Rotation about a uniformly random axis by `angle_rad`.
pub fn rotation_with_angle<R: Rng + ?Sized>(rng: &mut R, angle_rad: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Unit::new_unchecked(unit_vector(rng)), angle_rad)
}

/// Rotation about a random axis with angle `|N(0, sigma)|`.
pub fn rotation_noise<R: Rng + ?Sized>(rng: &mut R, sigma_rad: f64) -> UnitQuaternion<f64> {
    let angle = (gaussian(rng) * sigma_rad).abs();
    rotation_with_angle(rng, angle)
}

/// Uniformly random rotation.
pub fn uniform_rotation<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion<f64> {
    let q = nalgebra::Quaternion::new(gaussian(rng), gaussian(rng), gaussian(rng), gaussian(rng));
    UnitQuaternion::new_normalize(q)
}
