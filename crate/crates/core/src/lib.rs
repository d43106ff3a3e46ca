//! Geometry, simulation and planning kernels for two-view acetabular cup
//! planning with an RGBD-augmented C-arm.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, rendering
//! parallelism, the command line and the session service live in the
//! `cupplan` crate.
//!
//! Conventions used throughout:
//!
//! - A [`RigidTransform`] maps points from its `from` frame into its `to`
//!   frame; composition is checked against the frame labels.
//! - Cameras look down their local +Z axis, image origin top-left, `u` to the
//!   right and `v` down, pixel centers at integer coordinates.
//! - Lengths are millimetres, angles are degrees at API boundaries.
//! - The simulated world frame `W` coincides with the anterior pelvic plane
//!   frame: +X patient left, +Y superior, +Z anterior.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod arsim;
pub mod calib;
pub mod drr;
mod error;
pub mod geom;
pub mod implant;
pub mod optim;
pub mod planner;
pub mod rng;
pub mod stereo;
pub mod track;

pub use error::{Error, Result};
pub use geom::{PinholeIntrinsics, ProjectiveCamera, Ray, RigidTransform};

pub use nalgebra::{Matrix3, Matrix4, UnitQuaternion, Vector2, Vector3};
