//! Row-parallel DRR rendering.

use cupplan_core::drr::{check_step, render_row, VoxelVolume, XrayImage};
use cupplan_core::ProjectiveCamera;
use rayon::prelude::*;

use crate::error::AppResult;

/// Same pixels as the serial core renderer, with rows spread over the rayon pool.
pub fn render_drr(vol: &VoxelVolume, cam: &ProjectiveCamera, step_mm: f64) -> AppResult<XrayImage> {
    check_step(vol, step_mm)?;
    let k = &cam.intrinsics;
    let rows: Vec<Vec<f32>> = (0..k.height).into_par_iter().map(|v| render_row(vol, cam, step_mm, v)).collect();
    Ok(XrayImage { width: k.width, height: k.height, intensity: rows.concat(), camera: cam.clone() })
}
