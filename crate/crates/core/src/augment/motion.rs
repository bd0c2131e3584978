//! Rigid in-plane rotation of the slices on one side of a discontinuity.

use std::fmt;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::CtVolume;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionSide {
    /// Slices with z above the discontinuity move.
    Above,
    /// Slices with z below the discontinuity move.
    Below,
}

impl fmt::Display for MotionSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MotionSide::Above => "above",
            MotionSide::Below => "below",
        })
    }
}

impl MotionSide {
    pub fn moves(self, z: f64, discontinuity_z: f64) -> bool {
        match self {
            MotionSide::Above => z > discontinuity_z,
            MotionSide::Below => z < discontinuity_z,
        }
    }
}

/// Rotates a slice counter-clockwise (in x/y world axes) by `degrees` about
/// its centre with bilinear interpolation. Samples falling off the grid take
/// `fill`.
pub fn rotate_slice(slice: ArrayView2<'_, f32>, degrees: f64, pixel_size: [f64; 2], fill: f32) -> Array2<f32> {
    let (ny, nx) = slice.dim();
    let [px, py] = pixel_size;
    let (s, c) = degrees.to_radians().sin_cos();
    let cx = (nx as f64 - 1.0) / 2.0;
    let cy = (ny as f64 - 1.0) / 2.0;
    let at = |r: i64, col: i64| -> f64 {
        if r < 0 || col < 0 || r >= ny as i64 || col >= nx as i64 {
            fill as f64
        } else {
            slice[[r as usize, col as usize]] as f64
        }
    };
    Array2::from_shape_fn((ny, nx), |(r, col)| {
        let x = (col as f64 - cx) * px;
        let y = (r as f64 - cy) * py;
        // inverse rotation gives the source position
        let sx = c * x + s * y;
        let sy = -s * x + c * y;
        let fc = sx / px + cx;
        let fr = sy / py + cy;
        if fc < -1.0 || fr < -1.0 || fc > nx as f64 || fr > ny as f64 {
            return fill;
        }
        let c0 = fc.floor();
        let r0 = fr.floor();
        let tx = fc - c0;
        let ty = fr - r0;
        let (c0, r0) = (c0 as i64, r0 as i64);
        let v = at(r0, c0) * (1.0 - tx) * (1.0 - ty)
            + at(r0, c0 + 1) * tx * (1.0 - ty)
            + at(r0 + 1, c0) * (1.0 - tx) * ty
            + at(r0 + 1, c0 + 1) * tx * ty;
        v as f32
    })
}

/// Rotates every slice on `side` of `discontinuity_z`; other slices are
/// copied unchanged. Returns the volume and the number of moved slices.
pub fn apply_motion(
    volume: &CtVolume,
    rotation_deg: f64,
    discontinuity_z: f64,
    side: MotionSide,
) -> Result<(CtVolume, usize)> {
    if !(-180.0..=180.0).contains(&rotation_deg) {
        return Err(Error::InvalidParameter(format!("rotation {rotation_deg}° outside [-180, 180]")));
    }
    let (lo, hi) = volume.z_range();
    if !(lo..=hi).contains(&discontinuity_z) {
        return Err(Error::InvalidParameter(format!(
            "discontinuity z = {discontinuity_z} mm outside the volume ({lo} .. {hi} mm)"
        )));
    }
    if rotation_deg == 0.0 {
        return Ok((volume.clone(), 0));
    }
    let fill = volume.outside_fov_value().unwrap_or(-1000.0);
    let mut vox = volume.voxels().clone();
    let mut moved = 0;
    for k in 0..volume.n_slices() {
        if side.moves(volume.slice_z(k), discontinuity_z) {
            let r = rotate_slice(volume.slice(k), rotation_deg, volume.pixel_size(), fill);
            vox.index_axis_mut(Axis(0), k).assign(&r);
            moved += 1;
        }
    }
    Ok((volume.with_voxels(vox)?, moved))
}
