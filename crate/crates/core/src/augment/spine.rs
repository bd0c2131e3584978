//! Locating the spine as the brightest smoothed point behind the isocentre.

use ndarray::{Array2, ArrayView2};

use crate::ctsim::measure_fov_diameter;
use crate::error::{Error, Result};
use crate::volume::CtVolume;

/// Intensity a voxel must exceed to count as bone.
pub const BONE_HU: f32 = 300.0;
/// Standard deviation of the smoothing kernel, mm.
pub const SMOOTHING_SIGMA_MM: f64 = 1.5;

fn kernel(sigma_px: f64) -> Vec<f64> {
    let r = (3.0 * sigma_px).ceil().max(1.0) as i64;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma_px * sigma_px)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with clamped borders.
pub fn gaussian_smooth(slice: ArrayView2<'_, f32>, sigma_mm: f64, pixel_size: [f64; 2]) -> Array2<f64> {
    let (ny, nx) = slice.dim();
    let kx = kernel(sigma_mm / pixel_size[0]);
    let ky = kernel(sigma_mm / pixel_size[1]);
    let rx = (kx.len() / 2) as i64;
    let ry = (ky.len() / 2) as i64;
    let mut tmp = Array2::<f64>::zeros((ny, nx));
    for r in 0..ny {
        for c in 0..nx {
            let mut acc = 0.0;
            for (i, w) in kx.iter().enumerate() {
                let cc = (c as i64 + i as i64 - rx).clamp(0, nx as i64 - 1) as usize;
                acc += w * slice[[r, cc]] as f64;
            }
            tmp[[r, c]] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((ny, nx));
    for r in 0..ny {
        for c in 0..nx {
            let mut acc = 0.0;
            for (i, w) in ky.iter().enumerate() {
                let rr = (r as i64 + i as i64 - ry).clamp(0, ny as i64 - 1) as usize;
                acc += w * tmp[[rr, c]];
            }
            out[[r, c]] = acc;
        }
    }
    out
}

/// Slices whose centres fall in `z_range`, or the nearest slice when none do.
pub fn slices_in_range(volume: &CtVolume, z_range: (f64, f64)) -> Vec<usize> {
    let inside: Vec<usize> =
        (0..volume.n_slices()).filter(|&k| (z_range.0..=z_range.1).contains(&volume.slice_z(k))).collect();
    if !inside.is_empty() {
        return inside;
    }
    let mid = 0.5 * (z_range.0 + z_range.1);
    let nearest = (0..volume.n_slices())
        .min_by(|&a, &b| (volume.slice_z(a) - mid).abs().total_cmp(&(volume.slice_z(b) - mid).abs()))
        .expect("volume has slices");
    vec![nearest]
}

/// World `(x, y)` of the spine: the maximum of the smoothed intensity,
/// averaged over the slices in `z_range`, within the posterior half and the
/// central third of the FOV.
pub fn locate_spine(volume: &CtVolume, z_range: (f64, f64)) -> Result<(f64, f64)> {
    let d_fov = measure_fov_diameter(volume)?;
    let [px, py] = volume.pixel_size();
    let (_, ny, nx) = volume.voxels().dim();
    let cx = (nx as f64 - 1.0) / 2.0;
    let cy = (ny as f64 - 1.0) / 2.0;
    let half_width = d_fov / 6.0;
    let in_region = |r: usize, c: usize| r as f64 > cy && ((c as f64 - cx) * px).abs() <= half_width;

    let slices = slices_in_range(volume, z_range);
    let mut any_bone = false;
    let mut mean = Array2::<f64>::zeros((ny, nx));
    for &k in &slices {
        let s = volume.slice(k);
        any_bone |= s.indexed_iter().any(|((r, c), &v)| v > BONE_HU && in_region(r, c));
        mean += &gaussian_smooth(s, SMOOTHING_SIGMA_MM, [px, py]);
    }
    if !any_bone {
        return Err(Error::NoSpineCandidate(format!("no voxel above {BONE_HU} HU behind the isocentre")));
    }
    let mut best = None;
    let mut best_v = f64::NEG_INFINITY;
    for ((r, c), &v) in mean.indexed_iter() {
        if in_region(r, c) && v > best_v {
            best_v = v;
            best = Some((r, c));
        }
    }
    let (r, c) = best.expect("region is non-empty when bone was found");
    Ok(volume.in_plane_world(c as f64, r as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn rods(rods: &[(usize, usize, f32)]) -> CtVolume {
        let mut v = Array3::from_elem((4, 64, 64), 20.0f32);
        for mut s in v.outer_iter_mut() {
            for &(r, c, hu) in rods {
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        s[[(r as i64 + dr) as usize, (c as i64 + dc) as usize]] = hu;
                    }
                }
            }
        }
        CtVolume::new(v, [1.0, 1.0, 2.0], [-31.5, -31.5, 0.0]).unwrap()
    }

    #[test]
    fn finds_single_rod() {
        let v = rods(&[(45, 33, 1500.0)]);
        let (x, y) = locate_spine(&v, (0.0, 6.0)).unwrap();
        let (ex, ey) = v.in_plane_world(33.0, 45.0);
        assert!((x - ex).abs() <= 1.0 && (y - ey).abs() <= 1.0);
    }

    #[test]
    fn ignores_brighter_rod_outside_region() {
        let v = rods(&[(48, 30, 800.0), (12, 30, 3000.0), (40, 4, 3000.0)]);
        let (x, y) = locate_spine(&v, (0.0, 6.0)).unwrap();
        let (ex, ey) = v.in_plane_world(30.0, 48.0);
        assert!((x - ex).abs() <= 1.0 && (y - ey).abs() <= 1.0);
    }

    #[test]
    fn soft_tissue_only_fails() {
        let v = rods(&[(45, 33, 120.0)]);
        let err = locate_spine(&v, (0.0, 6.0)).unwrap_err();
        assert!(err.to_string().starts_with("no spine candidate"));
    }

    #[test]
    fn smoothing_preserves_constants() {
        let s = Array2::from_elem((10, 12), 3.5f32);
        let out = gaussian_smooth(s.view(), 2.0, [0.7, 1.3]);
        assert!(out.iter().all(|v| (v - 3.5).abs() < 1e-9));
    }
}
