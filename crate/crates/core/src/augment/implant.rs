//! Cylindrical metal implants along the spine.

use serde::{Deserialize, Serialize};

use super::spine::locate_spine;
use crate::error::{Error, Result};
use crate::volume::{AnnotationSet, CtVolume};

pub const IMPLANT_HU: f32 = 20000.0;
/// Extension of the implant beyond the annotated z range, both directions.
pub const IMPLANT_MARGIN_MM: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImplantGeometry {
    pub center_x: f64,
    pub center_y: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub radius_mm: f64,
}

/// Axis at the spine, spanning the annotation's z range ±15 mm (clamped to
/// the volume). `z_center` re-centres the same extent elsewhere.
pub fn plan_implant(
    volume: &CtVolume,
    annotation: &AnnotationSet,
    radius_mm: f64,
    z_center: Option<f64>,
) -> Result<ImplantGeometry> {
    if !(radius_mm > 0.0 && radius_mm.is_finite()) {
        return Err(Error::InvalidParameter(format!("implant radius {radius_mm} must be positive")));
    }
    let (lo, hi) = annotation.z_range().ok_or_else(|| Error::Annotation("annotation is empty".into()))?;
    let (lo, hi) = match z_center {
        Some(c) => {
            let h = 0.5 * (hi - lo);
            (c - h, c + h)
        }
        None => (lo, hi),
    };
    let (center_x, center_y) = locate_spine(volume, (lo, hi))?;
    let (v_lo, v_hi) = volume.z_range();
    Ok(ImplantGeometry {
        center_x,
        center_y,
        z_min: (lo - IMPLANT_MARGIN_MM).max(v_lo),
        z_max: (hi + IMPLANT_MARGIN_MM).min(v_hi),
        radius_mm,
    })
}

/// Slices whose centres lie within the implant's z extent.
pub fn implant_slices(volume: &CtVolume, implant: &ImplantGeometry) -> Vec<usize> {
    (0..volume.n_slices())
        .filter(|&k| (implant.z_min..=implant.z_max).contains(&volume.slice_z(k)))
        .collect()
}

/// Sets every voxel whose centre lies inside the cylinder to
/// [`IMPLANT_HU`]. Each covered slice gets at least the voxel nearest the
/// axis.
pub fn insert_implant(volume: &CtVolume, implant: &ImplantGeometry) -> Result<CtVolume> {
    let mut out = volume.clone();
    let (_, ny, nx) = volume.voxels().dim();
    let (ac, ar) = volume.in_plane_index(implant.center_x, implant.center_y);
    let [px, py] = volume.pixel_size();
    let r2 = implant.radius_mm * implant.radius_mm;
    let nearest = (ar.round().clamp(0.0, ny as f64 - 1.0) as usize, ac.round().clamp(0.0, nx as f64 - 1.0) as usize);
    let mut vox = out.voxels().clone();
    for k in implant_slices(volume, implant) {
        let mut s = vox.index_axis_mut(ndarray::Axis(0), k);
        for ((r, c), v) in s.indexed_iter_mut() {
            let dx = (c as f64 - ac) * px;
            let dy = (r as f64 - ar) * py;
            if dx * dx + dy * dy <= r2 {
                *v = IMPLANT_HU;
            }
        }
        s[nearest] = IMPLANT_HU;
    }
    out = out.with_voxels(vox)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Box3;
    use ndarray::Array3;

    fn spine_volume() -> CtVolume {
        let mut v = Array3::from_elem((40, 64, 64), 20.0f32);
        for mut s in v.outer_iter_mut() {
            for r in 44..=48 {
                for c in 30..=34 {
                    s[[r, c]] = 900.0;
                }
            }
        }
        CtVolume::new(v, [1.0, 1.0, 2.0], [-31.5, -31.5, 0.0]).unwrap()
    }

    fn boxes(z0: f64, z1: f64) -> AnnotationSet {
        AnnotationSet::Detection(vec![Box3::new([-10.0, -10.0, z0], [0.0, 0.0, z1], 1, 1.0).unwrap()])
    }

    #[test]
    fn extent_is_annotation_plus_margin() {
        let v = spine_volume();
        let g = plan_implant(&v, &boxes(30.0, 50.0), 2.5, None).unwrap();
        assert_eq!((g.z_min, g.z_max), (15.0, 65.0));
        let g = plan_implant(&v, &boxes(2.0, 70.0), 2.5, None).unwrap();
        assert_eq!((g.z_min, g.z_max), (0.0, 78.0));
        let (x, y) = v.in_plane_world(32.0, 46.0);
        assert!((g.center_x - x).abs() <= 1.0 && (g.center_y - y).abs() <= 1.0);
    }

    #[test]
    fn cross_section_area_matches_disc() {
        let v = spine_volume();
        let g = ImplantGeometry { center_x: 0.3, center_y: 12.2, z_min: 10.0, z_max: 20.0, radius_mm: 2.5 };
        let out = insert_implant(&v, &g).unwrap();
        let k = implant_slices(&v, &g)[0];
        let area = out.slice(k).iter().filter(|&&x| x == IMPLANT_HU).count() as f64;
        let disc = std::f64::consts::PI * 2.5 * 2.5;
        let band = 2.0 * std::f64::consts::PI * 2.5 * std::f64::consts::SQRT_2;
        assert!((area - disc).abs() <= band, "{area} vs {disc}");
        assert_eq!(implant_slices(&v, &g).len(), 6);
    }

    #[test]
    fn tiny_radius_keeps_axis_voxel() {
        let v = spine_volume();
        let g = ImplantGeometry { center_x: 0.3, center_y: 12.2, z_min: 0.0, z_max: 78.0, radius_mm: 0.4 };
        let out = insert_implant(&v, &g).unwrap();
        for k in 0..v.n_slices() {
            assert!(out.slice(k).iter().filter(|&&x| x == IMPLANT_HU).count() >= 1);
        }
    }

    #[test]
    fn empty_annotation_is_rejected() {
        let v = spine_volume();
        assert!(plan_implant(&v, &AnnotationSet::Detection(vec![]), 2.5, None).is_err());
        assert!(plan_implant(&v, &boxes(30.0, 50.0), 0.0, None).is_err());
    }
}
