//! Volume and annotation domain types.
//!
//! Voxel arrays are stored `[z, y, x]` (slice, row, column). Spacing and
//! origin are given in `(x, y, z)` order in millimetres, matching the on-disk
//! formats. World coordinates ignore any direction cosines: the world
//! position of voxel `(x, y, z)` is `origin + index * spacing`.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum in-plane grid size.
pub const MIN_IN_PLANE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct CtVolume {
    voxels: Array3<f32>,
    spacing: [f64; 3],
    origin: [f64; 3],
    outside_fov_value: Option<f32>,
}

fn check_spacing(spacing: [f64; 3]) -> Result<()> {
    if spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
        Ok(())
    } else {
        Err(Error::InvalidSpacing(spacing))
    }
}

fn check_dims(dim: &[usize]) -> Result<()> {
    let (nz, ny, nx) = (dim[0], dim[1], dim[2]);
    if nz < 1 || ny < MIN_IN_PLANE || nx < MIN_IN_PLANE {
        return Err(Error::InvalidGrid(format!(
            "grid {nx}x{ny}x{nz} is smaller than {MIN_IN_PLANE}x{MIN_IN_PLANE}x1"
        )));
    }
    Ok(())
}

impl CtVolume {
    /// Builds a volume, detecting the outside-FOV padding value from the
    /// corners of the central slice.
    pub fn new(voxels: Array3<f32>, spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        check_spacing(spacing)?;
        check_dims(voxels.shape())?;
        let mut v = CtVolume { voxels, spacing, origin, outside_fov_value: None };
        v.outside_fov_value = v.detect_outside_fov_value();
        Ok(v)
    }

    /// Same as [`CtVolume::new`] but with an explicit padding value.
    pub fn with_outside_fov(
        voxels: Array3<f32>,
        spacing: [f64; 3],
        origin: [f64; 3],
        outside_fov_value: Option<f32>,
    ) -> Result<Self> {
        check_spacing(spacing)?;
        check_dims(voxels.shape())?;
        Ok(CtVolume { voxels, spacing, origin, outside_fov_value })
    }

    /// A volume on the same grid with different intensities.
    pub fn with_voxels(&self, voxels: Array3<f32>) -> Result<Self> {
        if voxels.shape() != self.voxels.shape() {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                voxels.shape(),
                self.voxels.shape()
            )));
        }
        Ok(CtVolume { voxels, spacing: self.spacing, origin: self.origin, outside_fov_value: self.outside_fov_value })
    }

    fn detect_outside_fov_value(&self) -> Option<f32> {
        let s = self.slice(self.central_slice_index());
        let (ny, nx) = s.dim();
        let c = [s[[0, 0]], s[[0, nx - 1]], s[[ny - 1, 0]], s[[ny - 1, nx - 1]]];
        if c.iter().all(|v| v.to_bits() == c[0].to_bits()) {
            Some(c[0])
        } else {
            None
        }
    }

    pub fn voxels(&self) -> &Array3<f32> {
        &self.voxels
    }

    pub fn into_voxels(self) -> Array3<f32> {
        self.voxels
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn outside_fov_value(&self) -> Option<f32> {
        self.outside_fov_value
    }

    /// `(nx, ny, nz)`.
    pub fn dims(&self) -> [usize; 3] {
        let s = self.voxels.shape();
        [s[2], s[1], s[0]]
    }

    pub fn n_slices(&self) -> usize {
        self.voxels.shape()[0]
    }

    pub fn central_slice_index(&self) -> usize {
        self.n_slices() / 2
    }

    pub fn slice(&self, k: usize) -> ArrayView2<'_, f32> {
        self.voxels.index_axis(Axis(0), k)
    }

    pub fn pixel_size(&self) -> [f64; 2] {
        [self.spacing[0], self.spacing[1]]
    }

    /// World z (mm) of slice `k`'s centre.
    pub fn slice_z(&self, k: usize) -> f64 {
        self.origin[2] + k as f64 * self.spacing[2]
    }

    /// World z range covered by slice centres.
    pub fn z_range(&self) -> (f64, f64) {
        (self.slice_z(0), self.slice_z(self.n_slices() - 1))
    }

    /// World `(x, y)` of the in-plane pixel `(col, row)`.
    pub fn in_plane_world(&self, col: f64, row: f64) -> (f64, f64) {
        (self.origin[0] + col * self.spacing[0], self.origin[1] + row * self.spacing[1])
    }

    /// Fractional in-plane `(col, row)` of a world `(x, y)`.
    pub fn in_plane_index(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.origin[0]) / self.spacing[0], (y - self.origin[1]) / self.spacing[1])
    }

    /// Position of the first non-finite voxel, if any.
    pub fn first_non_finite(&self) -> Option<[usize; 3]> {
        self.voxels
            .indexed_iter()
            .find(|(_, v)| !v.is_finite())
            .map(|((z, y, x), _)| [x, y, z])
    }

    /// Slice `k` as a one-slice volume at its own z position.
    pub fn slice_volume(&self, k: usize) -> CtVolume {
        let mut origin = self.origin;
        origin[2] = self.slice_z(k);
        CtVolume {
            voxels: self.slice(k).insert_axis(Axis(0)).to_owned(),
            spacing: self.spacing,
            origin,
            outside_fov_value: self.outside_fov_value,
        }
    }

    /// Replaces one slice.
    pub fn set_slice(&mut self, k: usize, slice: &Array2<f32>) {
        self.voxels.index_axis_mut(Axis(0), k).assign(slice);
    }
}

/// Integer label grid congruent to a [`CtVolume`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    pub labels: Array3<u32>,
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl LabelVolume {
    pub fn new(labels: Array3<u32>, spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        check_spacing(spacing)?;
        if labels.ndim() != 3 || labels.is_empty() {
            return Err(Error::InvalidGrid("empty label grid".into()));
        }
        Ok(LabelVolume { labels, spacing, origin })
    }

    /// `(nx, ny, nz)`.
    pub fn dims(&self) -> [usize; 3] {
        let s = self.labels.shape();
        [s[2], s[1], s[0]]
    }

    pub fn congruent_with(&self, volume: &CtVolume) -> bool {
        self.dims() == volume.dims()
    }

    /// World z range of slices containing foreground.
    pub fn foreground_z_range(&self) -> Option<(f64, f64)> {
        let mut lo = None;
        let mut hi = None;
        for (k, s) in self.labels.axis_iter(Axis(0)).enumerate() {
            if s.iter().any(|&l| l != 0) {
                lo.get_or_insert(k);
                hi = Some(k);
            }
        }
        let z = |k: usize| self.origin[2] + k as f64 * self.spacing[2];
        Some((z(lo?), z(hi?)))
    }
}

/// Axis-aligned 3D box in world millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3 {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub class_id: u32,
    pub confidence: f64,
}

impl Box3 {
    pub fn new(min: [f64; 3], max: [f64; 3], class_id: u32, confidence: f64) -> Result<Self> {
        let b = Box3 { min, max, class_id, confidence };
        b.validate()?;
        Ok(b)
    }

    /// Box centred on `center` with edge `diameter` on every axis.
    pub fn from_center(center: [f64; 3], diameter: f64, class_id: u32) -> Result<Self> {
        let h = diameter / 2.0;
        Box3::new(
            [center[0] - h, center[1] - h, center[2] - h],
            [center[0] + h, center[1] + h, center[2] + h],
            class_id,
            1.0,
        )
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if !(self.min[a].is_finite() && self.max[a].is_finite()) {
                return Err(Error::Annotation(format!("non-finite box corner on axis {a}")));
            }
            if self.max[a] <= self.min[a] {
                return Err(Error::Annotation(format!(
                    "box extent on axis {a} is not positive ({} .. {})",
                    self.min[a], self.max[a]
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::Annotation(format!("confidence {} outside [0, 1]", self.confidence)));
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|a| self.max[a] - self.min[a]).product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationKind {
    Segmentation,
    Detection,
}

impl std::fmt::Display for AnnotationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AnnotationKind::Segmentation => "segmentation",
            AnnotationKind::Detection => "detection",
        })
    }
}

/// Ground truth for one case.
#[derive(Debug, Clone, PartialEq)]
pub enum AnnotationSet {
    Segmentation(LabelVolume),
    Detection(Vec<Box3>),
}

impl AnnotationSet {
    pub fn kind(&self) -> AnnotationKind {
        match self {
            AnnotationSet::Segmentation(_) => AnnotationKind::Segmentation,
            AnnotationSet::Detection(_) => AnnotationKind::Detection,
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            AnnotationSet::Segmentation(l) => l.labels.iter().all(|&v| v == 0),
            AnnotationSet::Detection(b) => b.is_empty(),
        }
    }

    /// World z extent of the annotated objects.
    pub fn z_range(&self) -> Option<(f64, f64)> {
        match self {
            AnnotationSet::Segmentation(l) => l.foreground_z_range(),
            AnnotationSet::Detection(boxes) => {
                let lo = boxes.iter().map(|b| b.min[2]).fold(f64::INFINITY, f64::min);
                let hi = boxes.iter().map(|b| b.max[2]).fold(f64::NEG_INFINITY, f64::max);
                (!boxes.is_empty()).then_some((lo, hi))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(nz: usize, n: usize) -> Array3<f32> {
        Array3::zeros((nz, n, n))
    }

    #[test]
    fn rejects_bad_spacing_and_tiny_grids() {
        assert!(matches!(
            CtVolume::new(grid(2, 16), [1.0, 1.0, 0.0], [0.0; 3]),
            Err(Error::InvalidSpacing(_))
        ));
        assert!(CtVolume::new(grid(1, 4), [1.0; 3], [0.0; 3]).is_err());
        assert!(CtVolume::new(Array3::zeros((0, 16, 16)), [1.0; 3], [0.0; 3]).is_err());
    }

    #[test]
    fn outside_fov_value_from_agreeing_corners() {
        let mut v = Array3::from_elem((3, 16, 16), -2048.0f32);
        v[[1, 8, 8]] = 40.0;
        let vol = CtVolume::new(v.clone(), [1.0; 3], [0.0; 3]).unwrap();
        assert_eq!(vol.outside_fov_value(), Some(-2048.0));
        v[[1, 0, 15]] = -1000.0;
        let vol = CtVolume::new(v, [1.0; 3], [0.0; 3]).unwrap();
        assert_eq!(vol.outside_fov_value(), None);
    }

    #[test]
    fn slice_volume_keeps_world_position() {
        let mut v = Array3::from_elem((3, 16, 16), -2048.0f32);
        v[[2, 4, 5]] = 7.0;
        let vol = CtVolume::new(v, [1.0, 1.0, 2.5], [-8.0, -8.0, 10.0]).unwrap();
        let s = vol.slice_volume(2);
        assert_eq!(s.n_slices(), 1);
        assert_eq!(s.slice_z(0), 15.0);
        assert_eq!(s.slice(0), vol.slice(2));
        assert_eq!(s.outside_fov_value(), Some(-2048.0));
    }

    #[test]
    fn box_validation() {
        assert!(Box3::new([0.0; 3], [1.0; 3], 1, 0.5).is_ok());
        assert!(Box3::new([0.0; 3], [1.0, 0.0, 1.0], 1, 0.5).is_err());
        assert!(Box3::new([0.0; 3], [1.0; 3], 1, 1.5).is_err());
        let b = Box3::from_center([10.0, 20.0, 30.0], 6.0, 1).unwrap();
        assert_eq!(b.min, [7.0, 17.0, 27.0]);
        assert_eq!(b.max, [13.0, 23.0, 33.0]);
    }

    #[test]
    fn label_z_range_uses_slice_centres() {
        let mut l = Array3::zeros((10, 8, 8));
        l[[3, 1, 1]] = 1;
        l[[5, 2, 2]] = 2;
        let lv = LabelVolume::new(l, [1.0, 1.0, 2.5], [0.0, 0.0, 10.0]).unwrap();
        assert_eq!(lv.foreground_z_range(), Some((17.5, 22.5)));
    }
}
