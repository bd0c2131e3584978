//! Synthetic thorax-like phantoms with known ground truth.
//!
//! The body is an ellipse of soft tissue holding two lungs, a vertebral body
//! on the posterior side (+y, increasing row) and optional spherical nodules
//! that form the annotation. The abdominal variant drops the lungs, leaving
//! the vertebra surrounded by soft tissue as at lumbar levels. Edges are blended over `edge_mm` so the phantom
//! is band-limited enough for reconstruction round trips.

use ndarray::Array3;

use crate::error::Result;
use crate::volume::{Box3, CtVolume, LabelVolume};

pub const AIR_HU: f32 = -1000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nodule {
    /// World mm.
    pub center: [f64; 3],
    pub radius: f64,
    pub hu: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    /// In-plane size (square).
    pub size: usize,
    pub pixel_mm: f64,
    pub n_slices: usize,
    pub slice_mm: f64,
    /// Width of the smooth transition at material edges; 0 gives hard edges.
    pub edge_mm: f64,
    /// Padding value outside the inscribed FOV disc, if any.
    pub outside_fov: Option<f32>,
    pub body_hu: f32,
    pub lung_hu: f32,
    pub bone_hu: f32,
    pub lungs: bool,
    pub nodules: Vec<Nodule>,
}

impl PhantomSpec {
    pub fn new(size: usize, pixel_mm: f64, n_slices: usize, slice_mm: f64) -> Self {
        PhantomSpec {
            size,
            pixel_mm,
            n_slices,
            slice_mm,
            edge_mm: 2.0 * pixel_mm,
            outside_fov: None,
            body_hu: 40.0,
            lung_hu: -850.0,
            bone_hu: 700.0,
            lungs: true,
            nodules: Vec::new(),
        }
    }

    /// Lumbar-level slice: body and vertebra only.
    pub fn abdomen(size: usize, pixel_mm: f64, n_slices: usize, slice_mm: f64) -> Self {
        PhantomSpec { lungs: false, ..PhantomSpec::new(size, pixel_mm, n_slices, slice_mm) }
    }

    /// FOV radius in mm (inscribed circle).
    pub fn fov_radius(&self) -> f64 {
        self.size as f64 * self.pixel_mm / 2.0
    }

    /// World origin placing the isocentre at `(0, 0)` and slice 0 at `z = 0`.
    pub fn origin(&self) -> [f64; 3] {
        let h = (self.size as f64 - 1.0) / 2.0 * self.pixel_mm;
        [-h, -h, 0.0]
    }

    /// A nodule in the left lung at slice `k`.
    pub fn with_lung_nodule(mut self, k: usize, radius: f64) -> Self {
        let r = self.fov_radius();
        self.nodules.push(Nodule { center: [-0.36 * r, -0.05 * r, k as f64 * self.slice_mm], radius, hu: 60.0 });
        self
    }

    /// Location of the vertebral body in world `(x, y)` mm.
    pub fn spine_center(&self) -> (f64, f64) {
        (0.0, 0.22 * self.fov_radius())
    }
}

/// Smooth inside-weight for signed distance `d` (negative inside).
fn inside(d: f64, edge: f64) -> f64 {
    if edge <= 0.0 {
        return if d <= 0.0 { 1.0 } else { 0.0 };
    }
    let t = (0.5 - d / edge).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn ellipse_distance(x: f64, y: f64, cx: f64, cy: f64, a: f64, b: f64) -> f64 {
    let rho = (((x - cx) / a).powi(2) + ((y - cy) / b).powi(2)).sqrt();
    (rho - 1.0) * a.min(b)
}

/// Builds the phantom volume and its nodule label map (label 1).
pub fn body_phantom(spec: &PhantomSpec) -> Result<(CtVolume, LabelVolume)> {
    let n = spec.size;
    let origin = spec.origin();
    let r = spec.fov_radius();
    let e = spec.edge_mm;
    let (sx, sy) = spec.spine_center();
    let mut voxels = Array3::<f32>::zeros((spec.n_slices, n, n));
    let mut labels = Array3::<u32>::zeros((spec.n_slices, n, n));
    for ((k, row, col), v) in voxels.indexed_iter_mut() {
        let x = origin[0] + col as f64 * spec.pixel_mm;
        let y = origin[1] + row as f64 * spec.pixel_mm;
        let z = origin[2] + k as f64 * spec.slice_mm;
        if let Some(pad) = spec.outside_fov {
            if x * x + y * y > r * r {
                *v = pad;
                continue;
            }
        }
        let mut hu = AIR_HU as f64;
        let mut blend = |val: f32, w: f64| hu += (val as f64 - hu) * w;
        blend(spec.body_hu, inside(ellipse_distance(x, y, 0.0, 0.0, 0.82 * r, 0.58 * r), e));
        for side in [-1.0, 1.0].into_iter().filter(|_| spec.lungs) {
            blend(spec.lung_hu, inside(ellipse_distance(x, y, side * 0.36 * r, -0.05 * r, 0.26 * r, 0.40 * r), e));
        }
        blend(spec.bone_hu, inside(ellipse_distance(x, y, sx, sy, 0.09 * r, 0.09 * r), e));
        for nod in &spec.nodules {
            let d = ((x - nod.center[0]).powi(2) + (y - nod.center[1]).powi(2) + (z - nod.center[2]).powi(2)).sqrt();
            blend(nod.hu, inside(d - nod.radius, e.min(nod.radius)));
            if d <= nod.radius {
                labels[[k, row, col]] = 1;
            }
        }
        *v = hu as f32;
    }
    let spacing = [spec.pixel_mm, spec.pixel_mm, spec.slice_mm];
    let vol = match spec.outside_fov {
        Some(p) => CtVolume::with_outside_fov(voxels, spacing, origin, Some(p))?,
        None => CtVolume::with_outside_fov(voxels, spacing, origin, None)?,
    };
    Ok((vol, LabelVolume::new(labels, spacing, origin)?))
}

/// Ground-truth boxes of the phantom's nodules (class 1).
pub fn nodule_boxes(spec: &PhantomSpec) -> Result<Vec<Box3>> {
    spec.nodules.iter().map(|n| Box3::from_center(n.center, 2.0 * n.radius, 1)).collect()
}
