//! Whole-slice and whole-volume re-simulation: HU → attenuation → sinogram
//! → optional acquisition noise → FBP → HU.

use ndarray::{Array2, Array3, ArrayView2, Axis};

use super::attenuation::{attenuation_to_hu, hu_to_attenuation};
use super::fbp::filtered_back_project;
use super::geometry::ScannerGeometry;
use super::projector::{forward_project, Sinogram};
use crate::calibration::{add_sinogram_noise, NoiseModelParams};
use crate::error::{Error, Result};
use crate::volume::CtVolume;
use crate::{parallel, seed};

/// Projection count used when no noise model supplies one.
pub const DEFAULT_N_THETA: usize = 2160;

/// In-plane mask of pixels whose centres lie inside the FOV disc shrunk by
/// `margin_px` pixels.
pub fn fov_mask(shape: (usize, usize), pixel_size: [f64; 2], d_fov: f64, margin_px: f64) -> Array2<bool> {
    let (ny, nx) = shape;
    let [px, py] = pixel_size;
    let cx = (nx as f64 - 1.0) / 2.0;
    let cy = (ny as f64 - 1.0) / 2.0;
    let r = d_fov / 2.0 - margin_px * px.max(py);
    Array2::from_shape_fn(shape, |(row, col)| {
        let x = (col as f64 - cx) * px;
        let y = (row as f64 - cy) * py;
        x * x + y * y <= r * r
    })
}

/// A slice projected once, reconstructable under any noise realisation.
#[derive(Debug, Clone)]
pub struct ProjectedSlice {
    sinogram: Sinogram,
    shape: (usize, usize),
    pixel_size: [f64; 2],
}

impl ProjectedSlice {
    pub fn new(hu: ArrayView2<'_, f32>, pixel_size: [f64; 2], geometry: &ScannerGeometry, n_theta: usize) -> Result<Self> {
        if hu.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("slice contains non-finite values".into()));
        }
        let mu = hu_to_attenuation(hu, pixel_size);
        let sinogram = forward_project(&mu, geometry, n_theta)?;
        Ok(ProjectedSlice { sinogram, shape: hu.dim(), pixel_size })
    }

    pub fn sinogram(&self) -> &Sinogram {
        &self.sinogram
    }

    pub fn n_theta(&self) -> usize {
        self.sinogram.n_theta()
    }

    pub fn pixel_size(&self) -> [f64; 2] {
        self.pixel_size
    }

    /// Reconstructs in HU; pixels outside the FOV take `fill` (−1000 when absent).
    pub fn reconstruct(&self, noise: Option<&NoiseModelParams>, seed: u64, fill: Option<f32>) -> Result<Array2<f32>> {
        let noisy;
        let sino = match noise {
            Some(p) => {
                if p.n_theta != self.n_theta() {
                    return Err(Error::InvalidParameter(format!(
                        "noise model has n_theta {} but the slice was projected with {}",
                        p.n_theta,
                        self.n_theta()
                    )));
                }
                noisy = add_sinogram_noise(&self.sinogram, p, seed)?;
                &noisy
            }
            None => &self.sinogram,
        };
        let mu = filtered_back_project(sino, self.shape, self.pixel_size)?;
        let mut hu = attenuation_to_hu(&mu);
        if let Some(f) = fill {
            let mask = fov_mask(self.shape, self.pixel_size, sino.geometry.d_fov, 0.0);
            hu.zip_mut_with(&mask, |v, &inside| {
                if !inside {
                    *v = f
                }
            });
        }
        Ok(hu)
    }
}

/// Simulates one HU slice.
pub fn simulate_slice(
    hu: ArrayView2<'_, f32>,
    pixel_size: [f64; 2],
    geometry: &ScannerGeometry,
    n_theta: usize,
    noise: Option<&NoiseModelParams>,
    seed: u64,
    fill: Option<f32>,
) -> Result<Array2<f32>> {
    ProjectedSlice::new(hu, pixel_size, geometry, n_theta)?.reconstruct(noise, seed, fill)
}

fn assemble(volume: &CtVolume, slices: Vec<Result<Array2<f32>>>) -> Result<CtVolume> {
    let mut out = Array3::<f32>::zeros(volume.voxels().raw_dim());
    for (k, s) in slices.into_iter().enumerate() {
        out.index_axis_mut(Axis(0), k).assign(&s?);
    }
    volume.with_voxels(out)
}

/// Re-simulates every slice. Slice `k` draws noise from `hash(seed, k)`.
///
/// `n_theta` comes from the noise model, or [`DEFAULT_N_THETA`] without one.
pub fn simulate_volume(
    volume: &CtVolume,
    geometry: &ScannerGeometry,
    noise: Option<&NoiseModelParams>,
    seed: u64,
) -> Result<CtVolume> {
    let n_theta = noise.map_or(DEFAULT_N_THETA, |p| p.n_theta);
    simulate_volume_with_angles(volume, geometry, n_theta, noise, seed)
}

/// [`simulate_volume`] with an explicit projection count.
pub fn simulate_volume_with_angles(
    volume: &CtVolume,
    geometry: &ScannerGeometry,
    n_theta: usize,
    noise: Option<&NoiseModelParams>,
    seed: u64,
) -> Result<CtVolume> {
    let fill = volume.outside_fov_value();
    let slices = parallel::map_range(volume.n_slices(), |k| {
        simulate_slice(volume.slice(k), volume.pixel_size(), geometry, n_theta, noise, seed::derive_index(seed, k as u64), fill)
    });
    assemble(volume, slices)
}

/// Every slice of a volume projected once. Holds `n_slices × n_theta × n_det`
/// floats, so use it only where repeated reconstructions pay for the memory.
#[derive(Debug, Clone)]
pub struct ProjectedVolume {
    template: CtVolume,
    slices: Vec<ProjectedSlice>,
}

impl ProjectedVolume {
    pub fn new(volume: &CtVolume, geometry: &ScannerGeometry, n_theta: usize) -> Result<Self> {
        let slices = parallel::map_range(volume.n_slices(), |k| {
            ProjectedSlice::new(volume.slice(k), volume.pixel_size(), geometry, n_theta)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        Ok(ProjectedVolume { template: volume.clone(), slices })
    }

    /// Bytes held by the cached sinograms for the given sizes.
    pub fn footprint(n_slices: usize, n_theta: usize, n_det: usize) -> usize {
        n_slices * n_theta * n_det * std::mem::size_of::<f32>()
    }

    pub fn slice(&self, k: usize) -> &ProjectedSlice {
        &self.slices[k]
    }

    pub fn n_theta(&self) -> usize {
        self.slices[0].n_theta()
    }

    /// Same result as [`simulate_volume`] with the same seed.
    pub fn reconstruct(&self, noise: Option<&NoiseModelParams>, seed: u64) -> Result<CtVolume> {
        let fill = self.template.outside_fov_value();
        let slices = parallel::map_range(self.slices.len(), |k| {
            self.slices[k].reconstruct(noise, seed::derive_index(seed, k as u64), fill)
        });
        assemble(&self.template, slices)
    }
}
