//! Fan-beam forward projection.
//!
//! The source starts on the −x axis and rotates counter-clockwise through a
//! full turn; projection `i` sits at `360° · i / n_theta`. The slice centre is
//! the isocentre, with `x` along columns and `y` along rows. Each ray is
//! integrated by bilinear sampling at half-pixel steps; everything outside
//! the pixel grid is air.

use ndarray::Array2;

use super::attenuation::AttenuationSlice;
use super::geometry::ScannerGeometry;
use crate::error::{Error, Result};
use crate::parallel;

#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    /// `(angle, detector)` line integrals, dimensionless.
    pub values: Array2<f32>,
    pub angles: Vec<f64>,
    pub geometry: ScannerGeometry,
}

impl Sinogram {
    pub fn n_theta(&self) -> usize {
        self.angles.len()
    }
}

/// Projection angles in degrees for a full rotation.
pub fn projection_angles(n_theta: usize) -> Vec<f64> {
    (0..n_theta).map(|i| 360.0 * i as f64 / n_theta as f64).collect()
}

const PAD: usize = 2;

/// Zero-bordered copy of the image so bilinear lookups never leave the buffer.
struct PaddedImage {
    data: Vec<f32>,
    width: usize,
    nx: usize,
    ny: usize,
}

impl PaddedImage {
    fn new(values: &Array2<f32>) -> Self {
        let (ny, nx) = values.dim();
        let width = nx + 2 * PAD;
        let mut data = vec![0.0f32; width * (ny + 2 * PAD)];
        for (r, row) in values.rows().into_iter().enumerate() {
            let off = (r + PAD) * width + PAD;
            for (c, v) in row.iter().enumerate() {
                data[off + c] = *v;
            }
        }
        PaddedImage { data, width, nx, ny }
    }

    /// Line integral (in pixel-value × mm) along `origin + λ·dir`, with
    /// `origin`/`dir` in unpadded pixel units per mm of path.
    #[inline]
    fn integrate(&self, origin: (f64, f64), dir: (f64, f64), step_mm: f64) -> f64 {
        let lo = (-1.0, -1.0);
        let hi = (self.nx as f64, self.ny as f64);
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for (o, d, l, h) in [(origin.0, dir.0, lo.0, hi.0), (origin.1, dir.1, lo.1, hi.1)] {
            if d.abs() < 1e-15 {
                if o < l || o > h {
                    return 0.0;
                }
            } else {
                let (a, b) = ((l - o) / d, (h - o) / d);
                t0 = t0.max(a.min(b));
                t1 = t1.min(a.max(b));
            }
        }
        if t1 <= t0 {
            return 0.0;
        }
        let n = ((t1 - t0) / step_mm).ceil().max(1.0);
        let dt = (t1 - t0) / n;
        let pad = PAD as f64;
        let mut fx = origin.0 + dir.0 * (t0 + 0.5 * dt) + pad;
        let mut fy = origin.1 + dir.1 * (t0 + 0.5 * dt) + pad;
        let (sx, sy) = (dir.0 * dt, dir.1 * dt);
        let w = self.width;
        let data = &self.data[..];
        let mut sum = 0.0f64;
        for _ in 0..n as usize {
            // fx, fy stay within [1, n + 2] so the casts floor correctly.
            let ix = fx as usize;
            let iy = fy as usize;
            let ax = (fx - ix as f64) as f32;
            let ay = (fy - iy as f64) as f32;
            let i = iy * w + ix;
            let top = data[i] + ax * (data[i + 1] - data[i]);
            let bot = data[i + w] + ax * (data[i + w + 1] - data[i + w]);
            sum += (top + ay * (bot - top)) as f64;
            fx += sx;
            fy += sy;
        }
        sum * dt
    }
}

/// Projects an attenuation slice into a fan-beam sinogram.
pub fn forward_project(slice: &AttenuationSlice, geometry: &ScannerGeometry, n_theta: usize) -> Result<Sinogram> {
    geometry.validate()?;
    if n_theta < 2 {
        return Err(Error::InvalidParameter(format!("n_theta = {n_theta} must be at least 2")));
    }
    let img = PaddedImage::new(&slice.values);
    let [px, py] = slice.pixel_size;
    let cx = (img.nx as f64 - 1.0) / 2.0;
    let cy = (img.ny as f64 - 1.0) / 2.0;
    let step = 0.5 * px.min(py);
    let n_det = geometry.n_det;
    let ScannerGeometry { d1, d2, d_det, .. } = *geometry;
    let mid = (n_det as f64 - 1.0) / 2.0;

    let mut values = vec![0.0f32; n_theta * n_det];
    parallel::for_each_chunk_mut(&mut values, n_det, |i, row| {
        let theta = std::f64::consts::TAU * i as f64 / n_theta as f64;
        let (s, c) = theta.sin_cos();
        let src = (-d1 * c, -d1 * s);
        let origin = (src.0 / px + cx, src.1 / py + cy);
        for (j, out) in row.iter_mut().enumerate() {
            let t = (j as f64 - mid) * d_det;
            let (dx, dy) = ((d1 + d2) * c - t * s, (d1 + d2) * s + t * c);
            let norm = (dx * dx + dy * dy).sqrt();
            let dir = (dx / norm / px, dy / norm / py);
            // cm⁻¹ × mm → dimensionless
            *out = (img.integrate(origin, dir, step) * 0.1) as f32;
        }
    });
    Ok(Sinogram {
        values: Array2::from_shape_vec((n_theta, n_det), values).expect("sized above"),
        angles: projection_angles(n_theta),
        geometry: *geometry,
    })
}
