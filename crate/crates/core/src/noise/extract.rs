use ndarray::{Array2, Array3, ArrayView2, Axis};

use super::tv::tv_denoise;
use crate::ctsim::{fov_mask, measure_fov_diameter};
use crate::error::{Error, Result};
use crate::parallel;
use crate::volume::CtVolume;

/// Pixels trimmed from the FOV edge when no explicit mask is given.
pub const MASK_MARGIN_PX: f64 = 4.0;

/// Per-voxel acquisition noise (input − denoised), in HU.
#[derive(Debug, Clone)]
pub struct NoiseField {
    pub values: Array3<f32>,
    pub spacing: [f64; 3],
    pub fov_diameter: f64,
    pub source_case: String,
}

impl NoiseField {
    pub fn pixel_size(&self) -> [f64; 2] {
        [self.spacing[0], self.spacing[1]]
    }

    pub fn central_slice(&self) -> ArrayView2<'_, f32> {
        self.values.index_axis(Axis(0), self.values.dim().0 / 2)
    }

    /// In-plane mask of the FOV disc, shrunk by [`MASK_MARGIN_PX`].
    pub fn default_mask(&self) -> Array2<bool> {
        let (_, ny, nx) = self.values.dim();
        fov_mask((ny, nx), self.pixel_size(), self.fov_diameter, MASK_MARGIN_PX)
    }

    /// Adds the noise back onto a denoised volume.
    pub fn add_to(&self, denoised: &CtVolume) -> Result<CtVolume> {
        if denoised.voxels().dim() != self.values.dim() {
            return Err(Error::ShapeMismatch("noise field and volume differ in shape".into()));
        }
        denoised.with_voxels(denoised.voxels() + &self.values)
    }
}

/// Result of splitting a volume into a smooth part and noise.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub denoised: CtVolume,
    pub noise: NoiseField,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Robust noise sd of a slice: the MAD of horizontal neighbour differences
/// inside `mask`, scaled to a Gaussian sd. Edges are sparse enough to land
/// in the tails.
pub fn estimate_noise_sd(slice: ArrayView2<'_, f32>, mask: &Array2<bool>) -> Option<f64> {
    let (ny, nx) = slice.dim();
    let mut d = Vec::new();
    for r in 0..ny {
        for c in 0..nx.saturating_sub(1) {
            if mask[[r, c]] && mask[[r, c + 1]] {
                d.push((slice[[r, c + 1]] - slice[[r, c]]) as f64);
            }
        }
    }
    if d.is_empty() {
        return None;
    }
    let m = median(&mut d);
    let mut dev: Vec<f64> = d.iter().map(|x| (x - m).abs()).collect();
    Some(1.4826 * median(&mut dev) / std::f64::consts::SQRT_2)
}

/// Twice the robust noise estimate of the central slice inside the FOV, at
/// least 1 HU.
pub fn default_tv_weight(volume: &CtVolume) -> Result<f64> {
    let d_fov = measure_fov_diameter(volume)?;
    let s = volume.slice(volume.central_slice_index());
    let mask = fov_mask(s.dim(), volume.pixel_size(), d_fov, 2.0);
    let sd = estimate_noise_sd(s, &mask).ok_or_else(|| Error::DegenerateSlice("empty field of view".into()))?;
    Ok((2.0 * sd).max(1.0))
}

/// Replaces padding with the median of the FOV edge ring so the artificial
/// step at the FOV boundary is not smoothed into the field of view.
fn fill_outside(slice: ArrayView2<'_, f32>, outside: &Array2<bool>, ring: &Array2<bool>) -> Array2<f32> {
    let mut edge: Vec<f32> = slice.iter().zip(ring.iter()).filter(|(_, &r)| r).map(|(&v, _)| v).collect();
    let fill = if edge.is_empty() {
        0.0
    } else {
        edge.sort_by(f32::total_cmp);
        edge[edge.len() / 2]
    };
    let mut out = slice.to_owned();
    ndarray::Zip::from(&mut out).and(outside).for_each(|v, &o| {
        if o {
            *v = fill;
        }
    });
    out
}

/// Denoises every slice and returns both parts. Voxels outside the FOV of a
/// padded volume are left untouched and carry zero noise.
pub fn decompose(volume: &CtVolume, weight: Option<f64>, max_iter: usize, case_id: &str) -> Result<Decomposition> {
    let weight = match weight {
        Some(w) => w,
        None => default_tv_weight(volume)?,
    };
    let d_fov = measure_fov_diameter(volume)?;
    let (nz, ny, nx) = volume.voxels().dim();
    let outside = volume
        .outside_fov_value()
        .map(|_| fov_mask((ny, nx), volume.pixel_size(), d_fov, 0.0).mapv(|inside| !inside));
    let ring = outside.as_ref().map(|o| {
        let inner = fov_mask((ny, nx), volume.pixel_size(), d_fov, 2.0);
        ndarray::Zip::from(o).and(&inner).map_collect(|&out, &inn| !out && !inn)
    });
    let slices = parallel::map_range(nz, |k| match (&outside, &ring) {
        (Some(o), Some(ring)) => tv_denoise(fill_outside(volume.slice(k), o, ring).view(), weight, max_iter),
        _ => tv_denoise(volume.slice(k), weight, max_iter),
    });
    let mut noise = Array3::<f32>::zeros((nz, ny, nx));
    let mut smooth = volume.voxels().clone();
    for (k, denoised) in slices.into_iter().enumerate() {
        let denoised = denoised?;
        let input = volume.slice(k);
        let mut n = noise.index_axis_mut(Axis(0), k);
        let mut s = smooth.index_axis_mut(Axis(0), k);
        for ((idx, &f), &u) in input.indexed_iter().zip(denoised.iter()) {
            if outside.as_ref().is_some_and(|o| o[idx]) {
                continue;
            }
            let e = f - u;
            n[idx] = e;
            s[idx] = f - e;
        }
    }
    Ok(Decomposition {
        denoised: volume.with_voxels(smooth)?,
        noise: NoiseField { values: noise, spacing: volume.spacing(), fov_diameter: d_fov, source_case: case_id.to_string() },
    })
}

pub fn extract_noise(volume: &CtVolume, weight: Option<f64>, max_iter: usize, case_id: &str) -> Result<NoiseField> {
    Ok(decompose(volume, weight, max_iter, case_id)?.noise)
}

/// Population standard deviation over masked voxels of every slice. The
/// default mask is the FOV disc.
pub fn noise_sd(noise: &NoiseField, mask: Option<&Array2<bool>>) -> Result<f64> {
    let default;
    let mask = match mask {
        Some(m) => m,
        None => {
            default = noise.default_mask();
            &default
        }
    };
    let (_, ny, nx) = noise.values.dim();
    if mask.dim() != (ny, nx) {
        return Err(Error::ShapeMismatch("mask shape differs from slice shape".into()));
    }
    let mut n = 0usize;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for slice in noise.values.outer_iter() {
        for (&v, &m) in slice.iter().zip(mask.iter()) {
            if m {
                let v = v as f64;
                n += 1;
                sum += v;
                sum_sq += v * v;
            }
        }
    }
    if n == 0 {
        return Err(Error::InvalidParameter("empty mask".into()));
    }
    let mean = sum / n as f64;
    Ok((sum_sq / n as f64 - mean * mean).max(0.0).sqrt())
}

/// Standard deviation over the central slice only.
pub fn central_noise_sd(noise: &NoiseField, mask: Option<&Array2<bool>>) -> Result<f64> {
    let k = noise.values.dim().0 / 2;
    let single = NoiseField {
        values: noise.values.slice(ndarray::s![k..k + 1, .., ..]).to_owned(),
        spacing: noise.spacing,
        fov_diameter: noise.fov_diameter,
        source_case: noise.source_case.clone(),
    };
    noise_sd(&single, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{body_phantom, PhantomSpec};
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn field(values: Array3<f32>) -> NoiseField {
        let (_, ny, nx) = values.dim();
        NoiseField { values, spacing: [1.0, 1.0, 1.0], fov_diameter: (nx.max(ny) * 4) as f64, source_case: "t".into() }
    }

    fn phantom() -> CtVolume {
        body_phantom(&PhantomSpec::new(96, 4.0, 3, 5.0)).unwrap().0
    }

    #[test]
    fn sd_of_constant_and_two_point_fields() {
        assert_eq!(noise_sd(&field(Array3::from_elem((2, 10, 10), 7.0)), None).unwrap(), 0.0);
        let alt = Array3::from_shape_fn((1, 10, 10), |(_, r, c)| if (r + c) % 2 == 0 { 3.0 } else { -3.0 });
        assert!((noise_sd(&field(alt), None).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn sd_of_large_gaussian_sample() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let normal = Normal::new(0.0, 50.0).unwrap();
        let values = Array3::from_shape_fn((25, 200, 200), |_| normal.sample(&mut rng) as f32);
        let sd = noise_sd(&field(values), None).unwrap();
        assert!((sd - 50.0).abs() < 0.5, "{sd}");
    }

    #[test]
    fn empty_mask_is_rejected() {
        let f = field(Array3::zeros((1, 10, 10)));
        let mask = Array2::from_elem((10, 10), false);
        assert_eq!(noise_sd(&f, Some(&mask)).unwrap_err().to_string(), "invalid parameter: empty mask");
    }

    #[test]
    fn noiseless_phantom_has_little_noise() {
        let mut spec = PhantomSpec::new(128, 3.0, 3, 5.0);
        spec.outside_fov = Some(-2048.0);
        spec.edge_mm = 0.0;
        let v = body_phantom(&spec).unwrap().0;
        assert_eq!(default_tv_weight(&v).unwrap(), 1.0);
        let noise = extract_noise(&v, None, 200, "p").unwrap();
        let sd = noise_sd(&noise, None).unwrap();
        assert!(sd <= 1.0, "{sd}");
        let outside = fov_mask((128, 128), v.pixel_size(), noise.fov_diameter, 0.0);
        for s in noise.values.outer_iter() {
            for (&e, &inside) in s.iter().zip(outside.iter()) {
                if !inside {
                    assert_eq!(e, 0.0);
                }
            }
        }
    }

    #[test]
    fn robust_estimate_ignores_edges() {
        let mut spec = PhantomSpec::new(128, 3.0, 1, 5.0);
        spec.edge_mm = 0.0;
        let v = body_phantom(&spec).unwrap().0;
        let mask = fov_mask((128, 128), v.pixel_size(), measure_fov_diameter(&v).unwrap(), 2.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for sd in [5.0, 20.0, 80.0] {
            let normal = Normal::new(0.0, sd).unwrap();
            let noisy = v.slice(0).mapv(|x| x + normal.sample(&mut rng) as f32);
            let est = estimate_noise_sd(noisy.view(), &mask).unwrap();
            assert!((est / sd - 1.0).abs() < 0.05, "{sd}: {est}");
        }
        assert_eq!(estimate_noise_sd(v.slice(0), &Array2::from_elem((128, 128), false)), None);
    }

    #[test]
    fn recovers_synthetic_noise_and_decomposes_exactly() {
        let v = phantom();
        let d_fov = measure_fov_diameter(&v).unwrap();
        let inside = fov_mask((96, 96), v.pixel_size(), d_fov, 0.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let normal = Normal::new(0.0, 30.0).unwrap();
        let mut noisy = v.voxels().clone();
        for mut s in noisy.outer_iter_mut() {
            for (idx, x) in s.indexed_iter_mut() {
                if inside[idx] {
                    *x += normal.sample(&mut rng) as f32;
                }
            }
        }
        let noisy = v.with_voxels(noisy).unwrap();
        let d = decompose(&noisy, None, 200, "p").unwrap();
        let sd = noise_sd(&d.noise, None).unwrap();
        assert!((24.0..=36.0).contains(&sd), "extracted sd {sd}");

        let mask = d.noise.default_mask();
        let mut sum = 0.0;
        let mut n = 0.0;
        for s in d.noise.values.outer_iter() {
            for (&e, &m) in s.iter().zip(mask.iter()) {
                if m {
                    sum += e as f64;
                    n += 1.0;
                }
            }
        }
        assert!((sum / n).abs() <= 2.0);

        let back = d.noise.add_to(&d.denoised).unwrap();
        let parts = d.denoised.voxels().iter().zip(d.noise.values.iter());
        for ((a, b), (u, e)) in back.voxels().iter().zip(noisy.voxels().iter()).zip(parts) {
            let scale = b.abs().max(u.abs()).max(e.abs());
            assert!((a - b).abs() <= 2.0 * f32::EPSILON * scale, "{a} vs {b}");
        }
    }
}
