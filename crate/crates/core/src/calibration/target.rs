//! Search for the photon flux that yields a requested output noise level.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::noise_model::NoiseModelParams;
use crate::ctsim::{fov_mask, ProjectedSlice, ScannerGeometry};
use crate::error::{Error, Result};
use crate::noise::{decompose, MASK_MARGIN_PX};
use crate::volume::CtVolume;
use crate::seed;

/// Smallest flux the search will try.
pub const Q0_FLOOR: f64 = 10.0;
/// Multiples of the decade tried once the target is bracketed.
pub const Q0_LADDER: [f64; 5] = [0.5, 0.75, 1.0, 1.25, 1.5];
const REFINEMENT_STEPS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Q0Candidate {
    pub q0: f64,
    pub noise_sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Q0Search {
    pub q0: f64,
    pub noise_sd: f64,
    pub candidates: Vec<Q0Candidate>,
}

/// Measures the noise a simulation adds to one slice: the sd of the noisy
/// minus the noiseless reconstruction inside the FOV.
pub struct NoiseProbe {
    projected: ProjectedSlice,
    clean: Array2<f32>,
    mask: Array2<bool>,
    params: NoiseModelParams,
    seed: u64,
}

impl NoiseProbe {
    /// Probes the central slice of `volume` as given (no denoising). `seed`
    /// is used as is for the slice's noise stream.
    pub fn new(volume: &CtVolume, geometry: &ScannerGeometry, params: &NoiseModelParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let slice = volume.slice(volume.central_slice_index());
        let projected = ProjectedSlice::new(slice, volume.pixel_size(), geometry, params.n_theta)?;
        Self::from_projected(projected, params, seed)
    }

    pub fn from_projected(projected: ProjectedSlice, params: &NoiseModelParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let clean = projected.reconstruct(None, 0, None)?;
        let mask = fov_mask(clean.dim(), projected.pixel_size(), projected.sinogram().geometry.d_fov, MASK_MARGIN_PX);
        if !mask.iter().any(|&m| m) {
            return Err(Error::DegenerateSlice("field of view mask is empty".into()));
        }
        Ok(NoiseProbe { projected, clean, mask, params: *params, seed })
    }

    pub fn noise_sd(&self, q0: f64) -> Result<f64> {
        let noisy = self.projected.reconstruct(Some(&self.params.with_q0(q0)), self.seed, None)?;
        let mut n = 0.0;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for ((a, b), &m) in noisy.iter().zip(self.clean.iter()).zip(self.mask.iter()) {
            if m {
                let d = (a - b) as f64;
                n += 1.0;
                sum += d;
                sum_sq += d * d;
            }
        }
        let mean = sum / n;
        Ok((sum_sq / n - mean * mean).max(0.0).sqrt())
    }
}

/// Finds Q0 whose simulated output noise sd is closest to `target_sd`.
///
/// The tuned Q0 is rounded to a decade and lowered one decade at a time
/// until the noise reaches the target. The bracketing decade is then scanned
/// with [`Q0_LADDER`], followed by up to two inverse-square-root refinements
/// from the best candidate; the closest of everything evaluated wins.
pub fn find_q0_for_target_sd(
    volume: &CtVolume,
    geometry: &ScannerGeometry,
    params: &NoiseModelParams,
    target_sd: f64,
    tv_weight: Option<f64>,
    seed: u64,
) -> Result<Q0Search> {
    if !(target_sd > 0.0 && target_sd.is_finite()) {
        return Err(Error::InvalidParameter(format!("target noise sd {target_sd} must be positive")));
    }
    let k = volume.central_slice_index();
    let single = volume.slice_volume(k);
    let denoised = decompose(&single, tv_weight, crate::noise::DEFAULT_MAX_ITER, "target")?.denoised;
    let probe = NoiseProbe::new(&denoised, geometry, params, seed::derive_index(seed, k as u64))?;
    search(|q0| probe.noise_sd(q0), params.q0, target_sd)
}

/// The search itself, over any noise-vs-flux response.
pub fn search<F>(mut noise_sd: F, tuned_q0: f64, target_sd: f64) -> Result<Q0Search>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut candidates: Vec<Q0Candidate> = Vec::new();
    let mut eval = |q0: f64, candidates: &mut Vec<Q0Candidate>| -> Result<f64> {
        if let Some(c) = candidates.iter().find(|c| c.q0 == q0) {
            return Ok(c.noise_sd);
        }
        let sd = noise_sd(q0)?;
        candidates.push(Q0Candidate { q0, noise_sd: sd });
        Ok(sd)
    };

    let mut m = tuned_q0.log10().round() as i32;
    loop {
        let q0 = 10f64.powi(m);
        if q0 < Q0_FLOOR {
            let reached = candidates.iter().map(|c| c.noise_sd).fold(0.0, f64::max);
            return Err(Error::TargetUnreachable { target: target_sd, reached });
        }
        if eval(q0, &mut candidates)? >= target_sd {
            break;
        }
        m -= 1;
    }
    let decade = 10f64.powi(m);
    for f in Q0_LADDER {
        eval(decade * f, &mut candidates)?;
    }
    for _ in 0..REFINEMENT_STEPS {
        let best = closest(&candidates, target_sd);
        if best.noise_sd <= 0.0 {
            break;
        }
        let q0 = (best.q0 * (best.noise_sd / target_sd).powi(2)).max(Q0_FLOOR);
        eval(q0, &mut candidates)?;
    }
    let best = closest(&candidates, target_sd);
    Ok(Q0Search { q0: best.q0, noise_sd: best.noise_sd, candidates })
}

fn closest(candidates: &[Q0Candidate], target: f64) -> Q0Candidate {
    *candidates
        .iter()
        .min_by(|a, b| (a.noise_sd - target).abs().total_cmp(&(b.noise_sd - target).abs()).then(b.q0.total_cmp(&a.q0)))
        .expect("non-empty")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(c: f64) -> impl FnMut(f64) -> Result<f64> {
        move |q0: f64| Ok(c / q0.sqrt())
    }

    #[test]
    fn hits_targets_of_an_inverse_sqrt_response() {
        for target in [5.0, 13.0, 50.0, 333.0] {
            let r = search(model(4000.0), 1e6, target).unwrap();
            assert!((r.noise_sd / target - 1.0).abs() < 0.01, "{target}: {}", r.noise_sd);
        }
    }

    #[test]
    fn zero_step_keeps_rounded_q0() {
        let sd = 4000.0 / 1e6f64.sqrt();
        let r = search(model(4000.0), 1.3e6, sd).unwrap();
        assert_eq!(r.q0, 1e6);
    }

    #[test]
    fn result_beats_adjacent_ladder_entries() {
        for target in [7.0, 21.0, 64.0] {
            let r = search(model(4000.0), 1e6, target).unwrap();
            let decade = 10f64.powf((4000.0 / target).powi(2).log10().floor());
            for f in Q0_LADDER {
                let e = (4000.0 / (decade * f).sqrt() - target).abs();
                assert!((r.noise_sd - target).abs() <= e + 1e-12);
            }
        }
    }

    #[test]
    fn unreachable_target_errors() {
        let mut response = |q0: f64| Ok((300.0 - q0.log10()).min(300.0));
        let err = search(&mut response, 1e6, 500.0).unwrap_err();
        assert_eq!(err.to_string().split(':').next().unwrap(), "target noise too high");
    }
}
