//! Count-domain acquisition noise on sinograms.
//!
//! Each line integral `s0` becomes an expected photon count `q0 · exp(−s0)`.
//! A Poisson draw plus Gaussian electronic noise (in counts) is clamped at
//! one photon and converted back with `−ln(n / q0)`.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ctsim::Sinogram;
use crate::error::{Error, Result};
use crate::{parallel, seed};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModelParams {
    /// Unattenuated photons per detector per projection.
    pub q0: f64,
    /// Electronic noise sd, in counts.
    pub sigma: f64,
    pub n_theta: usize,
}

impl NoiseModelParams {
    pub fn new(q0: f64, sigma: f64, n_theta: usize) -> Result<Self> {
        let p = NoiseModelParams { q0, sigma, n_theta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q0 > 0.0 && self.q0.is_finite()) {
            return Err(Error::InvalidParameter(format!("Q0 = {} must be positive", self.q0)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma = {} must be non-negative", self.sigma)));
        }
        if self.n_theta < 16 {
            return Err(Error::InvalidParameter(format!("n_theta = {} must be at least 16", self.n_theta)));
        }
        Ok(())
    }

    pub fn with_q0(&self, q0: f64) -> Self {
        NoiseModelParams { q0, ..*self }
    }
}

/// Draws one noisy count. Both random variates are always consumed so that
/// parameter sweeps share their random numbers.
#[inline]
pub(crate) fn noisy_count<R: Rng>(rng: &mut R, expected: f64, sigma: f64) -> f64 {
    let gauss: f64 = rng.sample(StandardNormal);
    let poisson = if expected > 0.0 {
        match Poisson::new(expected) {
            Ok(d) => d.sample(rng),
            Err(_) => expected,
        }
    } else {
        0.0
    };
    (poisson + sigma * gauss).max(1.0)
}

/// Adds Poisson + Gaussian acquisition noise. Row `i` of the sinogram uses
/// the stream `hash(seed, i)`, so the result is independent of threading.
pub fn add_sinogram_noise(sinogram: &Sinogram, params: &NoiseModelParams, seed: u64) -> Result<Sinogram> {
    if !(params.q0 > 0.0 && params.q0.is_finite()) {
        return Err(Error::InvalidParameter(format!("Q0 = {} must be positive", params.q0)));
    }
    if !(params.sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!("sigma = {} must be non-negative", params.sigma)));
    }
    if sinogram.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("sinogram contains non-finite values".into()));
    }
    let (_, n_det) = sinogram.values.dim();
    let mut out = sinogram.clone();
    let q0 = params.q0;
    let sigma = params.sigma;
    let data = out.values.as_slice_mut().expect("standard layout");
    parallel::for_each_chunk_mut(data, n_det, |row, vals| {
        let mut rng = seed::rng(seed::derive_index(seed, row as u64));
        for v in vals.iter_mut() {
            let n = noisy_count(&mut rng, q0 * (-(*v as f64)).exp(), sigma);
            *v = (-(n / q0).ln()) as f32;
        }
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctsim::{derive_geometry, projection_angles, GeometryOverrides};
    use ndarray::Array2;

    fn flat_sinogram(value: f32, rows: usize, n_det: usize) -> Sinogram {
        let geometry = derive_geometry(500.0, GeometryOverrides { phi: None, n_det: Some(n_det) }).unwrap();
        Sinogram { values: Array2::from_elem((rows, n_det), value), angles: projection_angles(rows), geometry }
    }

    #[test]
    fn noiseless_limit() {
        let s = flat_sinogram(2.5, 16, 64);
        let p = NoiseModelParams::new(1e12, 0.0, 16).unwrap();
        let n = add_sinogram_noise(&s, &p, 3).unwrap();
        assert!(n.values.iter().all(|v| (v - 2.5).abs() < 1e-3));
    }

    #[test]
    fn deterministic_given_seed() {
        let s = flat_sinogram(1.0, 16, 64);
        let p = NoiseModelParams::new(1e3, 1.0, 16).unwrap();
        let a = add_sinogram_noise(&s, &p, 11).unwrap();
        let b = add_sinogram_noise(&s, &p, 11).unwrap();
        assert_eq!(a.values, b.values);
        let c = add_sinogram_noise(&s, &p, 12).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn rejects_non_positive_q0() {
        let s = flat_sinogram(1.0, 16, 64);
        let p = NoiseModelParams { q0: 0.0, sigma: 0.0, n_theta: 16 };
        assert!(add_sinogram_noise(&s, &p, 1).is_err());
        assert!(NoiseModelParams::new(-1.0, 0.0, 16).is_err());
        assert!(NoiseModelParams::new(1.0, -1.0, 16).is_err());
        assert!(NoiseModelParams::new(1.0, 0.0, 8).is_err());
    }

    #[test]
    fn log_domain_variance_matches_inverse_flux() {
        // var(−ln(N/Q0)) ≈ 1/E[N] for N ~ Poisson(Q0) with Q0 large.
        let s = flat_sinogram(0.0, 1000, 1000);
        let p = NoiseModelParams::new(1e4, 0.0, 1000).unwrap();
        let n = add_sinogram_noise(&s, &p, 5).unwrap();
        let vals: Vec<f64> = n.values.iter().map(|&v| v as f64).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!((var - 1e-4).abs() < 0.1e-4, "variance {var}");
    }

    #[test]
    fn count_mean_is_unbiased() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for s0 in [0.0f64, 2.0, 6.0] {
            let expected = 1e5 * (-s0).exp();
            let n = 1_000_000;
            let mean = (0..n).map(|_| noisy_count(&mut rng, expected, 0.0)).sum::<f64>() / n as f64;
            assert!((mean - expected).abs() / expected < 0.01, "s0 {s0}: {mean} vs {expected}");
        }
    }
}
