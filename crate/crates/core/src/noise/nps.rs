use std::io::Write;
use std::path::Path;

use ndarray::{s, ArrayView2};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::parallel;

pub const GRID_CELLS: usize = 10;
pub const MIN_PATCH_SIDE: usize = 8;

/// Radially averaged noise power spectrum of one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct NpsCurve {
    /// Annulus centres, cycles/mm.
    pub frequencies: Vec<f64>,
    /// Mean power per annulus, HU²·mm².
    pub power: Vec<f64>,
    pub patch_index: (usize, usize),
    /// Number of 2D frequency samples averaged into each annulus.
    pub bin_counts: Vec<usize>,
    /// Area of one 2D frequency sample, mm⁻².
    pub cell_area: f64,
}

impl NpsCurve {
    /// ∫∫ NPS over the full frequency plane; equals the patch variance.
    pub fn integrated_power(&self) -> f64 {
        self.power.iter().zip(&self.bin_counts).map(|(p, &n)| p * n as f64).sum::<f64>() * self.cell_area
    }

    pub fn max_power(&self) -> f64 {
        self.power.iter().cloned().fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> NpsCurve {
        NpsCurve { power: self.power.iter().map(|p| p * factor).collect(), ..self.clone() }
    }
}

fn fft_2d(data: &mut [Complex<f64>], n: usize) {
    let fft = FftPlanner::new().plan_fft_forward(n);
    for row in data.chunks_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex::default(); n];
    for c in 0..n {
        for r in 0..n {
            col[r] = data[r * n + c];
        }
        fft.process(&mut col);
        for r in 0..n {
            data[r * n + c] = col[r];
        }
    }
}

/// Radial NPS of a square patch with `⌊side/2⌋` annuli of uniform width.
///
/// Annulus `k` collects frequencies whose magnitude rounds to `k·Δf`; the
/// corners beyond Nyquist fold into the outermost annulus so that the curve
/// accounts for all of the patch variance.
pub fn radial_nps(patch: ArrayView2<'_, f32>, pixel_size: [f64; 2]) -> Result<NpsCurve> {
    let (ny, nx) = patch.dim();
    if ny != nx {
        return Err(Error::InvalidParameter(format!("patch must be square, got {ny}x{nx}")));
    }
    if nx < MIN_PATCH_SIDE {
        return Err(Error::InvalidParameter(format!("patch side {nx} below {MIN_PATCH_SIDE}")));
    }
    let n = nx;
    let [px, py] = pixel_size;
    let mean = patch.iter().map(|&v| v as f64).sum::<f64>() / (n * n) as f64;
    let mut data: Vec<Complex<f64>> = patch.iter().map(|&v| Complex::new(v as f64 - mean, 0.0)).collect();
    fft_2d(&mut data, n);

    let bins = n / 2;
    let dfx = 1.0 / (n as f64 * px);
    let dfy = 1.0 / (n as f64 * py);
    let df = dfx.max(dfy);
    let norm = px * py / (n * n) as f64;
    let mut sums = vec![0.0; bins];
    let mut counts = vec![0usize; bins];
    let signed = |k: usize| if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    for r in 0..n {
        for c in 0..n {
            if r == 0 && c == 0 {
                continue;
            }
            let f = (signed(c) * dfx).hypot(signed(r) * dfy);
            let k = ((f / df).round() as usize).clamp(1, bins);
            sums[k - 1] += data[r * n + c].norm_sqr() * norm;
            counts[k - 1] += 1;
        }
    }
    let power = sums.iter().zip(&counts).map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 }).collect();
    Ok(NpsCurve {
        frequencies: (1..=bins).map(|k| k as f64 * df).collect(),
        power,
        patch_index: (0, 0),
        bin_counts: counts,
        cell_area: dfx * dfy,
    })
}

/// Splits a slice into a 10×10 grid of square cells (remainder truncated)
/// and returns the NPS of each, row-major.
pub fn grid_nps(slice: ArrayView2<'_, f32>, pixel_size: [f64; 2]) -> Result<Vec<NpsCurve>> {
    let (ny, nx) = slice.dim();
    let min = GRID_CELLS * MIN_PATCH_SIDE;
    if ny < min || nx < min {
        return Err(Error::InvalidParameter(format!("slice {ny}x{nx} smaller than {min}x{min}")));
    }
    let side = (ny / GRID_CELLS).min(nx / GRID_CELLS);
    let curves = parallel::map_range(GRID_CELLS * GRID_CELLS, |i| {
        let (r, c) = (i / GRID_CELLS, i % GRID_CELLS);
        let patch = slice.slice(s![r * side..(r + 1) * side, c * side..(c + 1) * side]);
        radial_nps(patch, pixel_size).map(|curve| NpsCurve { patch_index: (r, c), ..curve })
    });
    curves.into_iter().collect()
}

/// Largest power value across a set of curves.
pub fn max_power(curves: &[NpsCurve]) -> f64 {
    curves.iter().map(NpsCurve::max_power).fold(0.0, f64::max)
}

/// Divides every curve by `scale`; a zero scale leaves the curves unchanged.
pub fn normalize(curves: &[NpsCurve], scale: f64) -> Vec<NpsCurve> {
    if scale <= 0.0 {
        return curves.to_vec();
    }
    curves.iter().map(|c| c.scaled(1.0 / scale)).collect()
}

/// Mean over cells of the summed squared power difference.
pub fn msse_nps(a: &[NpsCurve], b: &[NpsCurve]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::ShapeMismatch(format!("curve sets of length {} and {}", a.len(), b.len())));
    }
    let mut total = 0.0;
    for (ca, cb) in a.iter().zip(b) {
        if ca.patch_index != cb.patch_index || ca.power.len() != cb.power.len() {
            return Err(Error::ShapeMismatch(format!("curves at {:?} and {:?} do not match", ca.patch_index, cb.patch_index)));
        }
        total += ca.power.iter().zip(&cb.power).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    }
    Ok(total / a.len() as f64)
}

pub fn write_nps_csv(path: impl AsRef<Path>, curves: &[NpsCurve]) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "patch_row,patch_col,frequency,power").expect("in-memory write");
    for c in curves {
        for (f, p) in c.frequencies.iter().zip(&c.power) {
            writeln!(buf, "{},{},{},{}", c.patch_index.0, c.patch_index.1, f, p).expect("in-memory write");
        }
    }
    crate::io::write_atomic(path, &buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn white(n: usize, sd: f64, seed: u64) -> Array2<f32> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sd).unwrap();
        Array2::from_shape_fn((n, n), |_| normal.sample(&mut rng) as f32)
    }

    #[test]
    fn zero_patch_has_zero_power() {
        let c = radial_nps(Array2::zeros((16, 16)).view(), [1.0, 1.0]).unwrap();
        assert_eq!(c.power.len(), 8);
        assert!(c.power.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn parseval_on_white_noise() {
        for (n, px) in [(16, 0.7), (64, 1.0), (128, 2.5)] {
            let p = white(n, 12.0, n as u64);
            let c = radial_nps(p.view(), [px, px]).unwrap();
            let vals: Vec<f64> = p.iter().map(|&v| v as f64).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!((c.integrated_power() / var - 1.0).abs() < 1e-9);
            if n >= 64 {
                assert!((c.integrated_power() / 144.0 - 1.0).abs() < 0.05);
            }
        }
    }

    #[test]
    fn sinusoid_power_is_concentrated() {
        let n = 32;
        let px = 0.5;
        let k0 = 5;
        let f0 = k0 as f64 / (n as f64 * px);
        let patch = Array2::from_shape_fn((n, n), |(_, c)| (2.0 * std::f64::consts::PI * f0 * c as f64 * px).sin() as f32 * 10.0);
        let curve = radial_nps(patch.view(), [px, px]).unwrap();
        let k = curve.frequencies.iter().position(|f| (f - f0).abs() < 1e-9).unwrap();
        let energy: Vec<f64> = curve.power.iter().zip(&curve.bin_counts).map(|(p, &n)| p * n as f64).collect();
        assert!(energy[k] / energy.iter().sum::<f64>() > 0.9);
    }

    #[test]
    fn rejects_non_square_and_small() {
        assert!(radial_nps(Array2::zeros((16, 12)).view(), [1.0, 1.0]).is_err());
        assert!(radial_nps(Array2::zeros((6, 6)).view(), [1.0, 1.0]).is_err());
        assert!(grid_nps(Array2::zeros((79, 200)).view(), [1.0, 1.0]).is_err());
    }

    #[test]
    fn grid_partition() {
        let curves = grid_nps(white(205, 1.0, 3).view(), [1.0, 1.0]).unwrap();
        assert_eq!(curves.len(), 100);
        assert!(curves.iter().all(|c| c.power.len() == 10));
        assert_eq!(curves[37].patch_index, (3, 7));
        let zeros = grid_nps(Array2::zeros((200, 200)).view(), [1.0, 1.0]).unwrap();
        assert!(zeros.iter().all(|c| c.power.iter().all(|&p| p == 0.0)));
    }

    #[test]
    fn white_noise_grid_is_homogeneous() {
        let a = normalize(&grid_nps(white(400, 20.0, 1).view(), [1.0, 1.0]).unwrap(), 400.0);
        let b = normalize(&grid_nps(white(400, 20.0, 2).view(), [1.0, 1.0]).unwrap(), 400.0);
        let half = normalize(&grid_nps(white(400, 10.0, 2).view(), [1.0, 1.0]).unwrap(), 400.0);
        let same = msse_nps(&a, &b).unwrap();
        let diff = msse_nps(&a, &half).unwrap();
        assert!(same < 0.25 * diff, "same {same} diff {diff}");
    }

    #[test]
    fn msse_closed_form() {
        let base = radial_nps(white(16, 1.0, 4).view(), [1.0, 1.0]).unwrap();
        let a: Vec<NpsCurve> = (0..3).map(|i| NpsCurve { patch_index: (0, i), ..base.clone() }).collect();
        let b: Vec<NpsCurve> = a
            .iter()
            .map(|c| NpsCurve { power: c.power.iter().map(|p| p + 0.5).collect(), ..c.clone() })
            .collect();
        assert!((msse_nps(&a, &b).unwrap() - 8.0 * 0.25).abs() < 1e-12);
        assert_eq!(msse_nps(&a, &a).unwrap(), 0.0);
        assert!(msse_nps(&a, &b[..2]).is_err());
    }

    proptest! {
        #[test]
        fn msse_is_symmetric_and_non_negative(
            pa in proptest::collection::vec(0.0f64..10.0, 8),
            pb in proptest::collection::vec(0.0f64..10.0, 8),
        ) {
            let mk = |p: Vec<f64>| vec![NpsCurve {
                frequencies: (1..=8).map(|k| k as f64).collect(),
                power: p,
                patch_index: (0, 0),
                bin_counts: vec![1; 8],
                cell_area: 1.0,
            }];
            let (a, b) = (mk(pa.clone()), mk(pb.clone()));
            let ab = msse_nps(&a, &b).unwrap();
            prop_assert_eq!(ab, msse_nps(&b, &a).unwrap());
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab == 0.0, pa == pb);
        }

        #[test]
        fn curve_invariants(vals in proptest::collection::vec(-100.0f32..100.0, 20 * 20), px in 0.3f64..3.0) {
            let c = radial_nps(Array2::from_shape_vec((20, 20), vals).unwrap().view(), [px, px]).unwrap();
            prop_assert_eq!(c.frequencies.len(), c.power.len());
            prop_assert!(c.frequencies.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(c.power.iter().all(|&p| p >= 0.0));
        }
    }
}
