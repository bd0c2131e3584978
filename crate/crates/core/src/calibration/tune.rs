//! Two-stage grid search for the noise model whose simulated noise spectrum
//! best matches the noise extracted from a dataset.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::noise_model::NoiseModelParams;
use crate::ctsim::{ProjectedSlice, ScannerGeometry};
use crate::error::{Error, Result};
use crate::noise::{decompose, grid_nps, max_power, msse_nps, normalize, NpsCurve, DEFAULT_MAX_ITER};
use crate::volume::CtVolume;
use crate::{parallel, seed};

/// Candidate values for both search stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuningGrid {
    pub q0: Vec<f64>,
    pub sigma: Vec<f64>,
    pub n_theta: Vec<usize>,
    /// Multipliers applied to the coarse-stage Q0 and sigma.
    pub fine_factors: Vec<f64>,
    /// Offsets applied to the coarse-stage projection count.
    pub fine_n_theta_offsets: Vec<i64>,
}

impl Default for TuningGrid {
    fn default() -> Self {
        TuningGrid {
            q0: vec![1e4, 1e5, 1e6, 1e7],
            sigma: vec![0.0, 0.1, 1.0, 10.0],
            n_theta: vec![720, 1440, 2160, 2880],
            fine_factors: vec![0.5, 0.75, 1.0, 2.5, 5.0],
            fine_n_theta_offsets: vec![-360, 0, 360],
        }
    }
}

impl TuningGrid {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(format!("tuning grid: {what}")));
        if self.q0.is_empty() || self.sigma.is_empty() || self.n_theta.is_empty() {
            return bad("every coarse axis needs at least one value");
        }
        if self.fine_factors.is_empty() || self.fine_n_theta_offsets.is_empty() {
            return bad("fine stage needs at least one factor and one offset");
        }
        if self.q0.iter().any(|&q| !(q > 0.0 && q.is_finite())) {
            return bad("Q0 values must be positive");
        }
        if self.sigma.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
            return bad("sigma values must be non-negative");
        }
        if self.n_theta.iter().any(|&n| n < 16) {
            return bad("n_theta values must be at least 16");
        }
        if self.fine_factors.iter().any(|&f| !(f > 0.0 && f.is_finite())) {
            return bad("fine factors must be positive");
        }
        Ok(())
    }

    /// Cells of the coarse stage, deduplicated.
    pub fn coarse(&self) -> Vec<NoiseModelParams> {
        let mut cells = Vec::new();
        for &n_theta in &self.n_theta {
            for &q0 in &self.q0 {
                for &sigma in &self.sigma {
                    cells.push(NoiseModelParams { q0, sigma, n_theta });
                }
            }
        }
        dedupe(cells)
    }

    /// Neighbourhood of `best` searched in the fine stage.
    pub fn fine(&self, best: &NoiseModelParams) -> Vec<NoiseModelParams> {
        let mut cells = Vec::new();
        for &off in &self.fine_n_theta_offsets {
            let n = best.n_theta as i64 + off;
            if n < 16 {
                continue;
            }
            for &fq in &self.fine_factors {
                for &fs in &self.fine_factors {
                    cells.push(NoiseModelParams { q0: best.q0 * fq, sigma: best.sigma * fs, n_theta: n as usize });
                }
            }
        }
        dedupe(cells)
    }
}

fn key_order(a: &NoiseModelParams, b: &NoiseModelParams) -> Ordering {
    a.n_theta.cmp(&b.n_theta).then(a.q0.total_cmp(&b.q0)).then(a.sigma.total_cmp(&b.sigma))
}

fn dedupe(mut cells: Vec<NoiseModelParams>) -> Vec<NoiseModelParams> {
    cells.sort_by(key_order);
    cells.dedup_by(|a, b| key_order(a, b) == Ordering::Equal);
    cells
}

#[derive(Debug, Clone)]
pub struct TuningOptions {
    pub grid: TuningGrid,
    /// TV weight; per-case default when absent.
    pub tv_weight: Option<f64>,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for TuningOptions {
    fn default() -> Self {
        TuningOptions { grid: TuningGrid::default(), tv_weight: None, max_iter: DEFAULT_MAX_ITER, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridEvaluation {
    pub params: NoiseModelParams,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct TuningOutcome {
    pub params: NoiseModelParams,
    pub objective: f64,
    pub coarse_best: NoiseModelParams,
    /// Every distinct cell evaluated, in evaluation order.
    pub evaluations: Vec<GridEvaluation>,
    pub warnings: Vec<String>,
}

/// What the objective needs from one case: the extracted-noise spectra and
/// the denoised central slice to re-simulate.
struct CaseReference {
    curves: Vec<NpsCurve>,
    scale: f64,
    denoised: Array2<f32>,
    pixel_size: [f64; 2],
    spacing: [f64; 3],
    fill: Option<f32>,
    weight: f64,
    seed: u64,
}

fn prepare(case: &CtVolume, index: usize, options: &TuningOptions) -> Result<CaseReference> {
    let k = case.central_slice_index();
    let single = case.slice_volume(k);
    let weight = match options.tv_weight {
        Some(w) => w,
        None => crate::noise::default_tv_weight(&single)?,
    };
    let parts = decompose(&single, Some(weight), options.max_iter, &format!("case{index}"))?;
    let curves = grid_nps(parts.noise.central_slice(), case.pixel_size())?;
    Ok(CaseReference {
        scale: max_power(&curves),
        curves,
        denoised: parts.denoised.slice(0).to_owned(),
        pixel_size: case.pixel_size(),
        spacing: case.spacing(),
        fill: case.outside_fov_value(),
        weight,
        seed: seed::derive_index(seed::derive(options.seed, &["tune"]), index as u64),
    })
}

impl CaseReference {
    /// Spectra of the noise extracted from a simulation of the denoised slice.
    fn simulated_curves(&self, projected: &ProjectedSlice, params: &NoiseModelParams, max_iter: usize) -> Result<Vec<NpsCurve>> {
        let img = projected.reconstruct(Some(params), self.seed, self.fill)?;
        let vox = img.insert_axis(Axis(0));
        let vol = CtVolume::with_outside_fov(vox, self.spacing, [0.0; 3], self.fill)?;
        let parts = decompose(&vol, Some(self.weight), max_iter, "sim")?;
        grid_nps(parts.noise.central_slice(), self.pixel_size)
    }

    fn objective(&self, projected: &ProjectedSlice, params: &NoiseModelParams, max_iter: usize) -> Result<f64> {
        let sim = self.simulated_curves(projected, params, max_iter)?;
        msse_nps(&normalize(&sim, self.scale), &normalize(&self.curves, self.scale))
    }
}

/// Finds the noise model whose simulated noise spectra best match the noise
/// extracted from the central slice of each case.
///
/// Both spectra are divided by the largest power in the case's extracted
/// spectra, so the objective compares shape and amplitude on a common scale.
pub fn tune_noise_model(cases: &[CtVolume], geometry: &ScannerGeometry, options: &TuningOptions) -> Result<TuningOutcome> {
    if cases.is_empty() {
        return Err(Error::InvalidParameter("no cases to tune on".into()));
    }
    options.grid.validate()?;
    geometry.validate()?;
    let refs = cases
        .iter()
        .enumerate()
        .map(|(i, c)| prepare(c, i, options))
        .collect::<Result<Vec<_>>>()?;
    let mut warnings = Vec::new();
    if refs.iter().all(|r| r.scale == 0.0) {
        let msg = "extracted noise is zero in every case; tuning picks the least noisy cell".to_string();
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let mut done: Vec<GridEvaluation> = Vec::new();
    let coarse = options.grid.coarse();
    evaluate_cells(&refs, geometry, &coarse, options.max_iter, &mut done)?;
    let coarse_best = argmin(&done).params;
    let fine = options.grid.fine(&coarse_best);
    evaluate_cells(&refs, geometry, &fine, options.max_iter, &mut done)?;
    let best = argmin(&done);
    log::info!(
        "tuned noise model q0={:e} sigma={} n_theta={} (mSSE {:.4e})",
        best.params.q0,
        best.params.sigma,
        best.params.n_theta,
        best.objective
    );
    Ok(TuningOutcome { params: best.params, objective: best.objective, coarse_best, evaluations: done, warnings })
}

/// Lowest objective; ties go to the smaller (n_theta, Q0, sigma).
fn argmin(evals: &[GridEvaluation]) -> GridEvaluation {
    *evals
        .iter()
        .min_by(|a, b| a.objective.total_cmp(&b.objective).then(key_order(&a.params, &b.params)))
        .expect("at least one cell evaluated")
}

fn evaluate_cells(
    refs: &[CaseReference],
    geometry: &ScannerGeometry,
    cells: &[NoiseModelParams],
    max_iter: usize,
    done: &mut Vec<GridEvaluation>,
) -> Result<()> {
    let todo: Vec<NoiseModelParams> = cells
        .iter()
        .filter(|c| !done.iter().any(|d| key_order(&d.params, c) == Ordering::Equal))
        .copied()
        .collect();
    let mut by_theta: BTreeMap<usize, Vec<NoiseModelParams>> = BTreeMap::new();
    for c in todo {
        by_theta.entry(c.n_theta).or_default().push(c);
    }
    for (n_theta, group) in by_theta {
        let mut totals = vec![0.0; group.len()];
        for r in refs {
            let projected = ProjectedSlice::new(r.denoised.view(), r.pixel_size, geometry, n_theta)?;
            let values = parallel::map_slice(&group, |p| r.objective(&projected, p, max_iter));
            for (t, v) in totals.iter_mut().zip(values) {
                *t += v?;
            }
        }
        for (params, total) in group.into_iter().zip(totals) {
            let objective = total / refs.len() as f64;
            log::debug!("q0={:e} sigma={} n_theta={} mSSE={:.4e}", params.q0, params.sigma, params.n_theta, objective);
            done.push(GridEvaluation { params, objective });
        }
    }
    Ok(())
}

/// Every parameter set the search can return for `grid`: the coarse grid
/// plus the fine neighbourhood of each coarse cell.
pub fn grid_closure(grid: &TuningGrid) -> Vec<NoiseModelParams> {
    let coarse = grid.coarse();
    let mut all = coarse.clone();
    for c in &coarse {
        all.extend(grid.fine(c));
    }
    dedupe(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_sizes() {
        let g = TuningGrid::default();
        assert_eq!(g.coarse().len(), 64);
        let best = NoiseModelParams { q0: 1e6, sigma: 1.0, n_theta: 2160 };
        assert_eq!(g.fine(&best).len(), 75);
        let zero_sigma = NoiseModelParams { sigma: 0.0, ..best };
        assert_eq!(g.fine(&zero_sigma).len(), 15);
        let low = NoiseModelParams { n_theta: 20, ..best };
        assert!(g.fine(&low).iter().all(|p| p.n_theta >= 16));
    }

    #[test]
    fn ties_go_to_smaller_keys() {
        let e = |q0, sigma, n_theta| GridEvaluation { params: NoiseModelParams { q0, sigma, n_theta }, objective: 1.0 };
        let evals = [e(1e6, 0.0, 2160), e(1e5, 1.0, 1440), e(1e5, 0.0, 1440), e(1e4, 0.0, 2880)];
        assert_eq!(argmin(&evals).params, NoiseModelParams { q0: 1e5, sigma: 0.0, n_theta: 1440 });
    }

    #[test]
    fn invalid_grids_are_rejected() {
        let mut g = TuningGrid::default();
        g.n_theta = vec![8];
        assert!(g.validate().is_err());
        let g = TuningGrid { q0: vec![], ..TuningGrid::default() };
        assert!(g.validate().is_err());
    }
}
