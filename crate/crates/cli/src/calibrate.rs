//! `calibrate`: scanner geometry, tuned noise model and the dataset noise
//! distribution.

use std::path::Path;

use ctrobust::augment::Calibration;
use ctrobust::calibration::{
    tune_noise_model, GridEvaluation, NoiseDistribution, NoiseModelParams, TuningOptions,
};
use ctrobust::ctsim::{derive_geometry, measure_fov_diameter, ScannerGeometry};
use ctrobust::io::{load_volume, CaseEntry};
use ctrobust::noise::{extract_noise, noise_sd};
use ctrobust::{seed, CtVolume};
use serde::{Deserialize, Serialize};

use crate::config::{CalibrationSource, RunConfig};
use crate::dataset::{load_manifest, verify_checksums};
use crate::error::{CliError, CliResult};
use crate::output::{read_json, write_json, Layout};
use crate::pool::map_bounded;
use crate::Outcome;

pub const GEOMETRY_FILE: &str = "geometry.json";
pub const NOISE_MODEL_FILE: &str = "noise_model.json";
pub const DISTRIBUTION_FILE: &str = "noise_distribution.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModelFile {
    pub params: NoiseModelParams,
    pub objective: f64,
    pub coarse_best: NoiseModelParams,
    /// Fixed TV weight used for tuning; per-case default when absent.
    pub tv_weight: Option<f64>,
    pub tuning_cases: Vec<String>,
    pub evaluations: Vec<GridEvaluation>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseNoise {
    pub case_id: String,
    pub fov_diameter_mm: f64,
    pub noise_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedCase {
    pub case_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionFile {
    pub cases: Vec<CaseNoise>,
    pub excluded: Vec<ExcludedCase>,
    pub distribution: NoiseDistribution,
    pub warnings: Vec<String>,
}

struct Measured {
    noise: CaseNoise,
    central: CtVolume,
}

fn measure(entry: &CaseEntry, cfg: &RunConfig) -> CliResult<Measured> {
    verify_checksums(entry)?;
    let volume = load_volume(&entry.volume_path)?;
    let fov = measure_fov_diameter(&volume)?;
    let field = extract_noise(&volume, cfg.tuning.tv_weight, cfg.tuning.max_iter, &entry.case_id)?;
    let sd = noise_sd(&field, None)?;
    log::info!("{}: FOV {fov:.1} mm, noise sd {sd:.2} HU", entry.case_id);
    let central = volume.slice_volume(volume.central_slice_index());
    Ok(Measured { noise: CaseNoise { case_id: entry.case_id.clone(), fov_diameter_mm: fov, noise_sd: sd }, central })
}

pub fn run(cfg: &RunConfig) -> CliResult<Outcome> {
    let layout = Layout::new(&cfg.output_dir);
    match &cfg.calibration {
        CalibrationSource::Auto => run_auto(cfg, &layout),
        CalibrationSource::Dir(dir) => {
            import(dir, &layout)?;
            Ok(Outcome::Complete)
        }
    }
}

fn run_auto(cfg: &RunConfig, layout: &Layout) -> CliResult<Outcome> {
    let manifest = load_manifest(cfg)?;
    let results = map_bounded(&manifest.cases, cfg.max_parallel, |_, e| measure(e, cfg));
    let mut measured = Vec::new();
    let mut excluded = Vec::new();
    for (entry, r) in manifest.cases.iter().zip(results) {
        match r {
            Ok(m) => measured.push(m),
            Err(e) => {
                log::error!("{}: excluded from calibration: {e}", entry.case_id);
                excluded.push(ExcludedCase { case_id: entry.case_id.clone(), error: e.to_string() });
            }
        }
    }
    if measured.is_empty() {
        return Err(CliError::Stage("no case could be loaded for calibration".into()));
    }

    let d_fov = measured.iter().map(|m| m.noise.fov_diameter_mm).fold(0.0, f64::max);
    let geometry = derive_geometry(d_fov, cfg.geometry)?;
    let tuning: Vec<&Measured> = measured.iter().take(cfg.tuning.max_cases).collect();
    let centrals: Vec<CtVolume> = tuning.iter().map(|m| m.central.clone()).collect();
    let options = TuningOptions {
        grid: cfg.tuning.grid.clone(),
        tv_weight: cfg.tuning.tv_weight,
        max_iter: cfg.tuning.max_iter,
        seed: seed::derive(cfg.seed(), &["calibrate"]),
    };
    log::info!("tuning on {} case(s), {} grid cells", centrals.len(), cfg.tuning.grid.coarse().len());
    let outcome = tune_noise_model(&centrals, &geometry, &options)?;
    let model = NoiseModelFile {
        params: outcome.params,
        objective: outcome.objective,
        coarse_best: outcome.coarse_best,
        tv_weight: cfg.tuning.tv_weight,
        tuning_cases: tuning.iter().map(|m| m.noise.case_id.clone()).collect(),
        evaluations: outcome.evaluations,
        warnings: outcome.warnings,
    };

    let cases: Vec<CaseNoise> = measured.into_iter().map(|m| m.noise).collect();
    let sds: Vec<f64> = cases.iter().map(|c| c.noise_sd).collect();
    let distribution = NoiseDistribution::from_case_sds(&sds, cfg.noise_distribution.family)?;
    let dist = DistributionFile {
        warnings: distribution.warnings.clone(),
        cases,
        excluded,
        distribution,
    };

    let dir = layout.calibration();
    write_json(&dir.join(GEOMETRY_FILE), &geometry)?;
    write_json(&dir.join(NOISE_MODEL_FILE), &model)?;
    write_json(&dir.join(DISTRIBUTION_FILE), &dist)?;
    Ok(Outcome::from_failures(dist.excluded.len()))
}

/// Validates previously written calibration files and copies them into
/// this run's output.
fn import(src: &Path, layout: &Layout) -> CliResult<()> {
    let geometry: ScannerGeometry = read_json(&src.join(GEOMETRY_FILE))?;
    geometry.validate()?;
    let model: NoiseModelFile = read_json(&src.join(NOISE_MODEL_FILE))?;
    model.params.validate()?;
    let dist_path = src.join(DISTRIBUTION_FILE);
    let dist: Option<DistributionFile> = if dist_path.exists() { Some(read_json(&dist_path)?) } else { None };
    let dir = layout.calibration();
    write_json(&dir.join(GEOMETRY_FILE), &geometry)?;
    write_json(&dir.join(NOISE_MODEL_FILE), &model)?;
    match dist {
        Some(d) => write_json(&dir.join(DISTRIBUTION_FILE), &d)?,
        None => log::warn!("{} not found; empirical weighting will be unavailable", dist_path.display()),
    }
    log::info!("calibration imported from {}", src.display());
    Ok(())
}

fn missing(path: &Path) -> CliError {
    CliError::Stage(format!("{} not found; run `ctrobust calibrate` first", path.display()))
}

/// Calibration written by an earlier `calibrate`.
pub fn load_calibration(layout: &Layout) -> CliResult<Calibration> {
    let dir = layout.calibration();
    let g = dir.join(GEOMETRY_FILE);
    let m = dir.join(NOISE_MODEL_FILE);
    if !g.exists() {
        return Err(missing(&g));
    }
    if !m.exists() {
        return Err(missing(&m));
    }
    let geometry: ScannerGeometry = read_json(&g)?;
    let model: NoiseModelFile = read_json(&m)?;
    Ok(Calibration { geometry, params: model.params, tv_weight: model.tv_weight })
}

pub fn load_distribution(layout: &Layout) -> CliResult<Option<DistributionFile>> {
    let p = layout.calibration().join(DISTRIBUTION_FILE);
    if p.exists() {
        Ok(Some(read_json(&p)?))
    } else {
        Ok(None)
    }
}
