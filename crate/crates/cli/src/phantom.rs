//! `phantom`: a small synthetic dataset with known nodules, re-simulated
//! through the scanner model so it carries realistic noise texture.

use std::path::{Path, PathBuf};

use ctrobust::calibration::NoiseModelParams;
use ctrobust::ctsim::{derive_geometry, simulate_volume, GeometryOverrides};
use ctrobust::io::{file_checksum, save_labels, save_volume, write_detection_csv, CaseEntry, DatasetManifest};
use ctrobust::phantom::{body_phantom, nodule_boxes, Nodule, PhantomSpec};
use ctrobust::{seed, AnnotationKind};
use rand::Rng;

use crate::error::CliResult;
use crate::output::{ensure_dir, write_json};

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomOptions {
    pub cases: usize,
    pub size: usize,
    pub pixel_mm: f64,
    pub slices: usize,
    pub slice_mm: f64,
    pub annotation: AnnotationKind,
    /// Volume file extension, `.nii.gz` or `.mha`.
    pub extension: String,
    pub params: NoiseModelParams,
    pub geometry: GeometryOverrides,
    pub seed: u64,
}

impl Default for PhantomOptions {
    fn default() -> Self {
        PhantomOptions {
            cases: 5,
            size: 128,
            pixel_mm: 3.0,
            slices: 12,
            slice_mm: 5.0,
            annotation: AnnotationKind::Segmentation,
            extension: ".nii.gz".into(),
            params: NoiseModelParams { q0: 1e6, sigma: 0.0, n_theta: 2160 },
            geometry: GeometryOverrides::default(),
            seed: 0,
        }
    }
}

/// One or two nodules per case, placed inside the lungs.
fn case_spec(options: &PhantomOptions, index: usize) -> PhantomSpec {
    let mut rng = seed::rng(seed::derive(options.seed, &["phantom", &index.to_string()]));
    let mut spec = PhantomSpec::new(options.size, options.pixel_mm, options.slices, options.slice_mm);
    let r = spec.fov_radius();
    let z_lo = options.slices as f64 * options.slice_mm * 0.3;
    let z_hi = options.slices as f64 * options.slice_mm * 0.7;
    let n = if rng.random_bool(0.5) { 2 } else { 1 };
    for side in [-1.0, 1.0].into_iter().take(n) {
        spec.nodules.push(Nodule {
            center: [
                side * 0.36 * r + rng.random_range(-0.08..0.08) * r,
                -0.05 * r + rng.random_range(-0.15..0.15) * r,
                rng.random_range(z_lo..z_hi),
            ],
            radius: rng.random_range(6.0..11.0),
            hu: 60.0,
        });
    }
    spec
}

fn relative(p: &Path, base: &Path) -> PathBuf {
    p.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf())
}

/// Writes the cases and `manifest.json` into `out`; returns the manifest
/// path.
pub fn generate(out: &Path, options: &PhantomOptions) -> CliResult<PathBuf> {
    ensure_dir(out)?;
    let d_fov = options.size as f64 * options.pixel_mm;
    let geometry = derive_geometry(d_fov, options.geometry)?;
    let mut cases = Vec::new();
    for i in 0..options.cases {
        let case_id = format!("case_{i:03}");
        let spec = case_spec(options, i);
        let (clean, labels) = body_phantom(&spec)?;
        let noisy = simulate_volume(&clean, &geometry, Some(&options.params), seed::derive(options.seed, &["simulate", &case_id]))?;
        let volume_path = out.join(format!("{case_id}{}", options.extension));
        save_volume(&noisy, &volume_path)?;
        let annotation_path = match options.annotation {
            AnnotationKind::Segmentation => {
                let p = out.join(format!("{case_id}_seg{}", options.extension));
                save_labels(&labels, &p)?;
                p
            }
            AnnotationKind::Detection => {
                let p = out.join(format!("{case_id}_boxes.csv"));
                let rows: Vec<_> = nodule_boxes(&spec)?.into_iter().map(|b| (case_id.clone(), b)).collect();
                write_detection_csv(&p, &rows)?;
                p
            }
        };
        log::info!("{case_id}: {} nodule(s)", spec.nodules.len());
        cases.push(CaseEntry {
            case_id,
            volume_path: relative(&volume_path, out),
            annotation_path: Some(relative(&annotation_path, out)),
            annotation_kind: Some(options.annotation),
            volume_sha256: Some(file_checksum(&volume_path)?),
            annotation_sha256: Some(file_checksum(&annotation_path)?),
        });
    }
    let manifest = DatasetManifest {
        provenance: format!(
            "synthetic body phantom, seed {}, q0={:e} sigma={} n_theta={}",
            options.seed, options.params.q0, options.params.sigma, options.params.n_theta
        ),
        cases,
    };
    let path = out.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}
