//! Per-case augmentation. The denoised volume, its projections and the
//! baseline re-simulation are computed once and shared by every request.

use serde::{Deserialize, Serialize};

use super::implant::{implant_slices, insert_implant, plan_implant, ImplantGeometry};
use super::ladder::{AugmentKind, AugmentRequest, MotionRequest};
use super::motion::{apply_motion, MotionSide};
use crate::calibration::{search_q0, NoiseModelParams, NoiseProbe};
use crate::ctsim::{simulate_slice, ProjectedVolume, ScannerGeometry};
use crate::error::{Error, Result};
use crate::noise::{decompose, DEFAULT_MAX_ITER};
use crate::parallel;
use crate::seed;
use crate::volume::{AnnotationSet, CtVolume};

/// Everything calibration hands to augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub geometry: ScannerGeometry,
    pub params: NoiseModelParams,
    #[serde(default)]
    pub tv_weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Provenance {
    Noise { target_sd: f64, q0: f64, predicted_sd: f64 },
    Metal { implant: Option<ImplantGeometry>, implant_slices: usize },
    Motion { rotation_deg: f64, discontinuity_z: f64, side: MotionSide, moved_slices: usize },
}

#[derive(Debug, Clone)]
pub struct AugmentedCase {
    pub case_id: String,
    pub kind: AugmentKind,
    pub severity: f64,
    pub volume: CtVolume,
    pub seed: u64,
    pub provenance: Provenance,
}

pub struct CaseAugmenter<'a> {
    case_id: String,
    volume: &'a CtVolume,
    annotation: Option<&'a AnnotationSet>,
    calibration: &'a Calibration,
    seed: u64,
    denoised: Option<CtVolume>,
    projected: Option<ProjectedVolume>,
    baseline: Option<CtVolume>,
    probe: Option<NoiseProbe>,
}

impl<'a> CaseAugmenter<'a> {
    /// `seed` drives every noise realisation of this case; all requests
    /// share it so that severities differ only in the artifact.
    pub fn new(
        case_id: &str,
        volume: &'a CtVolume,
        annotation: Option<&'a AnnotationSet>,
        calibration: &'a Calibration,
        seed: u64,
    ) -> Result<Self> {
        calibration.geometry.validate()?;
        calibration.params.validate()?;
        Ok(CaseAugmenter {
            case_id: case_id.to_string(),
            volume,
            annotation,
            calibration,
            seed,
            denoised: None,
            projected: None,
            baseline: None,
            probe: None,
        })
    }

    pub fn denoised(&mut self) -> Result<&CtVolume> {
        if self.denoised.is_none() {
            let parts = decompose(self.volume, self.calibration.tv_weight, DEFAULT_MAX_ITER, &self.case_id)?;
            self.denoised = Some(parts.denoised);
        }
        Ok(self.denoised.as_ref().expect("set above"))
    }

    fn projected(&mut self) -> Result<&ProjectedVolume> {
        if self.projected.is_none() {
            let n_theta = self.calibration.params.n_theta;
            let geometry = self.calibration.geometry;
            let p = ProjectedVolume::new(self.denoised()?, &geometry, n_theta)?;
            self.projected = Some(p);
        }
        Ok(self.projected.as_ref().expect("set above"))
    }

    /// The denoised volume re-simulated with the calibrated noise model.
    pub fn baseline(&mut self) -> Result<&CtVolume> {
        if self.baseline.is_none() {
            let params = self.calibration.params;
            let seed = self.seed;
            let b = self.projected()?.reconstruct(Some(&params), seed)?;
            self.baseline = Some(b);
        }
        Ok(self.baseline.as_ref().expect("set above"))
    }

    fn probe(&mut self) -> Result<&NoiseProbe> {
        if self.probe.is_none() {
            let k = self.volume.central_slice_index();
            let params = self.calibration.params;
            let seed = seed::derive_index(self.seed, k as u64);
            let slice = self.projected()?.slice(k).clone();
            self.probe = Some(NoiseProbe::from_projected(slice, &params, seed)?);
        }
        Ok(self.probe.as_ref().expect("set above"))
    }

    fn finish(&self, kind: AugmentKind, severity: f64, volume: CtVolume, provenance: Provenance) -> AugmentedCase {
        AugmentedCase { case_id: self.case_id.clone(), kind, severity, volume, seed: self.seed, provenance }
    }

    /// Re-simulates at the flux whose added noise sd is closest to
    /// `target_sd`.
    pub fn noise(&mut self, target_sd: f64) -> Result<AugmentedCase> {
        let tuned = self.calibration.params;
        let probe = self.probe()?;
        let found = search_q0(|q0| probe.noise_sd(q0), tuned.q0, target_sd)?;
        let params = tuned.with_q0(found.q0);
        let seed = self.seed;
        let volume = self.projected()?.reconstruct(Some(&params), seed)?;
        log::info!("{}: noise {target_sd} HU -> Q0 {:.4e} (predicted {:.2} HU)", self.case_id, found.q0, found.noise_sd);
        Ok(self.finish(
            AugmentKind::Noise,
            target_sd,
            volume,
            Provenance::Noise { target_sd, q0: found.q0, predicted_sd: found.noise_sd },
        ))
    }

    /// Inserts a spinal implant of `radius_mm` into the denoised volume and
    /// re-simulates it with the calibrated noise. Radius 0 returns the
    /// baseline re-simulation.
    pub fn metal(&mut self, radius_mm: f64, z_center: Option<f64>) -> Result<AugmentedCase> {
        if radius_mm == 0.0 {
            let b = self.baseline()?.clone();
            return Ok(self.finish(AugmentKind::Metal, 0.0, b, Provenance::Metal { implant: None, implant_slices: 0 }));
        }
        let annotation = self.annotation.ok_or_else(|| Error::Annotation("metal augmentation needs an annotation".into()))?;
        let implant = plan_implant(self.volume, annotation, radius_mm, z_center)?;
        let implanted = insert_implant(self.denoised()?, &implant)?;
        let slices = implant_slices(&implanted, &implant);
        let mut out = self.baseline()?.clone();
        let cal = self.calibration;
        let seed = self.seed;
        let fill = implanted.outside_fov_value();
        let sims = parallel::map_slice(&slices, |&k| {
            simulate_slice(
                implanted.slice(k),
                implanted.pixel_size(),
                &cal.geometry,
                cal.params.n_theta,
                Some(&cal.params),
                seed::derive_index(seed, k as u64),
                fill,
            )
        });
        for (&k, s) in slices.iter().zip(sims) {
            out.set_slice(k, &s?);
        }
        Ok(self.finish(
            AugmentKind::Metal,
            radius_mm,
            out,
            Provenance::Metal { implant: Some(implant), implant_slices: slices.len() },
        ))
    }

    /// Rotates the source slices on one side of the discontinuity; nothing
    /// is re-simulated.
    pub fn motion(&mut self, kind: AugmentKind, severity: f64, motion: MotionRequest) -> Result<AugmentedCase> {
        let (volume, moved) = apply_motion(self.volume, motion.rotation_deg, motion.discontinuity_z, motion.side)?;
        Ok(self.finish(
            kind,
            severity,
            volume,
            Provenance::Motion {
                rotation_deg: motion.rotation_deg,
                discontinuity_z: motion.discontinuity_z,
                side: motion.side,
                moved_slices: moved,
            },
        ))
    }

    pub fn apply(&mut self, request: &AugmentRequest) -> Result<AugmentedCase> {
        match request.kind {
            AugmentKind::Noise => self.noise(request.severity),
            AugmentKind::Metal => self.metal(request.severity, request.implant_z_center),
            AugmentKind::MotionMag | AugmentKind::MotionPrx => {
                let motion = request
                    .motion
                    .ok_or_else(|| Error::InvalidParameter("motion request without placement".into()))?;
                self.motion(request.kind, request.severity, motion)
            }
        }
    }
}

/// Denoises, finds the flux for `target_sd`, and re-simulates.
pub fn augment_noise(
    volume: &CtVolume,
    geometry: &ScannerGeometry,
    params: &NoiseModelParams,
    target_sd: f64,
    seed: u64,
) -> Result<AugmentedCase> {
    let cal = Calibration { geometry: *geometry, params: *params, tv_weight: None };
    CaseAugmenter::new("case", volume, None, &cal, seed)?.noise(target_sd)
}

pub fn augment_metal(
    volume: &CtVolume,
    annotation: &AnnotationSet,
    geometry: &ScannerGeometry,
    params: &NoiseModelParams,
    radius_mm: f64,
    seed: u64,
) -> Result<AugmentedCase> {
    let cal = Calibration { geometry: *geometry, params: *params, tv_weight: None };
    CaseAugmenter::new("case", volume, Some(annotation), &cal, seed)?.metal(radius_mm, None)
}

pub fn augment_motion(
    volume: &CtVolume,
    rotation_deg: f64,
    discontinuity_z: f64,
    side: MotionSide,
) -> Result<AugmentedCase> {
    let (out, moved) = apply_motion(volume, rotation_deg, discontinuity_z, side)?;
    Ok(AugmentedCase {
        case_id: "case".into(),
        kind: AugmentKind::MotionMag,
        severity: rotation_deg,
        volume: out,
        seed: 0,
        provenance: Provenance::Motion { rotation_deg, discontinuity_z, side, moved_slices: moved },
    })
}
