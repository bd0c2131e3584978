//! Severity-laddered artifacts: lower-dose noise, spinal metal implants and
//! rigid motion discontinuities.

mod implant;
mod ladder;
mod motion;
mod pipeline;
mod spine;

pub use implant::{implant_slices, insert_implant, plan_implant, ImplantGeometry, IMPLANT_HU, IMPLANT_MARGIN_MM};
pub use ladder::{
    build_ladder, AugmentKind, AugmentRequest, CaseExtent, LadderConfig, MotionRequest, Placement, SeverityLadder,
};
pub use motion::{apply_motion, rotate_slice, MotionSide};
pub use pipeline::{augment_metal, augment_motion, augment_noise, AugmentedCase, Calibration, CaseAugmenter, Provenance};
pub use spine::{gaussian_smooth, locate_spine, slices_in_range, BONE_HU, SMOOTHING_SIGMA_MM};
