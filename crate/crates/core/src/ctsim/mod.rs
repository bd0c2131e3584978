//! Physics-based fan-beam CT simulation.

mod attenuation;
mod fbp;
mod geometry;
mod projector;
mod simulate;

pub use attenuation::{attenuation_to_hu, hu_to_attenuation, hu_to_mu, mu_to_hu, AttenuationSlice, MU_WATER};
pub use fbp::filtered_back_project;
pub use geometry::{
    derive_geometry, measure_fov_diameter, GeometryOverrides, ScannerGeometry, DEFAULT_DETECTOR_COUNT,
    DEFAULT_FAN_ANGLE_DEG,
};
pub use projector::{forward_project, projection_angles, Sinogram};
pub use simulate::{
    fov_mask, simulate_slice, simulate_volume, simulate_volume_with_angles, ProjectedSlice, ProjectedVolume,
    DEFAULT_N_THETA,
};
