//! Noise extraction by total-variation denoising, and patchwise radial noise
//! power spectra.

mod extract;
mod nps;
mod tv;

pub use extract::{
    central_noise_sd, decompose, default_tv_weight, estimate_noise_sd, extract_noise, noise_sd, Decomposition, NoiseField,
    MASK_MARGIN_PX,
};
pub use nps::{grid_nps, max_power, msse_nps, normalize, radial_nps, write_nps_csv, NpsCurve, GRID_CELLS};
pub use tv::{total_variation, tv_denoise, DEFAULT_MAX_ITER};
