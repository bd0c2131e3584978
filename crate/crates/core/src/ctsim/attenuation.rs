//! Hounsfield units to linear attenuation and back.

use ndarray::{Array2, ArrayView2};

/// Linear attenuation of water at 120 kVp, cm⁻¹.
pub const MU_WATER: f64 = 0.18;

/// Attenuation image in cm⁻¹ on a pixel grid of `pixel_size` mm.
///
/// Converted images are clamped at zero; reconstructions are not, so that
/// noise around air stays symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct AttenuationSlice {
    pub values: Array2<f32>,
    /// `(x, y)` mm.
    pub pixel_size: [f64; 2],
}

pub fn hu_to_mu(hu: f64) -> f64 {
    (hu / 1000.0 * MU_WATER + MU_WATER).max(0.0)
}

pub fn mu_to_hu(mu: f64) -> f64 {
    1000.0 * (mu - MU_WATER) / MU_WATER
}

pub fn hu_to_attenuation(slice: ArrayView2<'_, f32>, pixel_size: [f64; 2]) -> AttenuationSlice {
    AttenuationSlice { values: slice.mapv(|v| hu_to_mu(v as f64) as f32), pixel_size }
}

pub fn attenuation_to_hu(slice: &AttenuationSlice) -> Array2<f32> {
    slice.values.mapv(|m| mu_to_hu(m as f64) as f32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_points() {
        assert!((hu_to_mu(0.0) - 0.18).abs() < 1e-12);
        assert_eq!(hu_to_mu(-1000.0), 0.0);
        assert!((hu_to_mu(20000.0) - 3.78).abs() < 1e-12);
        assert_eq!(hu_to_mu(-2048.0), 0.0);
        assert!(mu_to_hu(0.18).abs() < 1e-9);
        assert!((mu_to_hu(0.0) + 1000.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn round_trip_on_valid_range(hu in -1000.0f64..3000.0) {
            prop_assert!((mu_to_hu(hu_to_mu(hu)) - hu).abs() < 1e-3);
        }

        #[test]
        fn slice_round_trip(hu in -1000.0f32..3000.0) {
            let a = ndarray::Array2::from_elem((8, 8), hu);
            let back = attenuation_to_hu(&hu_to_attenuation(a.view(), [1.0, 1.0]));
            prop_assert!(back.iter().all(|v| (v - hu).abs() < 1e-3));
        }
    }
}
