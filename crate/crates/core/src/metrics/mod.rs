//! Segmentation and detection accuracy, and weighted degradation scores.

mod detection;
mod degradation;

pub use degradation::{
    degradation_mean, degradation_sd, geometric_weights, mean_sd, score_degradation, CaseMetric, DegradationScore,
    MetricName, Severity, SeverityStats, Weighting,
};
pub use detection::{average_precision, iou, mean_ap, DEFAULT_IOU_THRESHOLDS};

use ndarray::ArrayView3;

use crate::error::{Error, Result};

/// Dice coefficient of the nonzero voxels of two congruent label grids.
/// Two empty masks agree perfectly.
pub fn dice(truth: ArrayView3<'_, u32>, pred: ArrayView3<'_, u32>) -> Result<f64> {
    if truth.dim() != pred.dim() {
        return Err(Error::ShapeMismatch(format!("dice: {:?} vs {:?}", truth.dim(), pred.dim())));
    }
    let (mut a, mut b, mut both) = (0usize, 0usize, 0usize);
    for (&t, &p) in truth.iter().zip(pred.iter()) {
        a += (t != 0) as usize;
        b += (p != 0) as usize;
        both += (t != 0 && p != 0) as usize;
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (a + b) as f64)
}
