//! A threshold "model" for exercising the pipeline without a trained
//! network: voxels above a HU threshold, split into connected components,
//! keeping components small enough to be lesions rather than the body.

use std::path::Path;

use ctrobust::gateway::{connected_components, label_components, seg_to_boxes, MIN_COMPONENT_MM3};
use ctrobust::io::{load_volume, save_labels, write_box_csv};
use ctrobust::{AnnotationKind, CtVolume, LabelVolume};
use ndarray::Array3;

use crate::error::CliResult;

#[derive(Debug, Clone, PartialEq)]
pub struct StubOptions {
    pub task: AnnotationKind,
    pub threshold_hu: f32,
    /// Components larger than this are dropped, mm³.
    pub max_component_mm3: f64,
    /// Confidence for every box; size-based when absent.
    pub fixed_confidence: Option<f64>,
}

impl Default for StubOptions {
    fn default() -> Self {
        StubOptions {
            task: AnnotationKind::Segmentation,
            threshold_hu: -400.0,
            max_component_mm3: 50_000.0,
            fixed_confidence: None,
        }
    }
}

/// Label map (1 for kept voxels) of the thresholded volume.
pub fn segment(volume: &CtVolume, options: &StubOptions) -> CliResult<LabelVolume> {
    let [sx, sy, sz] = volume.spacing();
    let voxel_mm3 = sx * sy * sz;
    let mask = volume.voxels().mapv(|v| u32::from(v > options.threshold_hu));
    let (ids, comps) = label_components(mask.view());
    let keep: Vec<bool> = comps.iter().map(|c| c.voxels as f64 * voxel_mm3 <= options.max_component_mm3).collect();
    let labels: Array3<u32> = ids.mapv(|id| u32::from(id != 0 && keep[id as usize - 1]));
    Ok(LabelVolume::new(labels, volume.spacing(), volume.origin())?)
}

pub fn run(input: &Path, output: &Path, options: &StubOptions) -> CliResult<()> {
    let volume = load_volume(input)?;
    let seg = segment(&volume, options)?;
    match options.task {
        AnnotationKind::Segmentation => save_labels(&seg, output)?,
        AnnotationKind::Detection => {
            let [sx, sy, sz] = seg.spacing;
            let sizes: Vec<usize> = connected_components(seg.labels.view())
                .into_iter()
                .filter(|c| c.voxels as f64 * sx * sy * sz > MIN_COMPONENT_MM3)
                .map(|c| c.voxels)
                .collect();
            let mut boxes = seg_to_boxes(&seg);
            for (b, n) in boxes.iter_mut().zip(sizes) {
                b.confidence = options.fixed_confidence.unwrap_or(1.0 - (-(n as f64) / 10.0).exp());
            }
            write_box_csv(output, &boxes)?;
        }
    }
    Ok(())
}
