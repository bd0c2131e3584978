//! Physics-based CT augmentation and robustness scoring for black-box
//! segmentation and detection models.

pub mod augment;
pub mod calibration;
pub mod ctsim;
pub mod error;
pub mod gateway;
pub mod io;
pub mod metrics;
pub mod noise;
pub mod parallel;
pub mod phantom;
pub mod seed;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{AnnotationKind, AnnotationSet, Box3, CtVolume, LabelVolume};
