//! External model invocation over a file-exchange protocol.
//!
//! A model is any shell command containing `{input}` and `{output}`. The
//! input is a volume file; the model writes either an integer label map
//! (segmentation) or a box CSV/JSON (detection) to the output path. Exit code
//! 0 means success.

mod boxes;
mod run;

pub use boxes::{connected_components, label_components, seg_to_boxes, Component, MIN_COMPONENT_MM3};
pub use run::{run_model, shell_quote, ModelOutput, ModelSpec};
