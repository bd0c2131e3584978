//! Configuration-driven pipeline around the `ctrobust` library: calibrate
//! the simulator on a dataset, generate augmentation ladders, run models on
//! every volume and report degradation scores.

pub mod augment;
pub mod calibrate;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod output;
pub mod phantom;
pub mod plot;
pub mod pool;
pub mod report;
pub mod stub;

pub use config::RunConfig;
pub use error::{CliError, CliResult};

/// How a stage ended when nothing fatal happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Complete,
    /// This many cases or jobs failed; the rest of the stage completed.
    Partial(usize),
}

impl Outcome {
    pub fn from_failures(n: usize) -> Self {
        if n == 0 {
            Outcome::Complete
        } else {
            Outcome::Partial(n)
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Complete => 0,
            Outcome::Partial(_) => 3,
        }
    }
}
