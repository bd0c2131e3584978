//! Noise-model tuning, flux search for target noise levels, and empirical
//! severity weights.

mod distribution;
mod noise_model;
mod target;
mod tune;

pub use distribution::{
    dataset_noise_distribution, empirical_weights, fit_tail, DistributionOptions, LevelWeight, NoiseDistribution,
    TailFamily, TailFit, RECOMMENDED_CASES, WEIGHT_CUTOFF,
};
pub use noise_model::{add_sinogram_noise, NoiseModelParams};
pub use target::{find_q0_for_target_sd, search as search_q0, NoiseProbe, Q0Candidate, Q0Search, Q0_FLOOR, Q0_LADDER};
pub use tune::{grid_closure, tune_noise_model, GridEvaluation, TuningGrid, TuningOptions, TuningOutcome};
