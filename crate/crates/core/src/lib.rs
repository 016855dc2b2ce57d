//! Trajectory stitching for diffusion samplers at desk scale.
//!
//! Denoisers of different cost share one sampling trajectory: a cheap model
//! handles the high-noise steps and an expensive one finishes the low-noise
//! steps. The crate provides the noise ladders, analytic and trained
//! denoisers, samplers, schedule partitioning, budget allocation, the
//! similarity and spectrum analyses, and sample-quality metrics.

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocator;
pub mod analysis;
pub mod data;
pub mod denoiser;
pub mod error;
pub mod experiment;
pub mod latent;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod stitch;

pub use denoiser::{
    degrade_oracle, degrade_oracle_with_scale, evaluate, DegradeMode, Denoiser, DenoiserKind, EvalLedger,
    GmmParams, TrainingConfig,
};
pub use error::{Error, Result};
pub use latent::LatentState;
pub use schedule::{cfg_combine, perturb, score_from_denoiser, GuidanceSpec, NoiseSchedule, ScheduleKind};
pub use stitch::{enumerate_configs, partition_steps, StepPartition, StitchSchedule};
