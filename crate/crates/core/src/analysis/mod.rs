//! Diagnostics over sampled trajectories and sweep results.

pub mod pareto;
pub mod similarity;
pub mod spectrum;

pub use pareto::{pareto_frontier, write_pareto_csv, ParetoPoint};
pub use similarity::{trajectory_similarity, Operand, SimilarityProfile, StepSimilarity};
pub use spectrum::{latent_spectrum, spectrum_profile, LatentSpectrum, SpectrumProfile, SpectrumStep};
