//! Synthetic data with known ground truth, and independent oracles used to
//! check the sampler.

mod enumerate;
pub mod stats;
mod synth;

pub use enumerate::{enumerate_posterior, set_partitions, EnumerationGrid, PartitionPosterior};
pub use synth::{generate, grid_edges, GraphKind, SynthData, SynthSpec};
