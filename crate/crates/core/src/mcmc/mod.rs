//! Blocked Gibbs / Metropolis sampler for the truncated Dirichlet process
//! mixture with an ICAR spatial term.
//!
//! One sweep updates, in order: allocations, sticks and α (with the tail of the
//! stick sequence regenerated), Φ and θ per cluster, β, τ_Y, the spatial field
//! u, τ, and finally a label-swap move.

mod chain;
mod prior;
mod sampler;
mod state;

pub use chain::{run_chain, run_chain_stream, ChainStats, SampleTrace, Schedule, TraceCluster, TraceSample};
pub use prior::{draw_prior_state, simulate_observations};
pub use sampler::{
    allocation_probabilities, occupancy_order, sample_allocations, swap_labels, MoveCounts, Sampler,
};
pub use state::{
    check_invariants, data_log_likelihood, extend_truncation, init_state, joint_log_density,
    log_density_with_lambda, sample_alpha, sample_sticks, stick_breaking, Cluster, McmcState,
    MAX_STICKS, RESIDUAL_MASS, STICK_EPS,
};
