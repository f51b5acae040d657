//! Posterior summaries built from a sample trace: co-clustering similarity,
//! a representative partition by PAM, per-cluster parameter quantiles and
//! predictive draws for pseudo-profiles.

mod pam;
mod predict;
mod similarity;
mod summary;

pub use pam::{average_silhouette, pam, pam_fixed_k, PamFit, Partition};
pub use predict::{predict, selection_probabilities, PredictiveDraw, PseudoProfile};
pub use similarity::{similarity, SimilarityMatrix};
pub use summary::{cluster_summaries, match_clusters, quantile, ClusterSummary, QUANTILE_LEVELS};
