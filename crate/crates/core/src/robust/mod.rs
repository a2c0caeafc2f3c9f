//! Defensive aggregation: layer-wise projection of encrypted updates onto the
//! global model, K-Means over the projection vectors, and rejection of the
//! cluster least aligned with its own centroid.

pub mod filter;
pub mod kmeans;
pub mod projection;

pub use filter::{cosine_similarity, filter_clusters, filter_clusters_with, select_and_weight, ClusterReport, FilterRule};
pub use kmeans::{assignment_agreement, kmeans, KMeansResult};
pub use projection::{layer_norm, project_layer, project_layer_plain, ProjectionVector};

use crate::error::Result;

/// Cluster the projection vectors and reject the least coherent cluster.
pub fn detect(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize, rule: FilterRule) -> Result<ClusterReport> {
    let km = kmeans(points, k, seed, max_iter)?;
    Ok(filter_clusters_with(points, &km.assignments, &km.centroids, rule))
}
