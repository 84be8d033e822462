//! k-means, cluster indicator encodings and partition-quality metrics.

mod indicator;
mod kmeans;
mod metrics;

pub use indicator::{to_vigorous, ClusterIndicator, VigorousIndicator};
pub use kmeans::{kmeans, kmeans_fit, KMeansFit, KMeansOptions, DEFAULT_RESTARTS, MAX_LLOYD_ITERS};
pub use metrics::{
    adjusted_mutual_info, adjusted_rand_index, best_label_map, evaluate_partition,
    normalized_mutual_info, rand_index, silhouette, Contingency, PartitionMetrics,
};
