//! Approximate Shapley values: stratified sampling and load-profile
//! clustering with per-customer apportionment.

pub mod clustering;
pub mod kmeans;
pub mod sampling;

pub use clustering::{
    apportionment_vector, clustering_runs, fold_runs, shapley_clustering, MonteCarloConfig, RunAllocation,
};
pub use kmeans::{build_cluster_model, ClusterModel, MAX_CLUSTERS};
pub use sampling::{optimal_sample_size, shapley_sampling, SamplingConfig, SAMPLING_CAP};
