//! Class-anchored binary hashing with a zero-shot extension to unseen classes.
//!
//! Training learns one anchor per seen class with a label-penalized k-means,
//! embeds the anchors into a `b`-dimensional manifold space and hashes any
//! instance inductively as the sign of a sharpened weighted average of anchor
//! embeddings. Classes without training images are added afterwards from
//! their attribute signatures: a closed-form bilinear attribute predictor
//! scores unseen-class membership, and synthesized anchors give the codes.
//!
//! The crate is organized by pipeline stage:
//!
//! - [`dataset`]: feature, label and signature ingestion, splits, synthetic data
//! - [`anchors`]: penalized k-means and anchor-to-class matching
//! - [`embedding`]: Kernel-PCA, Isomap and LLE anchor embedders
//! - [`hashing`]: inductive embedding and binarization of seen-class instances
//! - [`zsl`]: attribute predictor, unseen anchors, unseen-class hashing
//! - [`eval`]: Hamming lookup metrics, MAP, anchor-assignment accuracy
//! - [`pipeline`]: configuration, training, persistence and experiments

pub mod anchors;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod hashing;
pub mod io;
pub mod linalg;
pub mod pipeline;
pub mod zsl;

pub use anchors::{assign_anchors_to_classes, class_means, penalized_kmeans, AnchorSet, KMeansParams};
pub use dataset::{
    generate_synthetic, load_dataset, split_query_database, split_seen_unseen, DatasetBundle,
    FeatureMatrix, LabelVector, SeenUnseenSplit, SignatureMatrix, SyntheticParams,
};
pub use embedding::{embed_anchors, AnchorEmbedding, Bandwidth, EmbedderKind, EmbedderSpec};
pub use error::{Error, Result};
pub use eval::{
    anchor_assignment_accuracy, hamming_distance, lookup_metrics, mean_average_precision,
    radius_lookup, AccuracyReport, RetrievalMetrics,
};
pub use hashing::{binarize, HashCode, HashCodeSet, HashParams, Sigma};
pub use pipeline::{run_experiment, train, ExperimentConfig, TrainedModel};
pub use zsl::{fit_eszsl, ExtendedAnchorSet, ZslHyperparams, ZslModel};
