//! One-to-X relation discovery with word embeddings.
//!
//! A linear map learned from example `(location, group)` pairs projects a
//! location vector into the region where its related entities live. The
//! nearest neighbors of the projection are candidates; a cosine radius
//! learned from the training pairs filters them, so a query may receive zero,
//! one or several answers.

pub mod dataset;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod pca;
pub mod projection;
pub mod relation;
pub mod synthetic;

pub use dataset::{
    compute_stats, frequency_filter, load_relations, DatasetStats, RelationPair, Year, YearlyRelationSet,
};
pub use embedding::{cosine_distance, load_model, normalize_token, EmbeddingModel, Neighbor, Token};
pub use error::{Error, Result};
pub use evaluation::{
    evaluate_year, paired_t_test, run_diachronic, run_recall_at_k, run_synchronic, Algorithm, EvalOptions,
    ExperimentReport, Mode, YearMetrics,
};
pub use projection::{procrustes_align, solve_projection, ProjectionMatrix, TrainingSet};
pub use relation::{compute_radius, Prediction, RelationModel};
