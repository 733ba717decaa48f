//! Vertex-to-graph matching: embeddings, the block bilinear discriminator,
//! the training loss, match scores and decisions, training, evaluation and
//! ablation variants.

mod disc;
mod loss;
mod metrics;
mod model;
mod train;

pub use disc::{cosine_score, l2_score, DiscKind, DiscriminatorParams, FeaturePair, Variant};
pub use loss::{loss_from_scores, loss_value};
pub use metrics::{compute_metrics, roc_auc, Metrics, METRICS_CSV_HEADER};
pub use model::{EmbeddingBundle, Embedded, MatchModel, MatchResult, ModelConfig, Prepared, DEFAULT_CLAMP};
pub use train::{evaluate, mean_loss, train, TrainConfig, TrainReport};

/// A scorer for one ablation cell: `base`'s featurizer and GNN weights with
/// the requested feature pair and discriminator.
pub fn ablation_variant(base: &MatchModel, variant: &str) -> crate::Result<MatchModel> {
    base.with_variant(variant.parse()?)
}
