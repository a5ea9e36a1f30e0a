//! Click-through ranking with a two-tower neural network.
//!
//! The textual-relevance tower embeds hashed query and document n-gram bags
//! and reduces them to 8 cosine similarities. The CTR tower runs hand-tuned
//! dense features (plus optionally the classic lexical features) through a
//! small MLP and looks up sparse region/city embeddings. The concatenation
//! feeds a factorization-machine scoring head trained on click labels with
//! binary cross-entropy.

mod checkpoint;
mod features;
mod model;
mod ngram;
mod train;

pub use checkpoint::CheckpointError;
pub use features::{
    dense_features, featurize, sparse_features, tr_dense, ClickRecord, DenseFeatures,
    SparseFeatures, TRDenseFeatures,
};
pub use model::{
    draw_dropout_masks, fm_second_order, prepare_records, AblationSetting, BnMode, DropoutMasks,
    GradBlock, Gradients, PreparedRecord, TwoTowerModel, CTR_HIDDEN, CTR_OUT, DROPOUT_P,
    FM_FACTOR_DIM, HEAD_HIDDEN1, HEAD_HIDDEN2, NGRAM_COS_DIM,
};
pub use ngram::{
    embed_bag, fnv1a64, hash_bag, ngrams, sparse_bucket, Embedding, HashedBag, NGramBag,
    SPARSE_BUCKETS, SPARSE_DIM, TEXT_BUCKETS, TEXT_DIM,
};
pub use train::{train, TrainConfig, TrainError, TrainReport};

use crate::graph::{NodeId, PostingDoc, SocialGraph};
use crate::index::InvertedIndex;

/// Scores and orders retrieved postings by descending click probability,
/// breaking ties by ascending doc id.
pub fn rank(
    model: &TwoTowerModel,
    idx: &InvertedIndex,
    g: &SocialGraph,
    query: &str,
    searcher: NodeId,
    docs: &[&PostingDoc],
    now: u64,
) -> Vec<(NodeId, f64)> {
    let records: Vec<ClickRecord> = docs
        .iter()
        .map(|d| featurize(g, idx, query, searcher, d, now, 0))
        .collect();
    let scores = model.predict_batch(&records);
    let mut out: Vec<(NodeId, f64)> = docs
        .iter()
        .map(|d| d.id)
        .zip(scores)
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}
