//! Core engine for keyword search over a social graph.
//!
//! Postings are indexed both by their text tokens and by the social edges
//! they carry (author, involved people, containing group or page). A keyword
//! query is rewritten into a boolean s-expression that restricts retrieval to
//! the searcher's scored connections, and the retrieved postings are ordered
//! by a two-tower click model that combines personalization features with
//! learned n-gram text similarity.
//!
//! Module map:
//! - [`graph`]: typed social graph, connection sets, social features
//! - [`index`]: prefixed-term inverted index with corpus statistics
//! - [`query`]: s-expression parser and cost-accounted boolean executor
//! - [`rewriter`]: per-prefix linear scoring, threshold sweeps, query rewriting
//! - [`ranker`]: two-tower neural network, BM25/TF-IDF features, training
//! - [`eval`]: ROC-AUC/NDCG, synthetic corpus generator, ablation harness

pub mod binio;
pub mod eval;
pub mod graph;
pub mod index;
pub mod query;
pub mod ranker;
pub mod rewriter;

pub use graph::{
    Edge, EdgeKind, InteractionRecord, NodeId, NodeKind, PostingContainer, PostingDoc,
    SocialFeatureVector, SocialGraph,
};
pub use index::{InvertedIndex, Term, TermPrefix};
pub use query::{CostReport, ExecutionResult, SExpr};
pub use rewriter::{GroundTruthRow, LinearWeights, PerPrefix, PrefixClass, RewriteModel};
