//! Hand-tuned ranking features.
//!
//! Dense CTR features describe the searcher-document relationship (is the
//! author a friend, has the searcher seen it, counts under ln(1+x)); sparse
//! features are the searcher's region and city ids; the lexical TR features
//! are BM25, mean tf-idf, and the normalized position of the last query
//! token match.

use crate::graph::{NodeId, PostingContainer, PostingDoc, SocialGraph, RECENT_WINDOW_SECS};
use crate::graph::EdgeKind;
use crate::index::{tokenize, InvertedIndex, Term};

/// Fixed-order dense feature vector:
/// 0 authored by searcher, 1 from a friend, 2 from a joined group,
/// 3 from a followed page, 4 recently seen, 5 ln(1+serp clicks),
/// 6 has photo, 7 ln(1+age seconds), 8 ln(1+comments),
/// 9 ln(1+friends), 10 ln(1+followees), 11 ln(1+searcher impressions).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenseFeatures(pub [f64; 12]);

impl DenseFeatures {
    pub const DIM: usize = 12;
}

/// Sparse categorical ids of the searcher; `None` means unknown.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SparseFeatures {
    pub region_id: Option<u32>,
    pub city_id: Option<u32>,
}

/// Classic lexical relevance features between a query and a document.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TRDenseFeatures {
    pub bm25: f64,
    pub avg_tfidf: f64,
    /// Position of the last matched query token divided by the document
    /// token count; 1.0 when nothing matches.
    pub last_match_pos: f64,
}

impl TRDenseFeatures {
    pub const DIM: usize = 3;

    pub fn as_array(&self) -> [f64; 3] {
        [self.bm25, self.avg_tfidf, self.last_match_pos]
    }
}

/// One displayed result with its features and click label. Records sharing
/// a session id belong to the same results page.
#[derive(Debug, Clone, PartialEq)]
pub struct ClickRecord {
    pub session_id: u64,
    pub query: String,
    pub doc_id: NodeId,
    pub doc_title: String,
    pub doc_body: String,
    pub dense: DenseFeatures,
    pub sparse: SparseFeatures,
    pub tr_dense: TRDenseFeatures,
    pub label: u8,
}

fn ln1p(x: f64) -> f64 {
    x.ln_1p()
}

/// Builds the 12 dense CTR features for (searcher, doc) at time `now`.
pub fn dense_features(
    g: &SocialGraph,
    searcher: NodeId,
    doc: &PostingDoc,
    now: u64,
) -> DenseFeatures {
    let authored = doc.author == searcher;
    let from_friend = g.has_edge(searcher, doc.author, EdgeKind::FriendOf);
    let (from_group, from_page) = match doc.container {
        Some(PostingContainer::Group(gid)) => {
            (g.has_edge(searcher, gid, EdgeKind::MemberOf), false)
        }
        Some(PostingContainer::Page(pid)) => {
            (false, g.has_edge(searcher, pid, EdgeKind::Follows))
        }
        None => (false, false),
    };
    let recently_seen = g
        .last_seen(searcher, doc.id)
        .is_some_and(|t| now.saturating_sub(t) <= RECENT_WINDOW_SECS);
    DenseFeatures([
        authored as u8 as f64,
        from_friend as u8 as f64,
        from_group as u8 as f64,
        from_page as u8 as f64,
        recently_seen as u8 as f64,
        ln1p(doc.serp_click_count as f64),
        doc.has_photo as u8 as f64,
        ln1p(now.saturating_sub(doc.created_time) as f64),
        ln1p(doc.comment_count as f64),
        ln1p(g.friend_count(searcher) as f64),
        ln1p(g.followee_count(searcher) as f64),
        ln1p(g.impression_count(searcher) as f64),
    ])
}

pub fn sparse_features(g: &SocialGraph, searcher: NodeId) -> SparseFeatures {
    match g.profile(searcher) {
        Some(p) => SparseFeatures {
            region_id: Some(p.region_id),
            city_id: Some(p.city_id),
        },
        None => SparseFeatures::default(),
    }
}

const BM25_K1: f64 = 1.2;
const BM25_B: f64 = 0.75;

/// Computes BM25, mean tf-idf, and last-match position against the index's
/// corpus statistics. Title and body count as one token stream.
pub fn tr_dense(idx: &InvertedIndex, query: &str, doc: &PostingDoc) -> TRDenseFeatures {
    let query_tokens = tokenize(query);
    let doc_tokens: Vec<String> = tokenize(&doc.title)
        .into_iter()
        .chain(tokenize(&doc.body))
        .collect();
    let n = idx.doc_count() as f64;
    let dl = doc_tokens.len() as f64;
    let avgdl = idx.avgdl();

    let mut bm25 = 0.0;
    let mut tfidf_sum = 0.0;
    let mut last_match = None;
    for q in &query_tokens {
        let tf = doc_tokens.iter().filter(|t| *t == q).count() as f64;
        let df = idx.df(&Term::Text(q.clone())) as f64;
        if tf > 0.0 {
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            let norm = if avgdl > 0.0 { dl / avgdl } else { 0.0 };
            bm25 += idf * (tf * (BM25_K1 + 1.0)) / (tf + BM25_K1 * (1.0 - BM25_B + BM25_B * norm));
        }
        if df > 0.0 && tf > 0.0 {
            tfidf_sum += tf * (n / df).ln();
        }
        if let Some(pos) = doc_tokens.iter().rposition(|t| t == q) {
            last_match = Some(last_match.map_or(pos, |m: usize| m.max(pos)));
        }
    }
    let avg_tfidf = if query_tokens.is_empty() {
        0.0
    } else {
        tfidf_sum / query_tokens.len() as f64
    };
    let last_match_pos = match last_match {
        Some(pos) if dl > 0.0 => (pos + 1) as f64 / dl,
        _ => 1.0,
    };
    TRDenseFeatures {
        bm25,
        avg_tfidf,
        last_match_pos,
    }
}

/// Assembles a full click record (label 0 until the caller sets it).
pub fn featurize(
    g: &SocialGraph,
    idx: &InvertedIndex,
    query: &str,
    searcher: NodeId,
    doc: &PostingDoc,
    now: u64,
    session_id: u64,
) -> ClickRecord {
    ClickRecord {
        session_id,
        query: query.to_string(),
        doc_id: doc.id,
        doc_title: doc.title.clone(),
        doc_body: doc.body.clone(),
        dense: dense_features(g, searcher, doc, now),
        sparse: sparse_features(g, searcher),
        tr_dense: tr_dense(idx, query, doc),
        label: 0,
    }
}
