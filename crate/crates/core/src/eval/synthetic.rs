//! Seeded synthetic social network, corpus, and click traffic.
//!
//! The generator builds a graph of persons, groups, and pages, writes
//! topical postings, then simulates search sessions end to end: the query
//! runs through the real social rewrite and index execution, the displayed
//! results are drawn from a hidden click model, and the clicks feed back
//! into impression and click counters exactly as logged traffic would.
//! All randomness comes from one seeded stream, so a config maps to one
//! reproducible dataset.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::graph::{
    EdgeKind, GraphError, InteractionRecord, NodeId, NodeKind, PersonProfile, PostingContainer,
    PostingDoc, SocialGraph, RECENT_WINDOW_SECS,
};
use crate::index::{tokenize, InvertedIndex, Term};
use crate::query::{execute, SExpr};
use crate::ranker::{featurize, tr_dense, ClickRecord};
use crate::rewriter::{candidates, rewrite, GroundTruthRow, RewriteError, RewriteModel};

/// Knobs of the synthetic world. The click model is
/// `p = sigmoid(text_weight*(match-0.5) + social_weight*(affinity-0.5) + noise*eps)`,
/// so zero weights and zero noise give exactly even odds.
#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub persons: usize,
    pub groups: usize,
    pub pages: usize,
    pub postings: usize,
    pub sessions: usize,
    pub results_per_session: usize,
    /// Vocabulary size per topic. Larger values make exact keyword matches
    /// scarcer, so displayed slates mix full and partial text matches.
    pub words_per_topic: usize,
    pub text_weight: f64,
    pub social_weight: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> SyntheticConfig {
        SyntheticConfig {
            persons: 2_000,
            groups: 200,
            pages: 200,
            postings: 50_000,
            sessions: 20_000,
            results_per_session: 10,
            words_per_topic: 60,
            text_weight: 4.0,
            social_weight: 4.5,
            noise: 0.7,
            seed: 0,
        }
    }
}

/// Everything one simulation produces.
pub struct SyntheticData {
    pub graph: SocialGraph,
    pub index: InvertedIndex,
    /// Displayed results with features and click labels, session-ordered.
    pub records: Vec<ClickRecord>,
    /// Hidden click-model affinity per record, kept for evaluation only;
    /// nothing in the retrieval or ranking path may read it.
    pub oracle_affinity: Vec<f64>,
    /// Labeled (searcher, connection) examples for the rewrite policy.
    pub ground_truth: Vec<GroundTruthRow>,
    /// One (searcher, keyword expression) pair per emitted session.
    pub workload: Vec<(NodeId, SExpr)>,
    pub session_count: u64,
    /// Timestamp just after the last session.
    pub now: u64,
}

const TOPICS: [&[&str]; 8] = [
    &[
        "guitar", "concert", "album", "melody", "chorus", "vinyl", "drummer", "festival",
        "lyrics", "acoustic", "playlist", "encore",
    ],
    &[
        "recipe", "garlic", "oven", "simmer", "pasta", "butter", "spice", "skillet", "bake",
        "sauce", "knead", "dough",
    ],
    &[
        "trail", "summit", "ridge", "compass", "backpack", "valley", "creek", "switchback",
        "boots", "map", "camp", "peak",
    ],
    &[
        "match", "striker", "goal", "defense", "keeper", "corner", "league", "derby", "tackle",
        "offside", "stadium", "coach",
    ],
    &[
        "lens", "aperture", "shutter", "tripod", "portrait", "exposure", "bokeh", "film",
        "frame", "light", "studio", "print",
    ],
    &[
        "compiler", "bug", "refactor", "branch", "merge", "deploy", "test", "module", "cache",
        "thread", "parser", "release",
    ],
    &[
        "passport", "hostel", "itinerary", "museum", "harbor", "train", "market", "alley",
        "souvenir", "ferry", "plaza", "transit",
    ],
    &[
        "soil", "seedling", "compost", "prune", "trellis", "bloom", "mulch", "weed", "harvest",
        "greenhouse", "pot", "sprout",
    ],
];

const FILLER: [&str; 6] = ["about", "today", "with", "again", "really", "some"];

const DAY: u64 = 86_400;
const EPOCH: u64 = 1_700_000_000;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// The hidden click model. Pure, so tests can pin its values.
pub fn click_probability(cfg: &SyntheticConfig, text_match: f64, affinity: f64, eps: f64) -> f64 {
    sigmoid(
        cfg.text_weight * (text_match - 0.5)
            + cfg.social_weight * (affinity - 0.5)
            + cfg.noise * eps,
    )
}

/// Topic of a vocabulary word; numbered variants share their stem's topic,
/// filler and foreign words have none.
fn word_topic(token: &str) -> Option<usize> {
    let stem = token.trim_end_matches(|c: char| c.is_ascii_digit());
    TOPICS.iter().position(|words| words.iter().any(|&w| w == stem))
}

/// Text channel of the click model: how well the document's text answers
/// the query. Mostly exact keyword coverage (share of query tokens found
/// verbatim in the document), softened by topical density (share of
/// document tokens drawn from the query's topic), so documents that merely
/// brush a topic score between off-topic and verbatim matches. Exposed so
/// evaluations can stratify by it.
pub fn text_match(query: &str, doc: &PostingDoc) -> f64 {
    let query_tokens = tokenize(query);
    if query_tokens.is_empty() {
        return 0.0;
    }
    let doc_tokens: Vec<String> = tokenize(&doc.title)
        .into_iter()
        .chain(tokenize(&doc.body))
        .collect();
    let doc_set: BTreeSet<&str> = doc_tokens.iter().map(String::as_str).collect();
    let matched = query_tokens
        .iter()
        .filter(|t| doc_set.contains(t.as_str()))
        .count();
    let exact = matched as f64 / query_tokens.len() as f64;
    let density = match query_tokens.iter().find_map(|t| word_topic(t)) {
        Some(topic) if !doc_tokens.is_empty() => {
            let on_topic = doc_tokens
                .iter()
                .filter(|w| word_topic(w) == Some(topic))
                .count();
            on_topic as f64 / doc_tokens.len() as f64
        }
        _ => 0.0,
    };
    0.8 * exact + 0.2 * density
}

fn posting_adjacent(g: &SocialGraph, doc: NodeId, entity: NodeId) -> bool {
    [
        EdgeKind::AuthoredBy,
        EdgeKind::Involves,
        EdgeKind::PostedInGroup,
        EdgeKind::PostedInPage,
    ]
    .iter()
    .any(|&k| g.has_edge(doc, entity, k))
}

/// Affinity of a searcher toward a posting: their own content scores
/// highest, otherwise the strongest connected entity adjacent to it, and a
/// floor for keyword-only strangers.
fn doc_affinity(
    affinity: &HashMap<(NodeId, NodeId), f64>,
    searcher: NodeId,
    doc: &PostingDoc,
) -> f64 {
    if doc.involved.contains(&searcher) {
        return 0.9;
    }
    let mut best: f64 = 0.1;
    let mut consider = |e: NodeId| {
        if let Some(a) = affinity.get(&(searcher, e)) {
            best = best.max(*a);
        }
    };
    consider(doc.author);
    for &p in &doc.involved {
        consider(p);
    }
    match doc.container {
        Some(PostingContainer::Group(e)) | Some(PostingContainer::Page(e)) => consider(e),
        None => {}
    }
    best
}

fn sample<'a, R: Rng>(rng: &mut R, words: &'a [String]) -> &'a str {
    &words[rng.random_range(0..words.len())]
}

/// Per-topic vocabulary: the curated stems plus numbered variants once the
/// requested size outgrows them.
fn topic_vocab(words_per_topic: usize) -> Vec<Vec<String>> {
    TOPICS
        .iter()
        .map(|base| {
            (0..words_per_topic)
                .map(|i| {
                    let stem = base[i % base.len()];
                    if i < base.len() {
                        stem.to_string()
                    } else {
                        format!("{stem}{}", i / base.len())
                    }
                })
                .collect()
        })
        .collect()
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticData, GraphError> {
    assert!(cfg.persons >= 2 && cfg.groups >= 1 && cfg.pages >= 1);
    assert!(cfg.results_per_session >= 1);
    assert!(cfg.words_per_topic >= 2, "queries need two distinct words");
    let vocab = topic_vocab(cfg.words_per_topic);
    let filler: Vec<String> = FILLER.iter().map(|w| w.to_string()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut g = SocialGraph::new();

    let person = |i: usize| NodeId(i as u64);
    let group = |i: usize| NodeId((cfg.persons + i) as u64);
    let page = |i: usize| NodeId((cfg.persons + cfg.groups + i) as u64);
    let posting_base = (cfg.persons + cfg.groups + cfg.pages) as u64;

    for i in 0..cfg.persons {
        g.add_node(person(i), NodeKind::Person)?;
        if rng.random::<f64>() < 0.9 {
            g.set_profile(
                person(i),
                PersonProfile {
                    region_id: rng.random_range(0..8),
                    city_id: rng.random_range(0..40),
                },
            )?;
        }
    }
    for i in 0..cfg.groups {
        g.add_node(group(i), NodeKind::Group)?;
    }
    for i in 0..cfg.pages {
        g.add_node(page(i), NodeKind::Page)?;
    }

    // Friendships: four proposals per person, duplicates tolerated.
    let mut friends_of: Vec<Vec<usize>> = vec![Vec::new(); cfg.persons];
    for u in 0..cfg.persons {
        for _ in 0..4 {
            let v = rng.random_range(0..cfg.persons);
            if v == u {
                continue;
            }
            if g.add_edge(person(u), person(v), EdgeKind::FriendOf)? {
                friends_of[u].push(v);
                friends_of[v].push(u);
            }
        }
    }
    for u in 0..cfg.persons {
        for _ in 0..rng.random_range(0..=3u32) {
            g.add_edge(person(u), group(rng.random_range(0..cfg.groups)), EdgeKind::MemberOf)?;
        }
        for _ in 0..rng.random_range(0..=4u32) {
            let pg = page(rng.random_range(0..cfg.pages));
            g.add_edge(person(u), pg, EdgeKind::Follows)?;
            if rng.random::<f64>() < 0.4 {
                g.add_edge(person(u), pg, EdgeKind::Likes)?;
            }
        }
    }

    // Interaction records and the hidden affinity each one encodes. The
    // affinity is a fixed linear blend of interaction facets, so a linear
    // scorer over the social features can in principle recover it.
    let mut affinity: HashMap<(NodeId, NodeId), f64> = HashMap::new();
    for u in 0..cfg.persons {
        let searcher = person(u);
        for e in g.conn(searcher)? {
            if e == searcher {
                continue;
            }
            let kind = g.node_kind(e).unwrap();
            let coefficient = rng.random::<f64>();
            let visited = rng.random::<f64>() < 0.75;
            let last_visit_time = visited
                .then(|| EPOCH - rng.random_range(0..60 * DAY));
            let liked = kind == NodeKind::Page && rng.random::<f64>() < 0.5;
            let joined = kind == NodeKind::Group && rng.random::<f64>() < 0.8;
            g.set_interaction(
                searcher,
                e,
                InteractionRecord {
                    last_visit_time,
                    liked,
                    joined,
                    social_coefficient: coefficient,
                },
            )?;
            let recent = last_visit_time
                .is_some_and(|t| EPOCH - t <= RECENT_WINDOW_SECS);
            // Weighted toward liked/joined: those facets separate the
            // connection classes, which is what the ranker's dense features
            // and the rewriter's per-class features can actually observe.
            let a = 0.25 * coefficient
                + 0.15 * (recent as u8 as f64)
                + 0.6 * ((liked || joined) as u8 as f64);
            affinity.insert((searcher, e), a);
        }
    }

    // Postings. Bodies mostly stay on one topic but spill into a second,
    // so documents matching the same keyword differ in topical density.
    let mut docs = Vec::with_capacity(cfg.postings);
    for i in 0..cfg.postings {
        let author = rng.random_range(0..cfg.persons);
        let topic = &vocab[rng.random_range(0..vocab.len())];
        let spill = &vocab[rng.random_range(0..vocab.len())];
        let mut doc = PostingDoc::new(
            NodeId(posting_base + i as u64),
            person(author),
            EPOCH - rng.random_range(0..180 * DAY),
        );
        let title_len = rng.random_range(2..=4);
        let mut title = Vec::with_capacity(title_len);
        for _ in 0..title_len {
            title.push(sample(&mut rng, topic));
        }
        doc.title = title.join(" ");
        let body_len = rng.random_range(6..=12);
        let mut body = Vec::with_capacity(body_len);
        for _ in 0..body_len {
            let r = rng.random::<f64>();
            if r < 0.7 {
                body.push(sample(&mut rng, topic));
            } else if r < 0.85 {
                body.push(sample(&mut rng, spill));
            } else {
                body.push(sample(&mut rng, &filler));
            }
        }
        doc.body = body.join(" ");
        let container = rng.random::<f64>();
        if container < 0.35 {
            doc.container = Some(PostingContainer::Group(group(
                rng.random_range(0..cfg.groups),
            )));
        } else if container < 0.7 {
            doc.container = Some(PostingContainer::Page(page(rng.random_range(0..cfg.pages))));
        }
        if rng.random::<f64>() < 0.3 && !friends_of[author].is_empty() {
            let f = friends_of[author][rng.random_range(0..friends_of[author].len())];
            doc.involve(person(f));
        }
        doc.comment_count = (rng.random::<f64>().powi(3) * 40.0) as u32;
        doc.has_photo = rng.random::<f64>() < 0.4;
        g.add_posting(&doc)?;
        docs.push(doc);
    }

    let mut idx = InvertedIndex::new();
    for d in &docs {
        idx.add_doc(d.clone()).expect("generated docs are valid");
    }

    // Sessions.
    let keep_all = RewriteModel::keep_all();
    let mut clicks: HashMap<NodeId, u32> = HashMap::new();
    let mut records = Vec::new();
    let mut oracle_affinity = Vec::new();
    let mut ground_truth = Vec::new();
    let mut workload = Vec::new();
    let mut emitted: u64 = 0;
    for s in 0..cfg.sessions {
        let t_now = EPOCH + s as u64 + 1;
        let searcher = person(rng.random_range(0..cfg.persons));
        let topic = &vocab[rng.random_range(0..vocab.len())];
        let mut words: Vec<&str> = vec![sample(&mut rng, topic)];
        while words.len() < 3 {
            let w = sample(&mut rng, topic);
            if !words.contains(&w) {
                words.push(w);
            }
        }
        let query = words.join(" ");
        let kw = SExpr::or(
            words
                .iter()
                .map(|w| SExpr::Term(Term::text(w).unwrap()))
                .collect(),
        );

        let matched = match rewrite(&g, searcher, kw.clone(), &keep_all, t_now) {
            Ok(expr) => execute(&idx, &expr).doc_ids,
            Err(RewriteError::NoConnections) => execute(&idx, &kw).doc_ids,
            Err(RewriteError::Graph(e)) => return Err(e),
        };
        if matched.is_empty() {
            continue;
        }
        let sid = emitted;
        emitted += 1;
        workload.push((searcher, kw));

        // Display the lexically strongest results, like a first-pass
        // ranker would.
        let mut scored: Vec<(NodeId, f64)> = matched
            .iter()
            .map(|&id| {
                let doc = idx.doc(id).unwrap();
                (id, tr_dense(&idx, &query, doc).bm25)
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(cfg.results_per_session);
        let displayed: Vec<NodeId> = scored.into_iter().map(|(id, _)| id).collect();

        let mut clicked_docs: BTreeSet<NodeId> = BTreeSet::new();
        for &id in &displayed {
            let mut doc = idx.doc(id).unwrap().clone();
            doc.serp_click_count = clicks.get(&id).copied().unwrap_or(0);
            let mut rec = featurize(&g, &idx, &query, searcher, &doc, t_now, sid);
            let tm = text_match(&query, &doc);
            let aff = doc_affinity(&affinity, searcher, &doc);
            let eps: f64 = rng.sample(StandardNormal);
            let p = click_probability(cfg, tm, aff, eps);
            if rng.random::<f64>() < p {
                rec.label = 1;
                clicked_docs.insert(id);
                *clicks.entry(id).or_insert(0) += 1;
            }
            records.push(rec);
            oracle_affinity.push(aff);
            g.record_seen(searcher, id, t_now)?;
            g.add_impression(searcher)?;
        }

        for (class, entity, features) in candidates(&g, searcher, t_now)? {
            for &id in &displayed {
                if posting_adjacent(&g, id, entity) {
                    ground_truth.push(GroundTruthRow {
                        query: query.clone(),
                        searcher,
                        result_doc: id,
                        source_entity: entity,
                        prefix: class,
                        features,
                        label: clicked_docs.contains(&id) as u8,
                    });
                }
            }
        }
    }

    // Final index carries the accumulated click counts.
    let mut final_idx = InvertedIndex::new();
    for mut d in docs {
        d.serp_click_count = clicks.get(&d.id).copied().unwrap_or(0);
        final_idx.add_doc(d).expect("generated docs are valid");
    }

    Ok(SyntheticData {
        graph: g,
        index: final_idx,
        records,
        oracle_affinity,
        ground_truth,
        workload,
        session_count: emitted,
        now: EPOCH + cfg.sessions as u64 + 1,
    })
}
