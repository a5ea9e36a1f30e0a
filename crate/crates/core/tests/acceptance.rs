//! Release acceptance suite. Each test exercises one acceptance criterion
//! end to end against an independent oracle and prints a single
//! `ACCEPTANCE NN <name>: PASS (<elapsed>)` line; a failed check or a blown
//! time budget fails the test. Run with:
//!
//! ```text
//! cargo test --test acceptance -- --show-output
//! ```
//!
//! Every tolerance is pinned here, next to the check that uses it.

use std::collections::BTreeSet;
use std::panic::AssertUnwindSafe;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use socsearch_core::eval::{
    compare_rewriters, generate, ndcg, roc_auc, run_ablations, write_click_log, SyntheticConfig,
    SyntheticData,
};
use socsearch_core::graph::{
    EdgeKind, InteractionRecord, NodeId, NodeKind, PostingContainer, PostingDoc, SocialGraph,
};
use socsearch_core::index::{tokenize, InvertedIndex, Term};
use socsearch_core::query::{execute, SExpr};
use socsearch_core::ranker::{
    fm_second_order, prepare_records, train, AblationSetting, BnMode, GradBlock, TrainConfig,
    TwoTowerModel,
};
use socsearch_core::rewriter::{
    candidates, mean_cost, recall_at_t, rewrite, sweep_tp, train_weights, LinearWeights,
    PerPrefix, RewriteError, RewriteModel,
};

/// Runs one criterion body under a wall-clock budget and prints its verdict.
fn criterion<F: FnOnce()>(num: u32, name: &str, limit: Duration, body: F) {
    let start = Instant::now();
    let result = std::panic::catch_unwind(AssertUnwindSafe(body));
    let elapsed = start.elapsed();
    let ok = result.is_ok() && elapsed <= limit;
    println!(
        "ACCEPTANCE {num:02} {name}: {} ({elapsed:.2?} of {limit:?} budget)",
        if ok { "PASS" } else { "FAIL" }
    );
    if let Err(panic) = result {
        std::panic::resume_unwind(panic);
    }
    assert!(
        elapsed <= limit,
        "criterion {num} exceeded its {limit:?} budget: took {elapsed:.2?}"
    );
}

/// The full-size synthetic corpus every corpus-level criterion runs on.
fn default_data() -> &'static SyntheticData {
    static DATA: OnceLock<SyntheticData> = OnceLock::new();
    DATA.get_or_init(|| generate(&SyntheticConfig::default()).expect("default corpus generates"))
}

/// A small corpus for checks that need many repeated model runs.
fn small_data() -> &'static SyntheticData {
    static DATA: OnceLock<SyntheticData> = OnceLock::new();
    DATA.get_or_init(|| {
        generate(&SyntheticConfig {
            persons: 300,
            groups: 30,
            pages: 30,
            postings: 3_000,
            sessions: 600,
            results_per_session: 8,
            seed: 11,
            ..SyntheticConfig::default()
        })
        .expect("small corpus generates")
    })
}

// ---------------------------------------------------------------------------
// 1. Query execution matches a per-document oracle.
// ---------------------------------------------------------------------------

/// Independent re-derivation of a posting's retrieval terms, mirroring the
/// indexing contract: every text token of title and body, the author under
/// `authored-by`, every involved person under `involves`, and the container
/// under `group-of`/`page-of`.
fn oracle_terms(doc: &PostingDoc) -> BTreeSet<Term> {
    let mut terms = BTreeSet::new();
    for token in tokenize(&doc.title).into_iter().chain(tokenize(&doc.body)) {
        terms.insert(Term::text(&token).expect("tokens are valid text terms"));
    }
    terms.insert(Term::AuthoredBy(doc.author));
    for &p in &doc.involved {
        terms.insert(Term::Involves(p));
    }
    match doc.container {
        Some(PostingContainer::Group(g)) => {
            terms.insert(Term::GroupOf(g));
        }
        Some(PostingContainer::Page(p)) => {
            terms.insert(Term::PageOf(p));
        }
        None => {}
    }
    terms
}

fn oracle_eval(expr: &SExpr, terms: &BTreeSet<Term>) -> bool {
    match expr {
        SExpr::Term(t) => terms.contains(t),
        SExpr::And(children) => children.iter().all(|c| oracle_eval(c, terms)),
        SExpr::Or(children) => children.iter().any(|c| oracle_eval(c, terms)),
    }
}

const VOCAB: [&str; 8] = [
    "alpha", "beta", "gamma", "delta", "epsilon", "sigma", "tau", "omega",
];

fn random_doc(rng: &mut ChaCha8Rng, id: u64) -> PostingDoc {
    let mut doc = PostingDoc::new(NodeId(id), NodeId(rng.random_range(0..10)), 0);
    let title_len = rng.random_range(1..=3);
    doc.title = (0..title_len)
        .map(|_| VOCAB[rng.random_range(0..VOCAB.len())])
        .collect::<Vec<_>>()
        .join(" ");
    let body_len = rng.random_range(0..=6);
    doc.body = (0..body_len)
        .map(|_| VOCAB[rng.random_range(0..VOCAB.len())])
        .collect::<Vec<_>>()
        .join(" ");
    match rng.random_range(0..3) {
        0 => doc.container = Some(PostingContainer::Group(NodeId(10 + rng.random_range(0..4)))),
        1 => doc.container = Some(PostingContainer::Page(NodeId(14 + rng.random_range(0..4)))),
        _ => {}
    }
    for _ in 0..rng.random_range(0..=2) {
        doc.involve(NodeId(rng.random_range(0..10)));
    }
    doc
}

fn random_term(rng: &mut ChaCha8Rng) -> Term {
    match rng.random_range(0..5) {
        0 => {
            // Mix words in the vocabulary with one that never occurs.
            if rng.random_range(0..8) == 0 {
                Term::text("unseen").unwrap()
            } else {
                Term::text(VOCAB[rng.random_range(0..VOCAB.len())]).unwrap()
            }
        }
        // Id ranges deliberately overshoot the populated ones so empty
        // posting lists occur.
        1 => Term::AuthoredBy(NodeId(rng.random_range(0..12))),
        2 => Term::Involves(NodeId(rng.random_range(0..12))),
        3 => Term::GroupOf(NodeId(10 + rng.random_range(0..6))),
        _ => Term::PageOf(NodeId(14 + rng.random_range(0..6))),
    }
}

fn random_expr(rng: &mut ChaCha8Rng, depth: u32) -> SExpr {
    if depth <= 1 || rng.random::<f64>() < 0.3 {
        return SExpr::Term(random_term(rng));
    }
    let children: Vec<SExpr> = (0..rng.random_range(1..=3))
        .map(|_| random_expr(rng, depth - 1))
        .collect();
    if rng.random::<bool>() {
        SExpr::and(children)
    } else {
        SExpr::or(children)
    }
}

#[test]
fn acceptance_01_execution_matches_per_doc_oracle() {
    criterion(
        1,
        "query-execution-oracle-equivalence",
        Duration::from_secs(30),
        || {
            let mut rng = ChaCha8Rng::seed_from_u64(0xACC0001);
            for _ in 0..1_000 {
                let n_docs = rng.random_range(1..=200);
                let mut idx = InvertedIndex::new();
                let mut docs = Vec::with_capacity(n_docs);
                for i in 0..n_docs {
                    let doc = random_doc(&mut rng, 100 + i as u64);
                    idx.add_doc(doc.clone()).expect("fresh ids index cleanly");
                    docs.push(doc);
                }
                let depth = rng.random_range(1..=4);
                let expr = random_expr(&mut rng, depth);
                let got = execute(&idx, &expr).doc_ids;
                let want: Vec<NodeId> = docs
                    .iter()
                    .filter(|d| oracle_eval(&expr, &oracle_terms(d)))
                    .map(|d| d.id)
                    .collect();
                assert_eq!(got, want, "results diverge for {expr}");
            }
        },
    );
}

// ---------------------------------------------------------------------------
// 2. The worked two-friend example rewrites to the exact expression.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_02_worked_example_rewrite() {
    criterion(2, "worked-example-rewrite", Duration::from_secs(1), || {
        let mut g = SocialGraph::new();
        for p in 0..=2u64 {
            g.add_node(NodeId(p), NodeKind::Person).unwrap();
        }
        g.add_node(NodeId(3), NodeKind::Group).unwrap();
        g.add_node(NodeId(4), NodeKind::Page).unwrap();
        g.add_edge(NodeId(0), NodeId(1), EdgeKind::FriendOf).unwrap();
        g.add_edge(NodeId(0), NodeId(2), EdgeKind::FriendOf).unwrap();
        g.add_edge(NodeId(0), NodeId(3), EdgeKind::MemberOf).unwrap();
        g.add_edge(NodeId(0), NodeId(4), EdgeKind::Follows).unwrap();

        let kw = SExpr::or(vec![
            SExpr::Term(Term::text("billie").unwrap()),
            SExpr::Term(Term::text("eilish").unwrap()),
        ]);
        let got = rewrite(&g, NodeId(0), kw.clone(), &RewriteModel::keep_all(), 1_000)
            .expect("searcher has connections");

        let expected = SExpr::and(vec![
            kw,
            SExpr::or(vec![
                SExpr::Term(Term::Involves(NodeId(0))),
                SExpr::Term(Term::AuthoredBy(NodeId(1))),
                SExpr::Term(Term::AuthoredBy(NodeId(2))),
                SExpr::Term(Term::GroupOf(NodeId(3))),
                SExpr::Term(Term::PageOf(NodeId(4))),
            ]),
        ]);
        assert_eq!(got, expected, "rewritten AST differs");
        assert_eq!(
            got.render(),
            "(and (or text:billie text:eilish) \
             (or involves:0 authored-by:1 authored-by:2 group-of:3 page-of:4))"
        );
    });
}

// ---------------------------------------------------------------------------
// 3. Rewritten-query results stay inside the searcher's connection postings.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_03_results_contained_in_connection_postings() {
    criterion(
        3,
        "retrieval-space-containment",
        Duration::from_secs(60),
        || {
            let d = default_data();
            let mut rng = ChaCha8Rng::seed_from_u64(0xACC0003);
            let keep_all = RewriteModel::keep_all();
            let thresholded = RewriteModel {
                weights: PerPrefix::uniform(LinearWeights::zero()),
                thresholds: PerPrefix::uniform(2),
            };
            let mut checked = 0_u32;
            for case in 0..500 {
                let (searcher, kw) = &d.workload[rng.random_range(0..d.workload.len())];
                // Containment must hold regardless of how many connections
                // the policy keeps; alternate between extremes.
                let model = if case % 2 == 0 { &keep_all } else { &thresholded };
                let expr = match rewrite(&d.graph, *searcher, kw.clone(), model, d.now) {
                    Ok(expr) => expr,
                    Err(RewriteError::NoConnections) => continue,
                    Err(e) => panic!("rewrite failed: {e}"),
                };
                let results = execute(&d.index, &expr).doc_ids;
                let allowed = d.graph.conn_postings(*searcher).unwrap();
                for id in results {
                    assert!(
                        allowed.contains(&id),
                        "doc {id} outside conn postings of searcher {searcher} for {expr}"
                    );
                }
                checked += 1;
            }
            assert!(checked >= 400, "too few rewritable cases: {checked}");
        },
    );
}

// ---------------------------------------------------------------------------
// 4. Threshold sweep returns the maximal affordable thresholds and both
//    recall and cost are weakly monotone in the thresholds.
// ---------------------------------------------------------------------------

const SWEEP_NOW: u64 = 1_000_000;

/// Hand-built workload with analytically known costs. One searcher with four
/// friends, four groups, and four pages ranked by social coefficient; every
/// posting title matches the single query term, and posting blocks are sized
/// so a uniform keep-count of 1/2/3 costs exactly 100/180/270 postings while
/// any single-class raise beyond {1,2,2,2} costs at least 210.
fn documented_workload() -> (InvertedIndex, SocialGraph, Vec<(NodeId, SExpr)>) {
    let mut g = SocialGraph::new();
    for p in 0..=5u64 {
        g.add_node(NodeId(p), NodeKind::Person).unwrap();
    }
    for gr in 6..=9u64 {
        g.add_node(NodeId(gr), NodeKind::Group).unwrap();
    }
    for pg in 10..=13u64 {
        g.add_node(NodeId(pg), NodeKind::Page).unwrap();
    }
    let searcher = NodeId(0);
    let coefs = [0.9, 0.7, 0.5, 0.3];
    for (i, &c) in coefs.iter().enumerate() {
        let friend = NodeId(1 + i as u64);
        let group = NodeId(6 + i as u64);
        let page = NodeId(10 + i as u64);
        g.add_edge(searcher, friend, EdgeKind::FriendOf).unwrap();
        g.add_edge(searcher, group, EdgeKind::MemberOf).unwrap();
        g.add_edge(searcher, page, EdgeKind::Follows).unwrap();
        for e in [friend, group, page] {
            g.set_interaction(
                searcher,
                e,
                InteractionRecord {
                    last_visit_time: None,
                    liked: false,
                    joined: false,
                    social_coefficient: c,
                },
            )
            .unwrap();
        }
    }

    let mut next_id = 14u64;
    let mut docs: Vec<PostingDoc> = Vec::new();
    let mut emit = |docs: &mut Vec<PostingDoc>,
                    count: usize,
                    author: u64,
                    container: Option<PostingContainer>| {
        for _ in 0..count {
            let mut d = PostingDoc::new(NodeId(next_id), NodeId(author), 0);
            d.title = "zeta".to_string();
            d.container = container;
            docs.push(d);
            next_id += 1;
        }
    };
    // Posting-count blocks per rank: (friend, group, page). Rank r is kept
    // once the class threshold reaches r, so the cumulative keyword-aligned
    // cost doubles the kept totals 50/90/135: 100, 180, 270.
    let blocks: [(usize, usize, usize); 4] = [(17, 17, 16), (14, 13, 13), (15, 15, 15), (1, 1, 1)];
    for (i, &(f, gr, pg)) in blocks.iter().enumerate() {
        emit(&mut docs, f, 1 + i as u64, None);
        emit(
            &mut docs,
            gr,
            5,
            Some(PostingContainer::Group(NodeId(6 + i as u64))),
        );
        emit(
            &mut docs,
            pg,
            5,
            Some(PostingContainer::Page(NodeId(10 + i as u64))),
        );
    }
    let mut idx = InvertedIndex::new();
    for d in docs {
        g.add_posting(&d).unwrap();
        idx.add_doc(d).unwrap();
    }
    let kw = SExpr::Term(Term::text("zeta").unwrap());
    (idx, g, vec![(searcher, kw)])
}

/// Weights that score a connection by its stored social coefficient.
fn coefficient_weights() -> PerPrefix<LinearWeights> {
    let mut w = LinearWeights::zero();
    w.w[4] = 1.0;
    PerPrefix::uniform(w)
}

#[test]
fn acceptance_04_sweep_maximality_and_monotonicity() {
    criterion(
        4,
        "threshold-sweep-maximality-and-monotonicity",
        Duration::from_secs(60),
        || {
            let (idx, g, workload) = documented_workload();
            let weights = coefficient_weights();
            const BUDGET: f64 = 200.0;

            let outcome = sweep_tp(&idx, &g, &workload, &weights, &[], BUDGET, SWEEP_NOW);
            assert_eq!(
                outcome.thresholds,
                PerPrefix {
                    involves: 1,
                    authored_by: 2,
                    group_of: 2,
                    page_of: 2
                }
            );
            assert_eq!(outcome.uniform_t, 2);
            assert!(!outcome.refined && !outcome.at_floor);

            let cost_at = |t: PerPrefix<u32>| {
                mean_cost(&idx, &g, &workload, &RewriteModel { weights, thresholds: t }, SWEEP_NOW)
            };
            assert_eq!(cost_at(outcome.thresholds), 180.0);

            // Candidate caps: per-class candidate counts for the searcher.
            let mut caps: PerPrefix<u32> = PerPrefix::default();
            for (class, _, _) in candidates(&g, workload[0].0, SWEEP_NOW).unwrap() {
                *caps.get_mut(class) += 1;
            }
            assert_eq!(
                caps,
                PerPrefix {
                    involves: 1,
                    authored_by: 4,
                    group_of: 4,
                    page_of: 4
                }
            );

            // Exhaustive cross-check over every threshold vector up to the
            // caps: the sweep result is affordable, and every vector that
            // dominates it busts the budget.
            for inv in 0..=caps.involves {
                for ab in 0..=caps.authored_by {
                    for go in 0..=caps.group_of {
                        for po in 0..=caps.page_of {
                            let t = PerPrefix {
                                involves: inv,
                                authored_by: ab,
                                group_of: go,
                                page_of: po,
                            };
                            let dominates = inv >= outcome.thresholds.involves
                                && ab >= outcome.thresholds.authored_by
                                && go >= outcome.thresholds.group_of
                                && po >= outcome.thresholds.page_of
                                && t != outcome.thresholds;
                            if dominates {
                                assert!(
                                    cost_at(t) > BUDGET,
                                    "sweep not maximal: {t:?} affordable"
                                );
                            }
                        }
                    }
                }
            }
            // The uniform pass alone is maximal too: cost(1)=100, cost(2)=180,
            // cost(3)=270.
            assert_eq!(cost_at(PerPrefix::uniform(1)), 100.0);
            assert_eq!(cost_at(PerPrefix::uniform(2)), 180.0);
            assert_eq!(cost_at(PerPrefix::uniform(3)), 270.0);

            // Weak monotonicity of recall and cost in the keep-counts over 50
            // random workloads drawn from a generated corpus.
            let d = small_data();
            let trained = train_weights(&d.ground_truth, 1e-3).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(0xACC0004);
            for _ in 0..50 {
                let wl: Vec<(NodeId, SExpr)> = (0..20)
                    .map(|_| d.workload[rng.random_range(0..d.workload.len())].clone())
                    .collect();
                let row_lo = rng.random_range(0..d.ground_truth.len() - 300);
                let rows = &d.ground_truth[row_lo..row_lo + 300];
                let mut prev_cost = f64::NEG_INFINITY;
                let mut prev_recall = f64::NEG_INFINITY;
                for t in 0..=6u32 {
                    let model = RewriteModel {
                        weights: trained,
                        thresholds: PerPrefix::uniform(t),
                    };
                    let c = mean_cost(&d.index, &d.graph, &wl, &model, d.now);
                    let r = recall_at_t(rows, &trained, &PerPrefix::uniform(t)).unwrap();
                    assert!(c >= prev_cost, "cost dropped from {prev_cost} to {c} at t={t}");
                    assert!(
                        r >= prev_recall,
                        "recall dropped from {prev_recall} to {r} at t={t}"
                    );
                    prev_cost = c;
                    prev_recall = r;
                }
            }
        },
    );
}

// ---------------------------------------------------------------------------
// 5. The trained rewriter beats both fixed baselines on recall.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_05_trained_rewriter_beats_baselines() {
    criterion(
        5,
        "trained-rewriter-vs-baselines",
        Duration::from_secs(300),
        || {
            // Tightest comparison point: a keep-count of 1 per class, where
            // connection scoring matters most.
            let thresholds = PerPrefix::uniform(1);
            let mut sums = (0.0, 0.0, 0.0);
            const SEEDS: u64 = 5;
            for seed in 0..SEEDS {
                let d = generate(&SyntheticConfig {
                    seed,
                    ..SyntheticConfig::default()
                })
                .unwrap();
                let cmp =
                    compare_rewriters(&d.ground_truth, &d.ground_truth, &thresholds, 1e-3)
                        .unwrap();
                sums.0 += cmp.trained;
                sums.1 += cmp.recency;
                sums.2 += cmp.social;
            }
            let trained = sums.0 / SEEDS as f64;
            let recency = sums.1 / SEEDS as f64;
            let social = sums.2 / SEEDS as f64;
            println!(
                "  mean recall@1 over {SEEDS} seeds: trained={trained:.4} \
                 recency={recency:.4} social={social:.4}"
            );
            assert!(trained >= recency, "{trained:.4} < recency {recency:.4}");
            assert!(trained >= social, "{trained:.4} < social {social:.4}");
            let weaker = recency.min(social);
            assert!(
                trained - weaker >= 0.02,
                "improvement over weaker baseline {:.4} below 2 points",
                trained - weaker
            );
        },
    );
}

// ---------------------------------------------------------------------------
// 6. Analytic gradients match central finite differences.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_06_gradients_match_finite_differences() {
    criterion(
        6,
        "finite-difference-gradient-check",
        Duration::from_secs(60),
        || {
            const EPS: f64 = 1e-4;
            const REL_TOL: f64 = 1e-3;
            let batch = prepare_records(&small_data().records[..10]);
            let mut model = TwoTowerModel::new(AblationSetting::CtrTrNgram, 0xACC0006);
            let (_, grads) = model.loss_and_grads(&batch, BnMode::Fixed, None);

            for name in model.param_names() {
                // Sample a handful of indices per block: embedding tables on
                // rows the batch touched, dense blocks spread evenly.
                let indices: Vec<usize> = match grads.blocks.get(name) {
                    Some(GradBlock::Dense(g)) => {
                        let take = g.len().min(8);
                        (0..take).map(|k| k * g.len() / take).collect()
                    }
                    Some(GradBlock::Rows { dim, rows }) => {
                        assert!(!rows.is_empty(), "no rows touched in {name}");
                        rows.keys()
                            .take(2)
                            .flat_map(|r| {
                                let step = (dim / 4).max(1);
                                (0..*dim).step_by(step).map(move |j| r * dim + j)
                            })
                            .collect()
                    }
                    None => panic!("no gradients for block {name}"),
                };
                assert!(!indices.is_empty(), "block {name} untested");
                for idx in indices {
                    let analytic = grads.get(name, idx);
                    let orig = model.block(name).unwrap()[idx];
                    model.block_mut(name).unwrap()[idx] = orig + EPS;
                    let (loss_hi, _) = model.loss_and_grads(&batch, BnMode::Fixed, None);
                    model.block_mut(name).unwrap()[idx] = orig - EPS;
                    let (loss_lo, _) = model.loss_and_grads(&batch, BnMode::Fixed, None);
                    model.block_mut(name).unwrap()[idx] = orig;
                    let fd = (loss_hi - loss_lo) / (2.0 * EPS);
                    let scale = analytic.abs().max(fd.abs());
                    if scale > 1e-6 {
                        let rel = (analytic - fd).abs() / scale;
                        assert!(
                            rel <= REL_TOL,
                            "{name}[{idx}]: analytic {analytic:.3e} vs fd {fd:.3e} (rel {rel:.3e})"
                        );
                    } else {
                        assert!(
                            (analytic - fd).abs() <= 1e-8,
                            "{name}[{idx}]: both near zero but differ: {analytic:.3e} vs {fd:.3e}"
                        );
                    }
                }
            }
        },
    );
}

// ---------------------------------------------------------------------------
// 7. The factorization-machine identity holds.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_07_fm_identity() {
    criterion(7, "fm-pairwise-identity", Duration::from_secs(1), || {
        let mut rng = ChaCha8Rng::seed_from_u64(0xACC0007);
        for _ in 0..100 {
            let dim = rng.random_range(2..=32);
            let factors = rng.random_range(1..=16);
            let x: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let v = Array2::from_shape_fn((dim, factors), |_| rng.random::<f64>() * 2.0 - 1.0);
            let mut pairwise = 0.0;
            for i in 0..dim {
                for j in i + 1..dim {
                    let vij: f64 = (0..factors).map(|f| v[[i, f]] * v[[j, f]]).sum();
                    pairwise += vij * x[i] * x[j];
                }
            }
            let fast = fm_second_order(&x, &v);
            assert!(
                (pairwise - fast).abs() <= 1e-10,
                "identity violated: {pairwise} vs {fast}"
            );
        }
    });
}

// ---------------------------------------------------------------------------
// 8. Ranking metrics match brute-force oracles and hand-derived values.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_08_metric_oracles() {
    criterion(8, "metric-oracles", Duration::from_secs(10), || {
        let mut rng = ChaCha8Rng::seed_from_u64(0xACC0008);
        for _ in 0..100 {
            let n = rng.random_range(2..=1_000);
            let mut examples: Vec<(f64, u8)> = (0..n)
                .map(|_| {
                    // Half the scores land on a coarse grid so ties occur.
                    let score = if rng.random::<bool>() {
                        rng.random_range(0..10) as f64 / 10.0
                    } else {
                        rng.random::<f64>()
                    };
                    (score, rng.random_range(0..2) as u8)
                })
                .collect();
            examples[0].1 = 1;
            examples[n - 1].1 = 0;

            let mut hits = 0.0_f64;
            let mut pairs = 0u64;
            for &(sp, lp) in &examples {
                if lp != 1 {
                    continue;
                }
                for &(sn, ln) in &examples {
                    if ln != 0 {
                        continue;
                    }
                    pairs += 1;
                    if sp > sn {
                        hits += 1.0;
                    } else if sp == sn {
                        hits += 0.5;
                    }
                }
            }
            let brute = hits / pairs as f64;
            let got = roc_auc(&examples).unwrap();
            assert_eq!(got, brute, "auc mismatch on {n} records");
        }

        // Pinned spot value: 3 of the 4 positive-negative pairs rank
        // correctly.
        let spot = [(0.9, 1u8), (0.8, 0), (0.7, 1), (0.1, 0)];
        assert_eq!(roc_auc(&spot).unwrap(), 0.75);

        // Hand-derived gain values.
        let single = vec![vec![(0.9, 0u8), (0.5, 1), (0.1, 0)]];
        let expect_single = 1.0 / 3f64.log2();
        assert!((ndcg(&single).unwrap() - expect_single).abs() <= 1e-9);

        let double = vec![vec![(0.9, 0u8), (0.5, 1), (0.4, 1)]];
        let expect_double = (1.0 / 3f64.log2() + 0.5) / (1.0 + 1.0 / 3f64.log2());
        assert!((ndcg(&double).unwrap() - expect_double).abs() <= 1e-9);

        let perfect = vec![vec![(0.9, 1u8), (0.5, 0), (0.1, 0)], vec![(1.0, 1u8), (0.2, 0)]];
        assert_eq!(ndcg(&perfect).unwrap(), 1.0);
    });
}

// ---------------------------------------------------------------------------
// 9. Feature ablations reproduce the expected quality ordering.
// ---------------------------------------------------------------------------

/// Training configuration for the ablation run; one pass keeps the large
/// n-gram tables from memorizing click noise on the small corpus.
fn ablation_config() -> TrainConfig {
    TrainConfig {
        lr: 0.01,
        epochs: 1,
        batch_size: 256,
        seed: 0,
        ..TrainConfig::default()
    }
}

#[test]
fn acceptance_09_ablation_ordering() {
    criterion(9, "ablation-auc-ordering", Duration::from_secs(600), || {
        let d = default_data();
        let reports = run_ablations(&d.records, &ablation_config(), 0.8).unwrap();
        let auc = |s: AblationSetting| {
            reports
                .iter()
                .find(|r| r.setting == s)
                .unwrap_or_else(|| panic!("missing report for {}", s.as_str()))
                .auc
        };
        for r in &reports {
            println!("  {:<14} auc={:.4} ndcg={:.4}", r.setting.as_str(), r.auc, r.ndcg);
        }
        let ctr = auc(AblationSetting::CtrOnly);
        let tr = auc(AblationSetting::TrOnly);
        let ngram = auc(AblationSetting::NgramOnly);
        let ctr_tr = auc(AblationSetting::CtrTr);
        let ctr_ngram = auc(AblationSetting::CtrNgram);
        let full = auc(AblationSetting::CtrTrNgram);

        assert!(tr < ctr, "tr_only {tr:.4} not below ctr_only {ctr:.4}");
        assert!(ctr_tr >= ctr, "ctr_tr {ctr_tr:.4} below ctr_only {ctr:.4}");
        // The n-gram features must add at least half an AUC point over every
        // single-feature model.
        const MARGIN: f64 = 0.005;
        assert!(
            ctr_ngram >= ctr + MARGIN,
            "ctr_ngram {ctr_ngram:.4} within half a point of ctr_only {ctr:.4}"
        );
        assert!(
            ctr_ngram >= tr + MARGIN,
            "ctr_ngram {ctr_ngram:.4} within half a point of tr_only {tr:.4}"
        );
        assert!(
            ctr_ngram >= ngram + MARGIN,
            "ctr_ngram {ctr_ngram:.4} within half a point of ngram_only {ngram:.4}"
        );
        // The full model may trade at most 0.2 points against ctr_ngram.
        assert!(
            full >= ctr_ngram - 0.002,
            "full model {full:.4} more than 0.2 points below ctr_ngram {ctr_ngram:.4}"
        );
    });
}

// ---------------------------------------------------------------------------
// 10. Determinism and bit-exact persistence.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_10_determinism_and_round_trips() {
    criterion(
        10,
        "determinism-and-round-trips",
        Duration::from_secs(120),
        || {
            let dir = tempfile::tempdir().unwrap();
            let d1 = default_data();
            let d2 = generate(&SyntheticConfig::default()).unwrap();

            // Bit-identical corpus artifacts from the same seed.
            assert_eq!(d1.session_count, d2.session_count);
            assert_eq!(d1.now, d2.now);
            assert_eq!(d1.oracle_affinity, d2.oracle_affinity);
            let mut log1 = Vec::new();
            let mut log2 = Vec::new();
            write_click_log(&mut log1, &d1.records).unwrap();
            write_click_log(&mut log2, &d2.records).unwrap();
            assert_eq!(log1, log2, "click logs differ between identical seeds");
            assert_eq!(d1.ground_truth, d2.ground_truth);
            let render = |wl: &[(NodeId, SExpr)]| -> Vec<String> {
                wl.iter().map(|(s, kw)| format!("{s}\t{kw}")).collect()
            };
            assert_eq!(render(&d1.workload), render(&d2.workload));

            // Index persistence: same bytes from both corpora, and loading
            // then saving again reproduces those bytes exactly.
            let idx_a = dir.path().join("a.idx");
            let idx_b = dir.path().join("b.idx");
            let idx_c = dir.path().join("c.idx");
            d1.index.save(&idx_a).unwrap();
            d2.index.save(&idx_b).unwrap();
            let bytes_a = std::fs::read(&idx_a).unwrap();
            assert_eq!(bytes_a, std::fs::read(&idx_b).unwrap());
            InvertedIndex::load(&idx_a).unwrap().save(&idx_c).unwrap();
            assert_eq!(bytes_a, std::fs::read(&idx_c).unwrap());

            // Identical training runs produce identical loss traces and
            // metric reports.
            let small = small_data();
            let cfg = TrainConfig {
                lr: 0.01,
                epochs: 2,
                batch_size: 256,
                seed: 3,
                ..TrainConfig::default()
            };
            let r1 = run_ablations(&small.records, &cfg, 0.8).unwrap();
            let r2 = run_ablations(&small.records, &cfg, 0.8).unwrap();
            assert_eq!(r1.len(), r2.len());
            for (a, b) in r1.iter().zip(&r2) {
                assert_eq!(a.setting, b.setting);
                assert_eq!(a.auc, b.auc, "auc differs for {}", a.setting.as_str());
                assert_eq!(a.ndcg, b.ndcg, "ndcg differs for {}", a.setting.as_str());
                assert_eq!(
                    a.epoch_losses, b.epoch_losses,
                    "loss trace differs for {}",
                    a.setting.as_str()
                );
            }

            // Ranker checkpoints round-trip bit-exactly, trained or not.
            let mut model = TwoTowerModel::new(AblationSetting::CtrTrNgram, 7);
            train(&mut model, &small.records[..1_024], &cfg).unwrap();
            let ck_a = dir.path().join("a.model");
            let ck_b = dir.path().join("b.model");
            model.save(&ck_a).unwrap();
            TwoTowerModel::load(&ck_a).unwrap().save(&ck_b).unwrap();
            assert_eq!(
                std::fs::read(&ck_a).unwrap(),
                std::fs::read(&ck_b).unwrap()
            );

            // Rewriter policy files round-trip bit-exactly.
            let policy = RewriteModel {
                weights: train_weights(&small.ground_truth, 1e-3).unwrap(),
                thresholds: PerPrefix {
                    involves: 1,
                    authored_by: 3,
                    group_of: 2,
                    page_of: 2,
                },
            };
            let pol_a = dir.path().join("a.rewrite");
            let pol_b = dir.path().join("b.rewrite");
            policy.save(&pol_a).unwrap();
            RewriteModel::load(&pol_a).unwrap().save(&pol_b).unwrap();
            assert_eq!(
                std::fs::read(&pol_a).unwrap(),
                std::fs::read(&pol_b).unwrap()
            );
        },
    );
}
