//! Benchmarks for the engine's hot paths: index construction, boolean
//! query execution, social query rewriting, and the ranker's forward and
//! backward passes. All fixtures come from one small generated corpus.

use std::hint::black_box;
use std::sync::OnceLock;

use criterion::{criterion_group, criterion_main, Criterion};

use socsearch_core::eval::{generate, SyntheticConfig, SyntheticData};
use socsearch_core::index::InvertedIndex;
use socsearch_core::query::execute;
use socsearch_core::ranker::{prepare_records, AblationSetting, BnMode, TwoTowerModel};
use socsearch_core::rewriter::{rewrite, RewriteModel};

fn corpus() -> &'static SyntheticData {
    static DATA: OnceLock<SyntheticData> = OnceLock::new();
    DATA.get_or_init(|| {
        generate(&SyntheticConfig {
            persons: 300,
            groups: 30,
            pages: 30,
            postings: 3_000,
            sessions: 400,
            results_per_session: 8,
            seed: 17,
            ..SyntheticConfig::default()
        })
        .expect("bench corpus generates")
    })
}

fn bench_index_build(c: &mut Criterion) {
    let docs: Vec<_> = corpus().index.docs().cloned().collect();
    c.bench_function("index_build_3k_docs", |b| {
        b.iter(|| {
            let mut idx = InvertedIndex::new();
            for doc in &docs {
                idx.add_doc(doc.clone()).unwrap();
            }
            black_box(idx.doc_count())
        })
    });
}

fn bench_execute(c: &mut Criterion) {
    let d = corpus();
    let (searcher, kw) = d.workload[0].clone();
    let expr = rewrite(&d.graph, searcher, kw, &RewriteModel::keep_all(), d.now)
        .expect("workload searchers have connections");
    c.bench_function("execute_rewritten_query", |b| {
        b.iter(|| black_box(execute(&d.index, black_box(&expr)).doc_ids.len()))
    });
}

fn bench_rewrite(c: &mut Criterion) {
    let d = corpus();
    let (searcher, kw) = d.workload[0].clone();
    let model = RewriteModel::keep_all();
    c.bench_function("rewrite_query", |b| {
        b.iter(|| black_box(rewrite(&d.graph, searcher, kw.clone(), &model, d.now).unwrap()))
    });
}

fn bench_ranker(c: &mut Criterion) {
    let d = corpus();
    let model = TwoTowerModel::new(AblationSetting::CtrTrNgram, 0);
    let records = &d.records[..256.min(d.records.len())];
    c.bench_function("ranker_forward_256", |b| {
        b.iter(|| black_box(model.predict_batch(black_box(records))))
    });
    let batch = prepare_records(records);
    c.bench_function("ranker_loss_and_grads_256", |b| {
        b.iter(|| black_box(model.loss_and_grads(black_box(&batch), BnMode::Fixed, None).0))
    });
}

criterion_group! {
    name = engine;
    config = Criterion::default().sample_size(20);
    targets = bench_index_build, bench_execute, bench_rewrite, bench_ranker
}
criterion_main!(engine);
