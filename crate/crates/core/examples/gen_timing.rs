use std::time::Instant;

use socsearch_core::eval::{
    compare_rewriters, generate, roc_auc, run_ablations, text_match, SyntheticConfig,
};
use socsearch_core::ranker::{
    embed_bag, hash_bag, ngrams, Embedding, TrainConfig, TEXT_BUCKETS, TEXT_DIM,
};
use socsearch_core::rewriter::PerPrefix;

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map_or(0.01, |s| s.parse().unwrap());
    let epochs: usize = args.get(2).map_or(3, |s| s.parse().unwrap());
    let batch_size: usize = args.get(3).map_or(256, |s| s.parse().unwrap());
    let eps: f64 = args.get(4).map_or(1e-8, |s| s.parse().unwrap());

    let t0 = Instant::now();
    let d = generate(&SyntheticConfig::default()).unwrap();
    let gen_time = t0.elapsed();
    let clicks: u32 = d.records.iter().map(|r| r.label as u32).sum();
    println!(
        "generate: {:.1?}  sessions={} records={} clicks={} ({:.3} rate) gt_rows={}",
        gen_time,
        d.session_count,
        d.records.len(),
        clicks,
        clicks as f64 / d.records.len() as f64,
        d.ground_truth.len(),
    );

    // Upper bounds on what each channel can contribute: AUC of the true
    // click-model inputs against the drawn labels.
    let labels: Vec<u8> = d.records.iter().map(|r| r.label).collect();
    let tm: Vec<(f64, u8)> = d
        .records
        .iter()
        .zip(&labels)
        .map(|(r, &y)| {
            let doc = d.index.doc(r.doc_id).unwrap();
            (text_match(&r.query, doc), y)
        })
        .collect();
    let aff: Vec<(f64, u8)> = d
        .oracle_affinity
        .iter()
        .zip(&labels)
        .map(|(&a, &y)| (a, y))
        .collect();
    println!(
        "oracle aucs: text_match={:.4} affinity={:.4}",
        roc_auc(&tm).unwrap(),
        roc_auc(&aff).unwrap()
    );

    // What the identically-initialized cosine block sees before any
    // training: shared tables make cos(q, d) a pure lexical-overlap score.
    {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let uni = Embedding::random(TEXT_BUCKETS, TEXT_DIM, 0.1, &mut rng);
        let bi = Embedding::random(TEXT_BUCKETS, TEXT_DIM, 0.1, &mut rng);
        let mut per_cos: [Vec<(f64, u8)>; 4] = Default::default();
        let mut mean_cos: Vec<(f64, u8)> = Vec::new();
        for r in &d.records {
            let qe1 = embed_bag(&uni, &hash_bag(&ngrams(&r.query, 1), TEXT_BUCKETS));
            let qe2 = embed_bag(&bi, &hash_bag(&ngrams(&r.query, 2), TEXT_BUCKETS));
            let te1 = embed_bag(&uni, &hash_bag(&ngrams(&r.doc_title, 1), TEXT_BUCKETS));
            let te2 = embed_bag(&bi, &hash_bag(&ngrams(&r.doc_title, 2), TEXT_BUCKETS));
            let be1 = embed_bag(&uni, &hash_bag(&ngrams(&r.doc_body, 1), TEXT_BUCKETS));
            let be2 = embed_bag(&bi, &hash_bag(&ngrams(&r.doc_body, 2), TEXT_BUCKETS));
            let cs = [
                cosine(&qe1, &te1),
                cosine(&qe1, &be1),
                cosine(&qe2, &te2),
                cosine(&qe2, &be2),
            ];
            for (k, &c) in cs.iter().enumerate() {
                per_cos[k].push((c, r.label));
            }
            mean_cos.push((cs.iter().sum::<f64>() / 4.0, r.label));
        }
        println!(
            "init cosine aucs: qt_uni={:.4} qb_uni={:.4} qt_bi={:.4} qb_bi={:.4} mean={:.4}",
            roc_auc(&per_cos[0]).unwrap(),
            roc_auc(&per_cos[1]).unwrap(),
            roc_auc(&per_cos[2]).unwrap(),
            roc_auc(&per_cos[3]).unwrap(),
            roc_auc(&mean_cos).unwrap()
        );
    }

    for t in [1u32, 2, 3, 5] {
        let cmp = compare_rewriters(
            &d.ground_truth,
            &d.ground_truth,
            &PerPrefix::uniform(t),
            1e-3,
        )
        .unwrap();
        println!(
            "rewriter t={t}: trained={:.4} recency={:.4} social={:.4}",
            cmp.trained, cmp.recency, cmp.social
        );
    }

    let cfg = TrainConfig {
        lr,
        epochs,
        batch_size,
        eps,
        ..TrainConfig::default()
    };
    println!("train cfg: lr={lr} epochs={epochs} batch={batch_size} eps={eps}");
    let t1 = Instant::now();
    let reports = run_ablations(&d.records, &cfg, 0.8).unwrap();
    println!("ablations: {:.1?}", t1.elapsed());
    for r in &reports {
        println!(
            "{:<14} auc={:.4} ndcg={:.4} losses={:?}",
            r.setting.as_str(),
            r.auc,
            r.ndcg,
            r.epoch_losses
        );
    }
}
