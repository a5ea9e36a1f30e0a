use socsearch_core::graph::{
    EdgeKind, InteractionRecord, NodeId, NodeKind, PostingContainer, PostingDoc, SocialGraph,
};
use socsearch_core::index::{InvertedIndex, Term};
use socsearch_core::query::SExpr;
use socsearch_core::rewriter::{
    mean_cost, sweep_tp, LinearWeights, PerPrefix, PrefixClass, RewriteModel,
};

const NOW: u64 = 1_000_000;

fn build() -> (InvertedIndex, SocialGraph, Vec<(NodeId, SExpr)>) {
    let mut g = SocialGraph::new();
    let s = NodeId(0);
    for p in 0..=5u64 {
        g.add_node(NodeId(p), NodeKind::Person).unwrap();
    }
    for gr in 6..=9u64 {
        g.add_node(NodeId(gr), NodeKind::Group).unwrap();
    }
    for pg in 10..=13u64 {
        g.add_node(NodeId(pg), NodeKind::Page).unwrap();
    }
    let coefs = [0.9, 0.7, 0.5, 0.3];
    for (i, &c) in coefs.iter().enumerate() {
        let f = NodeId(1 + i as u64);
        let gr = NodeId(6 + i as u64);
        let pg = NodeId(10 + i as u64);
        g.add_edge(s, f, EdgeKind::FriendOf).unwrap();
        g.add_edge(s, gr, EdgeKind::MemberOf).unwrap();
        g.add_edge(s, pg, EdgeKind::Follows).unwrap();
        for e in [f, gr, pg] {
            g.set_interaction(
                s,
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

    // Posting blocks in candidate-rank order; every title matches the query.
    let mut next_id = 14u64;
    let mut docs: Vec<PostingDoc> = Vec::new();
    let mut emit = |docs: &mut Vec<PostingDoc>, count: usize, author: u64, container: Option<PostingContainer>| {
        for _ in 0..count {
            let mut d = PostingDoc::new(NodeId(next_id), NodeId(author), 0);
            d.title = "zeta".to_string();
            d.container = container;
            docs.push(d);
            next_id += 1;
        }
    };
    let blocks: [(usize, usize, usize); 4] = [(17, 17, 16), (14, 13, 13), (15, 15, 15), (1, 1, 1)];
    for (i, &(a, b, c)) in blocks.iter().enumerate() {
        emit(&mut docs, a, 1 + i as u64, None);
        emit(&mut docs, b, 5, Some(PostingContainer::Group(NodeId(6 + i as u64))));
        emit(&mut docs, c, 5, Some(PostingContainer::Page(NodeId(10 + i as u64))));
    }
    let mut idx = InvertedIndex::new();
    for d in docs {
        g.add_posting(&d).unwrap();
        idx.add_doc(d).unwrap();
    }
    let kw = SExpr::Term(Term::text("zeta").unwrap());
    (idx, g, vec![(s, kw)])
}

fn main() {
    let (idx, g, workload) = build();
    let mut weights: PerPrefix<LinearWeights> = PerPrefix::uniform(LinearWeights::zero());
    for class in PrefixClass::ALL {
        weights.get_mut(class).w[4] = 1.0;
    }
    for t in 0..=5u32 {
        let model = RewriteModel {
            weights,
            thresholds: PerPrefix::uniform(t),
        };
        println!("uniform t={t}: mean cost {}", mean_cost(&idx, &g, &workload, &model, NOW));
    }
    for class in PrefixClass::ALL {
        let mut th = PerPrefix::uniform(2u32);
        *th.get_mut(class) += 1;
        let model = RewriteModel { weights, thresholds: th };
        println!(
            "bump {}: mean cost {}",
            class.as_str(),
            mean_cost(&idx, &g, &workload, &model, NOW)
        );
    }
    let out = sweep_tp(&idx, &g, &workload, &weights, &[], 200.0, NOW);
    println!(
        "sweep: thresholds inv={} ab={} go={} po={} uniform_t={} refined={} at_floor={}",
        out.thresholds.involves,
        out.thresholds.authored_by,
        out.thresholds.group_of,
        out.thresholds.page_of,
        out.uniform_t,
        out.refined,
        out.at_floor
    );
}
