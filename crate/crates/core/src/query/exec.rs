//! Document-at-a-time execution over sorted posting lists.
//!
//! Every cursor answers `next_ge(bound)`: the smallest doc id ≥ bound in
//! its subexpression. Term cursors advance linearly and count each element
//! they step past, so the cost report is a deterministic, machine-independent
//! proxy for CPU work. `cost_of` runs the same merge as `execute` and must
//! report identical numbers.

use super::SExpr;
use crate::graph::NodeId;
use crate::index::InvertedIndex;

/// Deterministic execution cost: posting-list elements advanced plus the
/// number of term lookups performed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CostReport {
    pub postings_touched: u64,
    pub terms_opened: u64,
}

impl CostReport {
    /// Scalar used for budget comparisons.
    pub fn total(&self) -> u64 {
        self.postings_touched + self.terms_opened
    }
}

/// Result of executing a query: matching doc ids in ascending order plus
/// the cost incurred to produce them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionResult {
    pub doc_ids: Vec<NodeId>,
    pub cost: CostReport,
}

enum Cursor<'a> {
    Term { list: &'a [NodeId], pos: usize },
    And(Vec<Cursor<'a>>),
    Or(Vec<Cursor<'a>>),
}

impl<'a> Cursor<'a> {
    fn build(idx: &'a InvertedIndex, expr: &SExpr, opened: &mut u64) -> Cursor<'a> {
        match expr {
            SExpr::Term(t) => {
                *opened += 1;
                Cursor::Term {
                    list: idx.lookup(t),
                    pos: 0,
                }
            }
            SExpr::And(children) => {
                Cursor::And(children.iter().map(|c| Self::build(idx, c, opened)).collect())
            }
            SExpr::Or(children) => {
                Cursor::Or(children.iter().map(|c| Self::build(idx, c, opened)).collect())
            }
        }
    }

    /// Smallest doc id ≥ bound in this subexpression, or None when
    /// exhausted. Term cursors count every element they advance past.
    fn next_ge(&mut self, bound: u64, touched: &mut u64) -> Option<u64> {
        match self {
            Cursor::Term { list, pos } => {
                while *pos < list.len() && list[*pos].0 < bound {
                    *pos += 1;
                    *touched += 1;
                }
                list.get(*pos).map(|id| id.0)
            }
            Cursor::Or(children) => children
                .iter_mut()
                .filter_map(|c| c.next_ge(bound, touched))
                .min(),
            Cursor::And(children) => {
                let mut target = bound;
                'align: loop {
                    target = children[0].next_ge(target, touched)?;
                    for child in children[1..].iter_mut() {
                        let v = child.next_ge(target, touched)?;
                        if v > target {
                            target = v;
                            continue 'align;
                        }
                    }
                    return Some(target);
                }
            }
        }
    }
}

fn run(idx: &InvertedIndex, expr: &SExpr, collect: bool) -> ExecutionResult {
    let mut cost = CostReport::default();
    let mut cursor = Cursor::build(idx, expr, &mut cost.terms_opened);
    let mut doc_ids = Vec::new();
    let mut bound = 0u64;
    while let Some(doc) = cursor.next_ge(bound, &mut cost.postings_touched) {
        if collect {
            doc_ids.push(NodeId(doc));
        }
        match doc.checked_add(1) {
            Some(next) => bound = next,
            None => break,
        }
    }
    ExecutionResult { doc_ids, cost }
}

/// Evaluates the expression with exact set semantics; doc ids come back
/// ascending and duplicate-free.
pub fn execute(idx: &InvertedIndex, expr: &SExpr) -> ExecutionResult {
    run(idx, expr, true)
}

/// Cost of evaluating the expression, without materializing results.
pub fn cost_of(idx: &InvertedIndex, expr: &SExpr) -> CostReport {
    run(idx, expr, false).cost
}
