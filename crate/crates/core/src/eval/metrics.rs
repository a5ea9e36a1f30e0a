//! Ranking quality metrics.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("no examples")]
    Empty,
    #[error("need at least one positive and one negative example")]
    SingleClass,
    #[error("no session has a positive label")]
    NoPositives,
}

/// Exact ROC-AUC from rank statistics; ties between a positive and a
/// negative count half.
///
/// The numerator and denominator are integers, so the result is the exact
/// f64 quotient that naive pair counting would produce, at n log n cost.
pub fn roc_auc(examples: &[(f64, u8)]) -> Result<f64, MetricError> {
    if examples.is_empty() {
        return Err(MetricError::Empty);
    }
    let pos = examples.iter().filter(|(_, l)| *l > 0).count() as u128;
    let neg = examples.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.sort_by(|&a, &b| examples[a].0.total_cmp(&examples[b].0));

    // Twice the positive midrank sum stays integral: a tie group covering
    // 1-based ranks r..r+g-1 contributes 2r+g-1 per member.
    let mut doubled_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && examples[order[j]].0 == examples[order[i]].0 {
            j += 1;
        }
        let doubled_midrank = (i as u128 + 1) + (j as u128); // 2r + g - 1
        for &idx in &order[i..j] {
            if examples[idx].1 > 0 {
                doubled_rank_sum += doubled_midrank;
            }
        }
        i = j;
    }
    let num = doubled_rank_sum - pos * (pos + 1);
    let den = 2 * pos * neg;
    Ok(num as f64 / den as f64)
}

/// Full-session NDCG with binary gains; `None` when the session has no
/// positive, since the metric is undefined there.
///
/// Results are ordered by descending score; equal scores keep their input
/// order.
pub fn ndcg_session(results: &[(f64, u8)]) -> Option<f64> {
    let pos = results.iter().filter(|(_, l)| *l > 0).count();
    if pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..results.len()).collect();
    order.sort_by(|&a, &b| results[b].0.total_cmp(&results[a].0));
    let discount = |rank: usize| 1.0 / ((rank + 2) as f64).log2();
    let dcg: f64 = order
        .iter()
        .enumerate()
        .filter(|&(_, &i)| results[i].1 > 0)
        .map(|(rank, _)| discount(rank))
        .sum();
    let idcg: f64 = (0..pos).map(discount).sum();
    Some(dcg / idcg)
}

/// Mean NDCG over sessions, skipping sessions without positives.
pub fn ndcg(sessions: &[Vec<(f64, u8)>]) -> Result<f64, MetricError> {
    if sessions.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut sum = 0.0;
    let mut n = 0u64;
    for session in sessions {
        if let Some(v) = ndcg_session(session) {
            sum += v;
            n += 1;
        }
    }
    if n == 0 {
        return Err(MetricError::NoPositives);
    }
    Ok(sum / n as f64)
}
