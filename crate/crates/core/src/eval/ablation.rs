//! Feature ablations for the click model and baselines for the rewriter.

use thiserror::Error;

use super::metrics::{ndcg, roc_auc, MetricError};
use crate::ranker::{
    train, AblationSetting, ClickRecord, TrainConfig, TrainError, TwoTowerModel,
};
use crate::rewriter::{
    recall_at_t, train_weights, GroundTruthRow, LinearWeights, PerPrefix,
    TrainError as RewriterTrainError,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least two sessions to split")]
    TooFewSessions,
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Test metrics of one feature setting.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub setting: AblationSetting,
    pub auc: f64,
    pub ndcg: f64,
    pub epoch_losses: Vec<f64>,
}

/// Splits session-ordered click records at a session boundary so that
/// roughly `train_frac` of the sessions land in the first slice. Sessions
/// are never straddled; later sessions become the test side, matching how
/// traffic would be split by date.
pub fn split_by_session(
    records: &[ClickRecord],
    train_frac: f64,
) -> Result<(&[ClickRecord], &[ClickRecord]), EvalError> {
    assert!(
        train_frac > 0.0 && train_frac < 1.0,
        "train fraction must be in (0, 1)"
    );
    let mut ids: Vec<u64> = Vec::new();
    for r in records {
        if ids.last() != Some(&r.session_id) {
            ids.push(r.session_id);
        }
    }
    if ids.len() < 2 {
        return Err(EvalError::TooFewSessions);
    }
    let cut = ((ids.len() as f64 * train_frac).round() as usize).clamp(1, ids.len() - 1);
    let boundary = ids[cut];
    let pos = records
        .iter()
        .position(|r| r.session_id >= boundary)
        .expect("boundary session exists");
    Ok(records.split_at(pos))
}

/// Groups (score, label) pairs by consecutive session id.
fn session_groups(records: &[ClickRecord], scores: &[f64]) -> Vec<Vec<(f64, u8)>> {
    let mut sessions: Vec<Vec<(f64, u8)>> = Vec::new();
    let mut current: Option<u64> = None;
    for (r, &s) in records.iter().zip(scores) {
        if current != Some(r.session_id) {
            sessions.push(Vec::new());
            current = Some(r.session_id);
        }
        sessions.last_mut().unwrap().push((s, r.label));
    }
    sessions
}

/// AUC and NDCG of a trained model on held-out records.
pub fn evaluate_model(
    model: &TwoTowerModel,
    test: &[ClickRecord],
) -> Result<(f64, f64), MetricError> {
    let scores = model.predict_batch(test);
    let examples: Vec<(f64, u8)> = scores
        .iter()
        .zip(test)
        .map(|(&s, r)| (s, r.label))
        .collect();
    let auc = roc_auc(&examples)?;
    let ndcg = ndcg(&session_groups(test, &scores))?;
    Ok((auc, ndcg))
}

/// Trains every feature setting from the same seed on the session-date
/// split and reports held-out AUC and NDCG for each.
pub fn run_ablations(
    records: &[ClickRecord],
    cfg: &TrainConfig,
    train_frac: f64,
) -> Result<Vec<MetricReport>, EvalError> {
    let (train_recs, test_recs) = split_by_session(records, train_frac)?;
    let mut reports = Vec::with_capacity(AblationSetting::ALL.len());
    for setting in AblationSetting::ALL {
        let mut model = TwoTowerModel::new(setting, cfg.seed);
        let trained = train(&mut model, train_recs, cfg)?;
        let (auc, ndcg) = evaluate_model(&model, test_recs)?;
        reports.push(MetricReport {
            setting,
            auc,
            ndcg,
            epoch_losses: trained.epoch_losses,
        });
    }
    Ok(reports)
}

/// Rank connections by how recently the searcher visited them.
pub const RECENCY_BASELINE: LinearWeights = LinearWeights {
    w: [0.0, -1.0, 0.0, 0.0, 0.0],
    bias: 0.0,
};

/// Rank connections by the stored social coefficient.
pub const SOCIAL_COEFFICIENT_BASELINE: LinearWeights = LinearWeights {
    w: [0.0, 0.0, 0.0, 0.0, 1.0],
    bias: 0.0,
};

#[derive(Debug, Clone, Copy)]
pub struct RewriterComparison {
    pub trained: f64,
    pub recency: f64,
    pub social: f64,
}

/// Trains the per-class linear scorer on one set of rows and reports
/// recall at the given thresholds against the two fixed baselines on
/// another (possibly the same) set.
pub fn compare_rewriters(
    train_rows: &[GroundTruthRow],
    eval_rows: &[GroundTruthRow],
    thresholds: &PerPrefix<u32>,
    ridge: f64,
) -> Result<RewriterComparison, RewriterTrainError> {
    let weights = train_weights(train_rows, ridge)?;
    Ok(RewriterComparison {
        trained: recall_at_t(eval_rows, &weights, thresholds)?,
        recency: recall_at_t(eval_rows, &PerPrefix::uniform(RECENCY_BASELINE), thresholds)?,
        social: recall_at_t(
            eval_rows,
            &PerPrefix::uniform(SOCIAL_COEFFICIENT_BASELINE),
            thresholds,
        )?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::synthetic::{generate, SyntheticConfig};

    fn data() -> crate::eval::synthetic::SyntheticData {
        generate(&SyntheticConfig {
            persons: 100,
            groups: 10,
            pages: 10,
            postings: 600,
            sessions: 220,
            results_per_session: 8,
            seed: 11,
            ..SyntheticConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn split_never_straddles_a_session() {
        let d = data();
        let (train, test) = split_by_session(&d.records, 0.8).unwrap();
        assert!(!train.is_empty() && !test.is_empty());
        let last_train = train.last().unwrap().session_id;
        let first_test = test[0].session_id;
        assert!(last_train < first_test);
        let total = d.records.len();
        assert_eq!(train.len() + test.len(), total);
        // Roughly 80 percent of sessions are on the training side.
        let train_sessions = train.last().unwrap().session_id + 1;
        let frac = train_sessions as f64 / d.session_count as f64;
        assert!((0.7..0.9).contains(&frac), "{frac}");
    }

    #[test]
    fn split_requires_two_sessions() {
        let d = data();
        let one: Vec<ClickRecord> = d
            .records
            .iter()
            .filter(|r| r.session_id == 0)
            .cloned()
            .collect();
        assert!(matches!(
            split_by_session(&one, 0.8),
            Err(EvalError::TooFewSessions)
        ));
    }

    #[test]
    fn trained_rewriter_beats_fixed_baselines_here() {
        let d = data();
        let thresholds = PerPrefix::uniform(3);
        let cmp = compare_rewriters(&d.ground_truth, &d.ground_truth, &thresholds, 1e-3).unwrap();
        assert!(cmp.trained >= cmp.recency, "{cmp:?}");
        assert!(cmp.trained >= cmp.social, "{cmp:?}");
    }

    #[test]
    fn ablation_harness_reports_all_settings() {
        let d = data();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 128,
            ..TrainConfig::default()
        };
        let reports = run_ablations(&d.records, &cfg, 0.8).unwrap();
        assert_eq!(reports.len(), 6);
        for r in &reports {
            assert!(r.auc > 0.0 && r.auc < 1.0, "{:?}", r);
            assert!(r.ndcg > 0.0 && r.ndcg <= 1.0, "{:?}", r);
            assert_eq!(r.epoch_losses.len(), 1);
        }
        let names: Vec<&str> = reports.iter().map(|r| r.setting.as_str()).collect();
        assert_eq!(
            names,
            ["ctr_only", "tr_only", "ctr_tr", "ngram_only", "ctr_ngram", "ctr_tr_ngram"]
        );
    }
}
