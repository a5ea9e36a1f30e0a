//! Offline evaluation: ranking metrics, a synthetic click corpus with a
//! planted preference model, feature ablations, and click log files.

mod ablation;
mod clicklog;
mod metrics;
mod synthetic;

pub use ablation::{
    compare_rewriters, evaluate_model, run_ablations, split_by_session, EvalError, MetricReport,
    RewriterComparison, RECENCY_BASELINE, SOCIAL_COEFFICIENT_BASELINE,
};
pub use clicklog::{
    load_click_log, read_click_log, save_click_log, write_click_log, ClickLogError,
};
pub use metrics::{ndcg, ndcg_session, roc_auc, MetricError};
pub use synthetic::{click_probability, generate, text_match, SyntheticConfig, SyntheticData};
