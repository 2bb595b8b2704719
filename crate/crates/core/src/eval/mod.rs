//! Next-set scoring, ranking metrics and the BCE comparison objective.

mod bce;
mod metrics;
mod predict;

pub use bce::{bce_from_logits, bce_loss, bce_loss_grad};
pub use metrics::{
    coverage_at, evaluate_topn, evaluate_users, f1, format_table, ild_at, ndcg_at, recall_at, write_metrics_csv,
    write_per_user_csv, Holdout, IldDistance, MetricContext, MetricsReport, TopN,
};
pub use predict::{predict_scores, Ranking, ScoreParts};
