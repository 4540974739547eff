//! Evaluation protocols: metrics, label noise, feature ablation, sweeps and
//! 2-D projection of exported embeddings.

mod ablation;
mod metrics;
mod noise;
mod project;
mod sweep;

pub use ablation::{ablate_features, parse_drop, ColumnMask, Feature};
pub use metrics::{compute_metrics, metrics_table, ClassMetrics, MetricsReport, TableRow};
pub use noise::{inject_label_noise, noisy_records};
pub use project::{project_2d, read_embeddings, silhouette_score, tsne, Embeddings, TsneConfig};
pub use sweep::{
    plot_sweep, prepare_job, read_results, resample_proportion, run_point, run_sweep, subsample, summarize, GridValue,
    Point, SweepKind, SweepRow, SweepSpec, RESULTS_FILE, RESULTS_HEADER,
};
