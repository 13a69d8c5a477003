//! Forecast metrics, baseline predictors and rank-based significance tests.

mod baselines;
mod metrics;
mod report;
mod stats;

pub use baselines::{
    actual_future, historical_average, persistence, rows_to_tensor, target_history, KnnRegressor, MlpBaseline,
    MlpConfig, KNN_EPSILON, KNN_K,
};
pub use metrics::{
    compute_metrics, evaluate_horizons, grouped_mae, horizon_index, HorizonRow, Metrics, MetricsReport, HORIZONS_MIN,
    MAPE_FLOOR_MPH,
};
pub use report::{metric_chart_svg, metrics_csv, Metric, METRICS_CSV_HEADER};
pub use stats::{kruskal_wallis, mid_ranks, multiple_comparison, KwtResult, MctResult, PairComparison};
