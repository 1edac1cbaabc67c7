//! Depth metrics with caps and median scaling, trajectory error, and the
//! per-class and brightness breakdowns.

mod metrics;
mod report;

pub use metrics::{
    ate, category_metrics, depth_metrics, median, merge_categories, preprocess, CategoryRow, MetricReport,
    TrajectoryReport, EVAL_MIN_DEPTH,
};
pub use report::{
    adjust_brightness, brightness_sweep, depth_valid, evaluate_categories, evaluate_depth, evaluate_pose,
    load_eval_scenes, predict_trajectory, run_eval, DepthPredictor, EvalFrame, EvalOptions, EvalScene, EvalSummary,
    PosePredictor, METRIC_COLUMNS,
};
