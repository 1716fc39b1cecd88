//! Depth metrics, event-only inference, dataset evaluation and plotting.

mod evaluate;
mod infer;
mod metrics;
mod plot;

pub use evaluate::{evaluate, EvalOptions, EvalReport, METRICS_JSON, METRICS_TXT};
pub use infer::{infer, InferOptions, InferReport, Predictor, TimingReport, DEPTH_OUT_DIR, TIMING_FILE};
pub use metrics::{
    aggregate, constant_baseline, gt_validity, mean_error_at_cutoffs, median, AggregateMetrics, Alignment,
    CropRegion, CutoffError, DepthMetrics, MetricOptions, DEFAULT_CUTOFFS,
};
pub use plot::{
    hstack, plot, read_sample_set, render_depth, render_error, render_events, render_loss_curve, render_panel,
    SampleRecord, SampleSet, SAMPLES_FILE,
};
