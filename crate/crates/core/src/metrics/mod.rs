//! Image- and pixel-level detection metrics and multi-seed reports.

mod classification;
mod report;
mod segmentation;

pub use classification::{aupr, auroc, f1_max, F1Max, LabeledScores};
pub use report::{aggregate_runs, EvalReport, MetricSummary, SeedRun, MEAN_ROW};
pub use segmentation::{
    connected_regions, pixel_auroc, pixel_auroc_with, pixel_f1_max, pixel_f1_max_with, pro, pro_curve, pro_with,
    trapezoid, PixelPooling, SegPair,
};

pub const PRO_FPR_LIMIT: f64 = 0.3;
pub const PRO_THRESHOLDS: usize = 200;
