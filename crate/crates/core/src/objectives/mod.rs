//! Training objectives and image quality metrics.

mod losses;
mod metrics;
mod report;

pub use losses::{loss_high, loss_low, loss_total, record_loss, LossBreakdown, LossWeights, Targets};
pub use metrics::{
    body_mask, evaluate_pair, metric_mae, metric_psnr, metric_ssim, metric_ssim_windowed, BodyMask,
    SampleMetrics, DEFAULT_MASK_THRESHOLD, SSIM_K1, SSIM_K2,
};
pub use report::{format_g6, MetricRow, MetricsReport, CSV_HEADER};
