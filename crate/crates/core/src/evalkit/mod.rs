//! Evaluation protocols: PSNR, SSIM, feature similarity, diversity,
//! best-of-N and averaged predictions, plus CSV and PGM output.
//!
//! Videos are `[t, c, h, w]` tensors with values in [0, 1].

mod features;
mod metrics;
mod protocols;
mod report;

pub use features::{cosine, feature_similarity, similarity_from_features, FeatureExtractor, Features, FEATURE_LAYERS};
pub use metrics::{
    gaussian_window, psnr, psnr_from_mse, ssim, ssim_image, PSNR_CAP, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW,
};
pub use protocols::{averaged_prediction, best_curve, best_of_n, diversity, Metric};
pub use report::{mean_stderr, pgm_bytes, write_pgm, AggregateRow, MetricRow, MetricsReport};
