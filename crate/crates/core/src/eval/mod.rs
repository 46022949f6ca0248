//! Likelihood, displacement, and confidence-threshold metrics, plus the
//! ablation report and mixture heatmaps.

mod metrics;
mod report;

pub use metrics::{ade, compute_metrics, ct_delta, log_likelihood, point_estimate, prob_within, Metrics};
pub use report::{heatmap_svg, report_csv, run_benchmark, ModelVariant, ReportRow, REPORT_HEADER};

use crate::config::EvalConfig;
use crate::dataset::Sample;
use crate::model::{ModelError, Network};
use crate::scalar::Scalar;

/// Runs `net` on `samples` and scores it against their targets.
pub fn evaluate<T: Scalar>(net: &Network<T>, samples: &[Sample], cfg: &EvalConfig) -> Result<Metrics, ModelError> {
    if samples.is_empty() {
        return Err(ModelError::Empty("test set"));
    }
    let mixtures = net.predict_samples(samples)?;
    let targets: Vec<(f64, f64)> = samples.iter().map(|s| s.target).collect();
    Ok(compute_metrics(&mixtures, &targets, cfg))
}
