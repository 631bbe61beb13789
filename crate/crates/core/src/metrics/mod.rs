//! Distribution distances and the evaluation protocol.
//!
//! Point sets are slices of equally long coordinate vectors.

mod divergence;
mod evaluate;
mod wasserstein;

pub use divergence::{knn_kl, median_pairwise_distance, mmd, msmd, MIN_BANDWIDTH, MIN_DISTANCE};
pub use evaluate::{
    evaluate, AnchorSamples, EvalProtocol, Evaluation, LocalMetrics, MetricReport, MetricValues,
    METRIC_NAMES,
};
pub use wasserstein::{
    exact_wasserstein, hungarian, sliced_wasserstein, wasserstein, wasserstein_1d_pow,
    wasserstein_with_mode, WassersteinMode, EXACT_LIMIT, SLICE_DIRECTIONS,
};

use crate::error::{Error, Result};

/// Both sets non-empty, every point of the same dimension.
pub(crate) fn check_sets(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("metric needs two non-empty point sets"));
    }
    let dim = a[0].len();
    if dim == 0 || a.iter().chain(b).any(|p| p.len() != dim) {
        return Err(Error::Shape(format!(
            "metric operands must share one positive dimension (first point has {dim})"
        )));
    }
    Ok(())
}
