//! Error metrics for tracking campaigns.
//!
//! A run produces one error norm per step; a campaign aggregates them two
//! ways: per run (time-averaged RMSE, the box-plot statistic) and per step
//! (run-averaged RMSE, the time-series statistic). Both are root mean
//! squares, so the order of aggregation is the only difference.

use nalgebra::DVector;

/// State components measuring planar position.
pub const POSITION_COMPONENTS: [usize; 2] = [0, 2];

/// All five state components.
pub const FULL_STATE_COMPONENTS: [usize; 5] = [0, 1, 2, 3, 4];

/// Euclidean error norm over the selected components.
pub fn error_norm(estimate: &DVector<f64>, truth: &DVector<f64>, components: &[usize]) -> f64 {
    components
        .iter()
        .map(|&i| {
            let d = estimate[i] - truth[i];
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Per-step error norms of one run.
pub fn step_error_norms(
    estimates: &[DVector<f64>],
    truths: &[DVector<f64>],
    components: &[usize],
) -> Vec<f64> {
    assert_eq!(estimates.len(), truths.len(), "series length mismatch");
    estimates
        .iter()
        .zip(truths)
        .map(|(e, t)| error_norm(e, t, components))
        .collect()
}

/// Root mean square of a norm series (time-averaged RMSE of a run).
pub fn aggregate_rmse(norms: &[f64]) -> f64 {
    if norms.is_empty() {
        return 0.0;
    }
    (norms.iter().map(|v| v * v).sum::<f64>() / norms.len() as f64).sqrt()
}

/// Per-step RMSE across runs: `out[k] = sqrt(mean_r norms[r][k]^2)`.
pub fn per_step_rmse(runs: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    let t = first.len();
    let mut out = vec![0.0; t];
    for run in runs {
        assert_eq!(run.len(), t, "ragged run lengths");
        for (acc, v) in out.iter_mut().zip(run) {
            *acc += v * v;
        }
    }
    for acc in &mut out {
        *acc = (*acc / runs.len() as f64).sqrt();
    }
    out
}

/// Median of a sample (mean of the central pair for even sizes).
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}
