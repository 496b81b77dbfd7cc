//! Campaign scoring: percent minimum regret, Fowlkes–Mallows phase-map
//! agreement and Student-t confidence intervals across runs.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::domain::CompositionGrid;
use crate::error::MetricsError;
use crate::truth::ChallengeSpec;

/// Best-so-far regret after each measurement, as a percentage of the
/// property's range on the grid. Uses noise-free truth at the measured
/// compositions.
pub fn percent_min_regret(
    measured: &[f64],
    truth: &ChallengeSpec,
    grid: &CompositionGrid,
) -> Result<Vec<f64>, MetricsError> {
    if measured.is_empty() {
        return Err(MetricsError::TooFew { needed: 1, got: 0 });
    }
    let (_, y_star, y_floor) = truth.grid_extrema(grid);
    let range = y_star - y_floor;
    let mut best = f64::NEG_INFINITY;
    Ok(measured
        .iter()
        .map(|&x| {
            best = best.max(truth.true_property(x));
            if range > 0.0 {
                (100.0 * (y_star - best) / range).clamp(0.0, 100.0)
            } else {
                0.0
            }
        })
        .collect())
}

/// Pair-counting Fowlkes–Mallows index in `[0, 1]`. Defined as 0 when
/// either labeling has no co-clustered pair.
pub fn fowlkes_mallows(pred: &[usize], truth: &[usize]) -> Result<f64, MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.len() < 2 {
        return Err(MetricsError::TooFew {
            needed: 2,
            got: pred.len(),
        });
    }
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for i in 0..pred.len() {
        for j in (i + 1)..pred.len() {
            let p = pred[i] == pred[j];
            let t = truth[i] == truth[j];
            match (p, t) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    let denom = ((tp + fp) as f64 * (tp + fn_) as f64).sqrt();
    Ok(if denom > 0.0 { tp as f64 / denom } else { 0.0 })
}

/// Mean and 95% Student-t half-width.
pub fn ci95(values: &[f64]) -> Result<(f64, f64), MetricsError> {
    let n = values.len();
    if n < 2 {
        return Err(MetricsError::TooFew { needed: 2, got: n });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("degrees of freedom positive")
        .inverse_cdf(0.975);
    Ok((mean, t * var.sqrt() / (n as f64).sqrt()))
}
