//! Learning algorithms used by the agents.
//!
//! * [`spectral`]: cosine-affinity spectral clustering of Raman spectra and
//!   alignment of cluster ids with composition order.
//! * [`changepoint`]: importance-sampled posterior over the two change
//!   points, giving a phase-membership posterior on the grid.
//! * [`gp`]: Matérn-5/2 and RBF Gaussian-process regression with
//!   marginal-likelihood hyperparameter fitting.
//! * [`coregion`]: joint change-point / piecewise-GP model in which structure
//!   labels and property data share one posterior.

pub mod changepoint;
pub mod coregion;
pub mod gp;
pub mod spectral;

pub use changepoint::{membership, phase_map_infer, PhaseMapPosterior};
pub use coregion::{coregional_infer, CoregionalPosterior};
pub use gp::{gp_fit, gp_predict, matern52, rbf, GpHyper, GpModel, KernelKind};
pub use spectral::{align_labels, cosine_dissimilarity, spectral_cluster};

use serde::{Deserialize, Serialize};

use crate::domain::{CompositionGrid, N_REGIONS};
use crate::error::InferenceError;

/// Per-grid-point phase-region probabilities. Rows sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipPosterior {
    pub grid: CompositionGrid,
    pub probs: Vec<[f64; N_REGIONS]>,
}

impl MembershipPosterior {
    /// Most probable region per grid point; ties go to the lower region.
    pub fn argmax_labels(&self) -> Vec<usize> {
        self.probs
            .iter()
            .map(|row| {
                let mut best = 0;
                for r in 1..N_REGIONS {
                    if row[r] > row[best] {
                        best = r;
                    }
                }
                best
            })
            .collect()
    }
}

/// Normal summary of each change point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChangePointPosterior {
    pub means: [f64; 2],
    pub sds: [f64; 2],
}

/// Marginal mean and standard deviation of the functional property.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyPosterior {
    pub grid: CompositionGrid,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

/// Sampler sizes and numerical settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceParams {
    pub n_prior_samples: usize,
    pub n_resampled: usize,
    pub subsamples_per_draw: usize,
    pub jitter: f64,
    /// Additive smoothing inside the categorical log-likelihood.
    pub label_smoothing: f64,
    pub length_scale_bounds: (f64, f64),
    pub signal_sd_bounds: (f64, f64),
    pub noise_sd_bounds: (f64, f64),
    pub restarts: usize,
    /// Prior support for the per-region GP hyperparameters.
    pub coregion_length_scale: (f64, f64),
    pub coregion_signal_sd: (f64, f64),
    pub coregion_noise_sd: (f64, f64),
}

impl Default for InferenceParams {
    fn default() -> Self {
        Self {
            n_prior_samples: 2000,
            n_resampled: 50,
            subsamples_per_draw: 5,
            jitter: 1e-6,
            label_smoothing: 1e-6,
            length_scale_bounds: (0.5, 50.0),
            signal_sd_bounds: (0.1, 50.0),
            noise_sd_bounds: (1e-3, 5.0),
            restarts: 8,
            coregion_length_scale: (1.0, 20.0),
            coregion_signal_sd: (1.0, 20.0),
            coregion_noise_sd: (0.01, 0.1),
        }
    }
}

impl InferenceParams {
    pub fn validate(&self) -> Result<(), InferenceError> {
        if self.n_prior_samples == 0
            || self.n_resampled == 0
            || self.subsamples_per_draw == 0
            || self.restarts == 0
        {
            return Err(InferenceError::InvalidParams("sample counts must be positive"));
        }
        if !(self.jitter > 0.0) || !(self.label_smoothing > 0.0) {
            return Err(InferenceError::InvalidParams("jitter and smoothing must be positive"));
        }
        for (lo, hi) in [
            self.length_scale_bounds,
            self.signal_sd_bounds,
            self.noise_sd_bounds,
            self.coregion_length_scale,
            self.coregion_signal_sd,
            self.coregion_noise_sd,
        ] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(InferenceError::InvalidParams("bounds must satisfy 0 < lo <= hi"));
            }
        }
        Ok(())
    }
}

/// Kish effective sample size of normalized weights.
pub(crate) fn effective_sample_size(weights: &[f64]) -> f64 {
    let sq: f64 = weights.iter().map(|w| w * w).sum();
    if sq > 0.0 {
        1.0 / sq
    } else {
        0.0
    }
}

/// Normalize log-weights in place to probabilities (max-shifted).
pub(crate) fn normalize_log_weights(logw: &[f64]) -> Result<Vec<f64>, InferenceError> {
    let max = logw
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(InferenceError::DegenerateWeights);
    }
    let mut w: Vec<f64> = logw
        .iter()
        .map(|&l| if l.is_finite() { (l - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(InferenceError::DegenerateWeights);
    }
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

/// Weighted mean and standard deviation of sorted change-point pairs.
pub(crate) fn change_point_summary(pairs: &[[f64; 2]], weights: &[f64]) -> ChangePointPosterior {
    let mut means = [0.0; 2];
    for (c, w) in pairs.iter().zip(weights) {
        means[0] += w * c[0];
        means[1] += w * c[1];
    }
    let mut var = [0.0; 2];
    for (c, w) in pairs.iter().zip(weights) {
        var[0] += w * (c[0] - means[0]).powi(2);
        var[1] += w * (c[1] - means[1]).powi(2);
    }
    ChangePointPosterior {
        means,
        sds: [var[0].max(0.0).sqrt(), var[1].max(0.0).sqrt()],
    }
}

/// Weighted average of one-hot memberships over the grid.
pub(crate) fn membership_on_grid(
    grid: &CompositionGrid,
    pairs: &[[f64; 2]],
    weights: &[f64],
) -> MembershipPosterior {
    let mut probs = vec![[0.0; N_REGIONS]; grid.len()];
    for (c, &w) in pairs.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (row, &x) in probs.iter_mut().zip(grid.points()) {
            row[changepoint::region_of(c, x)] += w;
        }
    }
    // Remove the last few ulps of drift so rows sum to one.
    for row in probs.iter_mut() {
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|p| *p /= s);
        }
    }
    MembershipPosterior {
        grid: grid.clone(),
        probs,
    }
}
