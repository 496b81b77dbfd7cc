//! Acquisition functions and next-experiment selection.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::domain::{Composition, CompositionGrid};
use crate::error::AcquisitionError;
use crate::inference::{MembershipPosterior, PropertyPosterior};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionKind {
    Entropy,
    Ucb,
    Combined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionField {
    pub grid: CompositionGrid,
    pub values: Vec<f64>,
    pub kind: AcquisitionKind,
}

/// How the UCB exploration weight groups `ln(D n² π²)`, `3` and `λ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UcbParenthesization {
    /// `β = sqrt(ln(D n² π²) / (3λ))`
    #[default]
    LogOverThreeLambda,
    /// `β = sqrt(λ · ln(D n² π²) / 3)`
    LambdaLogOverThree,
}

/// Shannon entropy (nats) of each membership row; `0·ln 0 = 0`.
pub fn entropy_acq(pm: &MembershipPosterior) -> AcquisitionField {
    let values = pm
        .probs
        .iter()
        .map(|row| {
            row.iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| -p * p.ln())
                .sum::<f64>()
                .max(0.0)
        })
        .collect();
    AcquisitionField {
        grid: pm.grid.clone(),
        values,
        kind: AcquisitionKind::Entropy,
    }
}

/// GP-UCB exploration weight at iteration `n` over `d` candidates.
pub fn ucb_beta(
    n: usize,
    d: usize,
    lambda: f64,
    reading: UcbParenthesization,
) -> Result<f64, AcquisitionError> {
    if n == 0 {
        return Err(AcquisitionError::InvalidUcb("iteration must be >= 1"));
    }
    if d == 0 {
        return Err(AcquisitionError::InvalidUcb("grid must be nonempty"));
    }
    if !(lambda > 0.0) {
        return Err(AcquisitionError::InvalidUcb("lambda must be positive"));
    }
    let arg = d as f64 * (n as f64).powi(2) * std::f64::consts::PI.powi(2);
    if !(arg > 0.0) {
        return Err(AcquisitionError::InvalidUcb("log argument must be positive"));
    }
    let log = arg.ln();
    Ok(match reading {
        UcbParenthesization::LogOverThreeLambda => (log / (3.0 * lambda)).sqrt(),
        UcbParenthesization::LambdaLogOverThree => (lambda * log / 3.0).sqrt(),
    })
}

/// `μ + β_n σ` on the posterior's grid.
pub fn ucb_acq(
    py: &PropertyPosterior,
    n: usize,
    lambda: f64,
    reading: UcbParenthesization,
) -> Result<AcquisitionField, AcquisitionError> {
    let beta = ucb_beta(n, py.grid.len(), lambda, reading)?;
    Ok(AcquisitionField {
        grid: py.grid.clone(),
        values: py
            .mean
            .iter()
            .zip(&py.sd)
            .map(|(m, s)| m + beta * s)
            .collect(),
        kind: AcquisitionKind::Ucb,
    })
}

/// Rescale to `[0, 1]`; a constant field maps to all zeros.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / span).collect()
}

/// Weight on the property acquisition: `min(max(s_cp), 2) / 2`.
pub fn schedule_weight(s_cp: [f64; 2]) -> f64 {
    s_cp[0].max(s_cp[1]).clamp(0.0, 2.0) / 2.0
}

/// `w·α̂_k + (1−w)·mean(α̂_pm)` with min–max normalized inputs. With no
/// phase-mapping fields available the weight is taken as 1.
pub fn combine_acq(
    ucb: &AcquisitionField,
    pm_fields: &[AcquisitionField],
    s_cp: [f64; 2],
) -> Result<AcquisitionField, AcquisitionError> {
    if pm_fields.iter().any(|f| f.grid != ucb.grid) {
        return Err(AcquisitionError::GridMismatch);
    }
    let own = min_max_normalize(&ucb.values);
    if pm_fields.is_empty() {
        return Ok(AcquisitionField {
            grid: ucb.grid.clone(),
            values: own,
            kind: AcquisitionKind::Combined,
        });
    }
    let mut pm_mean = vec![0.0; own.len()];
    for f in pm_fields {
        for (acc, v) in pm_mean.iter_mut().zip(min_max_normalize(&f.values)) {
            *acc += v / pm_fields.len() as f64;
        }
    }
    let w = schedule_weight(s_cp);
    Ok(AcquisitionField {
        grid: ucb.grid.clone(),
        values: own
            .iter()
            .zip(&pm_mean)
            .map(|(a, p)| w * a + (1.0 - w) * p)
            .collect(),
        kind: AcquisitionKind::Combined,
    })
}

/// Grid point maximizing `alpha` outside `excluded`; ties go to the lowest
/// composition.
pub fn select_next(
    alpha: &AcquisitionField,
    excluded: &[Composition],
) -> Result<Composition, AcquisitionError> {
    let skip: BTreeSet<usize> = excluded
        .iter()
        .filter_map(|&c| alpha.grid.index_of(c))
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in alpha.values.iter().enumerate() {
        if skip.contains(&i) {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.and_then(|(i, _)| alpha.grid.get(i))
        .ok_or(AcquisitionError::Exhausted)
}
