//! Value types shared across the simulator: compositions, the search grid,
//! physical samples, observations and phase labels.

use serde::{Deserialize, Serialize};

use crate::error::DomainError;

/// Number of phase regions on the pseudo-binary line (two change points).
pub const N_REGIONS: usize = 3;

/// Lower edge of the composition axis, in percent substituent.
pub const DOMAIN_MIN: f64 = 0.0;
/// Upper edge of the composition axis, in percent substituent.
pub const DOMAIN_MAX: f64 = 100.0;

/// Percent substituent along the composition line.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Composition(pub f64);

impl Composition {
    pub fn value(self) -> f64 {
        self.0
    }
}

impl std::fmt::Display for Composition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Evenly spaced, strictly increasing set of candidate compositions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionGrid {
    start: f64,
    stop: f64,
    points: Vec<f64>,
}

impl CompositionGrid {
    /// Grid of `count` evenly spaced points over `[start, stop]`.
    pub fn new(start: f64, stop: f64, count: usize) -> Result<Self, DomainError> {
        if count < 3 {
            return Err(DomainError::GridTooSmall(count));
        }
        if !(start.is_finite() && stop.is_finite()) || stop <= start {
            return Err(DomainError::InvalidGridBounds { start, stop });
        }
        if start < DOMAIN_MIN || stop > DOMAIN_MAX {
            return Err(DomainError::InvalidGridBounds { start, stop });
        }
        let step = (stop - start) / (count - 1) as f64;
        let points = (0..count)
            .map(|i| if i == count - 1 { stop } else { start + step * i as f64 })
            .collect();
        Ok(Self {
            start,
            stop,
            points,
        })
    }

    /// Default search grid: 101 points over [0, 100] %, step 1.
    pub fn standard() -> Self {
        Self::new(DOMAIN_MIN, DOMAIN_MAX, 101).expect("standard grid is valid")
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn step(&self) -> f64 {
        (self.stop - self.start) / (self.points.len() - 1) as f64
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn stop(&self) -> f64 {
        self.stop
    }

    pub fn get(&self, index: usize) -> Option<Composition> {
        self.points.get(index).copied().map(Composition)
    }

    /// Index of the grid point equal to `x` (after snapping), if on the grid.
    pub fn index_of(&self, x: Composition) -> Option<usize> {
        let idx = self.nearest_index(x.0)?;
        (self.points[idx] == x.0).then_some(idx)
    }

    fn nearest_index(&self, x: f64) -> Option<usize> {
        if !x.is_finite() {
            return None;
        }
        let step = self.step();
        let raw = (x - self.start) / step;
        if raw <= 0.0 {
            return Some(0);
        }
        let last = self.points.len() - 1;
        if raw >= last as f64 {
            return Some(last);
        }
        let lo = raw.floor() as usize;
        let hi = lo + 1;
        // Compare actual distances so ties resolve against the stored points.
        let d_lo = x - self.points[lo];
        let d_hi = self.points[hi] - x;
        Some(if d_hi < d_lo { hi } else { lo })
    }
}

/// Nearest grid point to `x`; exact ties go to the lower point.
pub fn snap_to_grid(x: f64, grid: &CompositionGrid) -> Result<Composition, DomainError> {
    grid.nearest_index(x)
        .map(|i| Composition(grid.points[i]))
        .ok_or(DomainError::NonFinite(x))
}

/// Identifier of a physical sample in the sample repository.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SampleId(pub u64);

impl std::fmt::Display for SampleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleStatus {
    InRepository,
    CheckedOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: SampleId,
    pub composition: Composition,
    pub status: SampleStatus,
    pub synthesized_at: f64,
}

/// Raman intensities over a shared shift axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RamanSpectrum {
    pub sample_id: SampleId,
    pub shifts: Vec<f64>,
    pub intensities: Vec<f64>,
}

impl RamanSpectrum {
    pub fn new(
        sample_id: SampleId,
        shifts: Vec<f64>,
        intensities: Vec<f64>,
    ) -> Result<Self, DomainError> {
        if shifts.len() != intensities.len() || shifts.is_empty() {
            return Err(DomainError::InvalidSpectrum("length mismatch"));
        }
        if shifts.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DomainError::InvalidSpectrum("shifts not strictly increasing"));
        }
        if intensities.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(DomainError::InvalidSpectrum("negative or non-finite intensity"));
        }
        if !intensities.iter().any(|v| *v > 0.0) {
            return Err(DomainError::InvalidSpectrum("all intensities zero"));
        }
        Ok(Self {
            sample_id,
            shifts,
            intensities,
        })
    }

    /// Shift of the strongest peak, used as a one-number summary in logs.
    pub fn dominant_shift(&self) -> f64 {
        let mut best = 0;
        for (i, v) in self.intensities.iter().enumerate() {
            if *v > self.intensities[best] {
                best = i;
            }
        }
        self.shifts[best]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropertyMeasurement {
    pub sample_id: SampleId,
    pub value: f64,
    pub measured_at: f64,
}

/// Compositions paired with per-region probability vectors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseLabelSet {
    compositions: Vec<f64>,
    labels: Vec<[f64; N_REGIONS]>,
}

impl PhaseLabelSet {
    pub fn new(compositions: Vec<f64>, labels: Vec<[f64; N_REGIONS]>) -> Result<Self, DomainError> {
        if compositions.len() != labels.len() {
            return Err(DomainError::LabelMismatch {
                compositions: compositions.len(),
                labels: labels.len(),
            });
        }
        for label in &labels {
            let sum: f64 = label.iter().sum();
            if label.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(DomainError::InvalidLabel(*label));
            }
        }
        Ok(Self {
            compositions,
            labels,
        })
    }

    /// One-hot labels from hard region indices.
    pub fn from_hard(compositions: Vec<f64>, regions: &[usize]) -> Result<Self, DomainError> {
        let labels = regions
            .iter()
            .map(|&r| {
                if r >= N_REGIONS {
                    Err(DomainError::RegionOutOfRange(r))
                } else {
                    let mut v = [0.0; N_REGIONS];
                    v[r] = 1.0;
                    Ok(v)
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(compositions, labels)
    }

    pub fn len(&self) -> usize {
        self.compositions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.compositions.is_empty()
    }

    pub fn compositions(&self) -> &[f64] {
        &self.compositions
    }

    pub fn labels(&self) -> &[[f64; N_REGIONS]] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &[f64; N_REGIONS])> {
        self.compositions.iter().copied().zip(self.labels.iter())
    }
}
