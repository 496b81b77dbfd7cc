//! Synthetic synthesis–structure–property oracle for the two optimization
//! challenges: a three-region phase line, one Raman template per region and
//! a functional-property landscape per challenge.
//!
//! All numbers here are stand-ins chosen to match the qualitative shape of
//! the target system. They live in [`ChallengeSpec`] so a run config can
//! override any of them.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{
    CompositionGrid, RamanSpectrum, SampleId, DOMAIN_MAX, DOMAIN_MIN, N_REGIONS,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianPeak {
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
}

impl GaussianPeak {
    pub fn eval(&self, x: f64) -> f64 {
        let z = (x - self.center) / self.width;
        self.amplitude * (-0.5 * z * z).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RamanModel {
    pub shift_min: f64,
    pub shift_max: f64,
    pub points: usize,
    pub half_width: f64,
    /// Lorentzian peak centers for each region, cm⁻¹.
    pub centers: [[f64; 3]; N_REGIONS],
}

impl Default for RamanModel {
    fn default() -> Self {
        Self {
            shift_min: 100.0,
            shift_max: 700.0,
            points: 256,
            half_width: 10.0,
            centers: [
                [140.0, 220.0, 470.0],
                [150.0, 260.0, 520.0],
                [170.0, 290.0, 610.0],
            ],
        }
    }
}

impl RamanModel {
    pub fn shifts(&self) -> Vec<f64> {
        let step = (self.shift_max - self.shift_min) / (self.points - 1) as f64;
        (0..self.points)
            .map(|i| self.shift_min + step * i as f64)
            .collect()
    }

    /// Noise-free spectrum of `region`: three unit-height Lorentzians.
    pub fn template(&self, region: usize) -> Vec<f64> {
        let centers = self.centers[region];
        self.shifts()
            .into_iter()
            .map(|s| {
                centers
                    .iter()
                    .map(|c| {
                        let z = (s - c) / self.half_width;
                        1.0 / (1.0 + z * z)
                    })
                    .sum()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    pub d33_sd: f64,
    pub raman_sd: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            d33_sd: 0.05,
            raman_sd: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Challenge {
    One,
    Two,
}

impl Challenge {
    pub fn id(self) -> u8 {
        match self {
            Challenge::One => 1,
            Challenge::Two => 2,
        }
    }
}

impl TryFrom<u8> for Challenge {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Challenge::One),
            2 => Ok(Challenge::Two),
            other => Err(format!("unknown challenge id {other} (expected 1 or 2)")),
        }
    }
}

impl From<Challenge> for u8 {
    fn from(c: Challenge) -> u8 {
        c.id()
    }
}

impl std::fmt::Display for Challenge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.id())
    }
}

/// Optional replacements for any part of a challenge's ground truth.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub change_points: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub property: Option<Vec<GaussianPeak>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raman: Option<RamanModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d33_sd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raman_sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChallengeSpec {
    pub challenge: Challenge,
    pub change_points: (f64, f64),
    pub property: Vec<GaussianPeak>,
    pub raman: RamanModel,
    pub noise: NoiseModel,
}

impl ChallengeSpec {
    pub fn new(challenge: Challenge) -> Self {
        let property = match challenge {
            // One broad peak whose maximum sits just below the 2|3 boundary.
            Challenge::One => vec![GaussianPeak {
                amplitude: 18.0,
                center: 60.0,
                width: 25.0,
            }],
            // Broad local maxima in regions 0 and 1, narrow global one in 2.
            Challenge::Two => vec![
                GaussianPeak {
                    amplitude: 6.0,
                    center: 15.0,
                    width: 10.0,
                },
                GaussianPeak {
                    amplitude: 8.0,
                    center: 45.0,
                    width: 8.0,
                },
                GaussianPeak {
                    amplitude: 12.0,
                    center: 65.0,
                    width: 2.0,
                },
            ],
        };
        Self {
            challenge,
            change_points: (35.0, 62.0),
            property,
            raman: RamanModel::default(),
            noise: NoiseModel::default(),
        }
    }

    pub fn with_overrides(challenge: Challenge, o: &TruthOverrides) -> Result<Self, String> {
        let mut spec = Self::new(challenge);
        if let Some(cp) = o.change_points {
            spec.change_points = cp;
        }
        if let Some(p) = &o.property {
            spec.property = p.clone();
        }
        if let Some(r) = &o.raman {
            spec.raman = r.clone();
        }
        if let Some(sd) = o.d33_sd {
            spec.noise.d33_sd = sd;
        }
        if let Some(sd) = o.raman_sd {
            spec.noise.raman_sd = sd;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), String> {
        let (c1, c2) = self.change_points;
        if !(DOMAIN_MIN < c1 && c1 < c2 && c2 < DOMAIN_MAX) {
            return Err(format!(
                "ground_truth.change_points: need 0 < c1 < c2 < 100, got ({c1}, {c2})"
            ));
        }
        if self.property.is_empty() {
            return Err("ground_truth.property: at least one peak required".into());
        }
        for p in &self.property {
            if !(p.amplitude.is_finite() && p.center.is_finite() && p.width > 0.0) {
                return Err(format!("ground_truth.property: invalid peak {p:?}"));
            }
        }
        let r = &self.raman;
        if r.points < 2 || !(r.shift_max > r.shift_min) || !(r.half_width > 0.0) {
            return Err("ground_truth.raman: invalid shift axis".into());
        }
        if !(self.noise.d33_sd >= 0.0) || !(self.noise.raman_sd >= 0.0) {
            return Err("ground_truth: noise sds must be nonnegative".into());
        }
        Ok(())
    }

    /// Region index of `x`; each change point belongs to the region above it.
    pub fn true_phase(&self, x: f64) -> usize {
        let (c1, c2) = self.change_points;
        if x < c1 {
            0
        } else if x < c2 {
            1
        } else {
            2
        }
    }

    /// Noise-free functional property at `x`.
    pub fn true_property(&self, x: f64) -> f64 {
        self.property.iter().map(|p| p.eval(x)).sum()
    }

    /// Raman measurement of a region-`region` sample with additive Gaussian
    /// noise, clamped at zero.
    pub fn gen_raman<R: Rng + ?Sized>(
        &self,
        region: usize,
        sample_id: SampleId,
        rng: &mut R,
    ) -> RamanSpectrum {
        let template = self.raman.template(region);
        let sd = self.noise.raman_sd;
        let intensities: Vec<f64> = if sd > 0.0 {
            let noise = Normal::new(0.0, sd).expect("sd validated");
            template
                .iter()
                .map(|v| (v + noise.sample(rng)).max(0.0))
                .collect()
        } else {
            template
        };
        RamanSpectrum {
            sample_id,
            shifts: self.raman.shifts(),
            intensities,
        }
    }

    /// Noisy functional-property measurement at `x`.
    pub fn observe_d33<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        let truth = self.true_property(x);
        let sd = self.noise.d33_sd;
        if sd > 0.0 {
            truth + Normal::new(0.0, sd).expect("sd validated").sample(rng)
        } else {
            truth
        }
    }

    /// `(argmax x, max, min)` of the noise-free property over `grid`.
    /// Ties resolve to the lowest composition.
    pub fn grid_extrema(&self, grid: &CompositionGrid) -> (f64, f64, f64) {
        let mut best_x = grid.points()[0];
        let mut best = f64::NEG_INFINITY;
        let mut worst = f64::INFINITY;
        for &x in grid.points() {
            let v = self.true_property(x);
            if v > best {
                best = v;
                best_x = x;
            }
            worst = worst.min(v);
        }
        (best_x, best, worst)
    }
}
