//! TOML run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acquisition::UcbParenthesization;
use crate::agents::{ArchitectureKind, FacilityConfig};
use crate::inference::InferenceParams;
use crate::lab::InstrumentSettings;
use crate::truth::{Challenge, TruthOverrides};

/// Which architectures a sweep covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ArchSelection {
    One(ArchitectureKind),
    All,
}

impl ArchSelection {
    pub fn architectures(self) -> Vec<ArchitectureKind> {
        match self {
            ArchSelection::One(a) => vec![a],
            ArchSelection::All => ArchitectureKind::ALL.to_vec(),
        }
    }
}

impl std::str::FromStr for ArchSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("all") {
            Ok(ArchSelection::All)
        } else {
            s.parse().map(ArchSelection::One)
        }
    }
}

impl TryFrom<String> for ArchSelection {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ArchSelection> for String {
    fn from(a: ArchSelection) -> String {
        match a {
            ArchSelection::One(k) => k.as_str().to_string(),
            ArchSelection::All => "all".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub architecture: ArchSelection,
    pub challenge: Challenge,
    pub m: usize,
    pub n: usize,
    pub iterations: usize,
    pub n_runs: usize,
    pub base_seed: u64,
    pub ucb_lambda: f64,
    pub ucb_parenthesization: UcbParenthesization,
    pub pm_uses_coregionalization: bool,
    pub output_dir: PathBuf,
    pub inference: InferenceParams,
    pub instruments: InstrumentSettings,
    pub ground_truth: TruthOverrides,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            architecture: ArchSelection::One(ArchitectureKind::DataSharingJointDm),
            challenge: Challenge::Two,
            m: 2,
            n: 2,
            iterations: 10,
            n_runs: 10,
            base_seed: 0,
            ucb_lambda: 0.1,
            ucb_parenthesization: UcbParenthesization::default(),
            pm_uses_coregionalization: false,
            output_dir: PathBuf::from("out"),
            inference: InferenceParams::default(),
            instruments: InstrumentSettings::default(),
            ground_truth: TruthOverrides::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let config: RunConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text =
            std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Check every field before anything runs.
    pub fn validate(&self) -> Result<(), String> {
        if self.n_runs == 0 {
            return Err("n_runs: must be >= 1".into());
        }
        for arch in self.architecture.architectures() {
            self.facility(arch, self.base_seed)
                .validate()
                .map_err(|e| match e {
                    crate::error::CampaignError::Config(m) => m,
                    other => other.to_string(),
                })?;
        }
        Ok(())
    }

    /// Settings for one campaign of the sweep.
    pub fn facility(&self, architecture: ArchitectureKind, seed: u64) -> FacilityConfig {
        FacilityConfig {
            architecture,
            challenge: self.challenge,
            m: self.m,
            n: self.n,
            iterations: self.iterations,
            seed,
            inference: self.inference.clone(),
            instruments: self.instruments.clone(),
            ucb_lambda: self.ucb_lambda,
            ucb_parenthesization: self.ucb_parenthesization,
            pm_uses_coregionalization: self.pm_uses_coregionalization,
            ground_truth: self.ground_truth.clone(),
        }
    }

    /// Seeds `base_seed .. base_seed + n_runs`.
    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.n_runs as u64).map(move |r| self.base_seed + r)
    }
}
