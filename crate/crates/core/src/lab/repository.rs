//! Shared data table through which agents exchange measurements, posterior
//! snapshots and acquisition fields.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::acquisition::AcquisitionField;
use crate::domain::{Composition, PropertyMeasurement, RamanSpectrum};
use crate::error::LabError;
use crate::inference::{ChangePointPosterior, MembershipPosterior, PropertyPosterior};

/// Agent name such as `PM1` or `FP2`: ASCII letters followed by digits.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AgentId(String);

impl AgentId {
    pub fn new(s: impl Into<String>) -> Result<Self, LabError> {
        let s = s.into();
        let letters = s.chars().take_while(|c| c.is_ascii_alphabetic()).count();
        let rest = &s[letters..];
        if letters == 0 || rest.is_empty() || !rest.chars().all(|c| c.is_ascii_digit()) {
            return Err(LabError::MalformedKey(s));
        }
        Ok(Self(s))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for AgentId {
    type Error = LabError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::new(s)
    }
}

impl From<AgentId> for String {
    fn from(a: AgentId) -> String {
        a.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Raman,
    D33,
    Posterior,
    Acquisition,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Raman => "raman",
            Modality::D33 => "d33",
            Modality::Posterior => "posterior",
            Modality::Acquisition => "acquisition",
        }
    }
}

impl FromStr for Modality {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raman" => Ok(Modality::Raman),
            "d33" => Ok(Modality::D33),
            "posterior" => Ok(Modality::Posterior),
            "acquisition" => Ok(Modality::Acquisition),
            other => Err(LabError::MalformedKey(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RepoKey {
    pub agent: AgentId,
    pub iteration: usize,
    pub modality: Modality,
}

impl RepoKey {
    pub fn new(agent: &AgentId, iteration: usize, modality: Modality) -> Self {
        Self {
            agent: agent.clone(),
            iteration,
            modality,
        }
    }
}

impl fmt::Display for RepoKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.agent, self.iteration, self.modality.as_str())
    }
}

/// Parses `agent/iteration/modality`, e.g. `PM1/3/raman`.
impl FromStr for RepoKey {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let malformed = || LabError::MalformedKey(s.to_string());
        let mut parts = s.split('/');
        let (Some(a), Some(i), Some(m), None) = (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(malformed());
        };
        Ok(Self {
            agent: AgentId::new(a).map_err(|_| malformed())?,
            iteration: i.parse().map_err(|_| malformed())?,
            modality: m.parse().map_err(|_| malformed())?,
        })
    }
}

/// Model state an agent publishes after fitting.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PosteriorSnapshot {
    pub membership: Option<MembershipPosterior>,
    pub change_points: Option<ChangePointPosterior>,
    pub property: Option<PropertyPosterior>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Raman {
        composition: Composition,
        spectrum: RamanSpectrum,
    },
    D33 {
        composition: Composition,
        measurement: PropertyMeasurement,
    },
    Posterior(Box<PosteriorSnapshot>),
    Acquisition(Box<AcquisitionField>),
}

impl Payload {
    pub fn modality(&self) -> Modality {
        match self {
            Payload::Raman { .. } => Modality::Raman,
            Payload::D33 { .. } => Modality::D33,
            Payload::Posterior(_) => Modality::Posterior,
            Payload::Acquisition(_) => Modality::Acquisition,
        }
    }

    pub fn composition(&self) -> Option<Composition> {
        match self {
            Payload::Raman { composition, .. } | Payload::D33 { composition, .. } => {
                Some(*composition)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepoRow {
    pub key: RepoKey,
    pub payload: Payload,
    pub written_at: f64,
}

impl RepoRow {
    /// Short pointer to where the payload lives in run outputs.
    pub fn payload_ref(&self) -> String {
        let k = &self.key;
        match &self.payload {
            Payload::Raman {
                composition,
                spectrum,
            } => format!("sample:{}@x={}", spectrum.sample_id, composition),
            Payload::D33 {
                composition,
                measurement,
            } => format!("sample:{}@x={}", measurement.sample_id, composition),
            Payload::Posterior(_) => format!("snapshots/{}_it{}_posterior.csv", k.agent, k.iteration),
            Payload::Acquisition(_) => format!("snapshots/{}_it{}_acquisition.csv", k.agent, k.iteration),
        }
    }
}

/// Filter on any subset of key fields.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RepoQuery {
    pub agent: Option<AgentId>,
    pub iteration: Option<usize>,
    pub modality: Option<Modality>,
}

impl RepoQuery {
    pub fn modality(modality: Modality) -> Self {
        Self {
            modality: Some(modality),
            ..Self::default()
        }
    }

    pub fn agent(mut self, agent: &AgentId) -> Self {
        self.agent = Some(agent.clone());
        self
    }

    fn matches(&self, key: &RepoKey) -> bool {
        self.agent.as_ref().is_none_or(|a| *a == key.agent)
            && self.iteration.is_none_or(|i| i == key.iteration)
            && self.modality.is_none_or(|m| m == key.modality)
    }
}

#[derive(Debug, Clone, Default)]
pub struct DataRepository {
    rows: BTreeMap<RepoKey, RepoRow>,
}

impl DataRepository {
    /// Insert or overwrite the row at `key`.
    pub fn put(&mut self, key: RepoKey, payload: Payload, written_at: f64) -> Result<(), LabError> {
        if payload.modality() != key.modality {
            return Err(LabError::MalformedKey(format!(
                "{key} holds a {} payload",
                payload.modality().as_str()
            )));
        }
        if !written_at.is_finite() {
            return Err(LabError::MalformedKey(format!("{key} written at {written_at}")));
        }
        self.rows.insert(
            key.clone(),
            RepoRow {
                key,
                payload,
                written_at,
            },
        );
        Ok(())
    }

    /// Matching rows ordered by `(written_at, key)`.
    pub fn get(&self, query: &RepoQuery) -> Vec<&RepoRow> {
        let mut rows: Vec<&RepoRow> = self.rows.values().filter(|r| query.matches(&r.key)).collect();
        rows.sort_by(|a, b| a.written_at.total_cmp(&b.written_at).then_with(|| a.key.cmp(&b.key)));
        rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// CSV dump with columns `agent_id,iteration,modality,sim_time,payload_ref`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("agent_id,iteration,modality,sim_time,payload_ref\n");
        for row in self.get(&RepoQuery::default()) {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.key.agent,
                row.key.iteration,
                row.key.modality.as_str(),
                row.written_at,
                row.payload_ref()
            ));
        }
        out
    }
}
