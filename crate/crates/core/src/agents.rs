//! Agents, facility architectures and the campaign loop.
//!
//! Every agent is a cooperative process inside one [`Engine`]. An iteration
//! reads the rows the agent may see, refits its model, publishes a posterior
//! snapshot and an acquisition field, picks the next composition and drives
//! it through synthesis, checkout, measurement and return. The measurement
//! lands in the data repository and the next decision is scheduled.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use log::{debug, info};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{
    combine_acq, entropy_acq, select_next, ucb_acq, AcquisitionField, UcbParenthesization,
};
use crate::domain::{Composition, CompositionGrid, PhaseLabelSet, N_REGIONS};
use crate::error::{AcquisitionError, CampaignError, InferenceError, LabError};
use crate::inference::{
    align_labels, coregional_infer, gp_fit, gp_predict, phase_map_infer, spectral_cluster,
    InferenceParams, KernelKind,
};
use crate::lab::{
    AgentId, DataRepository, InstrumentSettings, Lab, LabWorld, MeasurementKind, Modality,
    Observation, Payload, PosteriorSnapshot, RepoKey, RepoQuery, RepoRow,
};
use crate::metrics::{fowlkes_mallows, percent_min_regret};
use crate::rng::{substream, SimRng};
use crate::runner::num;
use crate::sim::{Engine, TraceEntry, World};
use crate::truth::{Challenge, ChallengeSpec, TruthOverrides};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgentKind {
    /// Phase mapping: Raman only, entropy acquisition.
    Pm,
    /// Functional property: d33 only, GP-UCB acquisition.
    Fp,
}

impl AgentKind {
    pub fn prefix(self) -> &'static str {
        match self {
            AgentKind::Pm => "PM",
            AgentKind::Fp => "FP",
        }
    }

    pub fn measurement(self) -> MeasurementKind {
        match self {
            AgentKind::Pm => MeasurementKind::Raman,
            AgentKind::Fp => MeasurementKind::D33,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ArchitectureKind {
    Independent,
    DataSharing,
    #[serde(rename = "DataSharingJointDM")]
    DataSharingJointDm,
}

impl ArchitectureKind {
    pub const ALL: [ArchitectureKind; 3] = [
        ArchitectureKind::Independent,
        ArchitectureKind::DataSharing,
        ArchitectureKind::DataSharingJointDm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchitectureKind::Independent => "Independent",
            ArchitectureKind::DataSharing => "DataSharing",
            ArchitectureKind::DataSharingJointDm => "DataSharingJointDM",
        }
    }

    /// Agents read every agent's measurement rows.
    pub fn shares_data(self) -> bool {
        !matches!(self, ArchitectureKind::Independent)
    }

    /// FP agents also read the PM agents' acquisition fields.
    pub fn joint_decisions(self) -> bool {
        matches!(self, ArchitectureKind::DataSharingJointDm)
    }
}

impl std::fmt::Display for ArchitectureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchitectureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                format!("unknown architecture {s:?} (expected Independent, DataSharing or DataSharingJointDM)")
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Visibility {
    OwnOnly,
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecisionPolicy {
    Independent,
    /// Blend own acquisition with the latest PM fields.
    JointFollower,
}

/// Everything one simulated campaign needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacilityConfig {
    pub architecture: ArchitectureKind,
    pub challenge: Challenge,
    /// Number of PM agents, which is also the number of plate copies.
    pub m: usize,
    /// Number of FP agents.
    pub n: usize,
    /// Measurements per agent after its seed measurement.
    pub iterations: usize,
    pub seed: u64,
    pub inference: InferenceParams,
    pub instruments: InstrumentSettings,
    pub ucb_lambda: f64,
    pub ucb_parenthesization: UcbParenthesization,
    pub pm_uses_coregionalization: bool,
    pub ground_truth: TruthOverrides,
}

impl FacilityConfig {
    pub fn new(architecture: ArchitectureKind, challenge: Challenge, seed: u64) -> Self {
        Self {
            architecture,
            challenge,
            m: 2,
            n: 2,
            iterations: 10,
            seed,
            inference: InferenceParams::default(),
            instruments: InstrumentSettings::default(),
            ucb_lambda: 0.1,
            ucb_parenthesization: UcbParenthesization::default(),
            pm_uses_coregionalization: false,
            ground_truth: TruthOverrides::default(),
        }
    }

    pub fn validate(&self) -> Result<(), CampaignError> {
        let bad = |m: String| Err(CampaignError::Config(m));
        if self.m == 0 {
            return bad("m: at least one PM agent required".into());
        }
        if self.n == 0 {
            return bad("n: at least one FP agent required".into());
        }
        if self.iterations == 0 {
            return bad("iterations: must be >= 1".into());
        }
        if !(self.ucb_lambda > 0.0 && self.ucb_lambda.is_finite()) {
            return bad(format!("ucb_lambda: must be positive, got {}", self.ucb_lambda));
        }
        self.inference
            .validate()
            .map_err(|e| CampaignError::Config(format!("inference: {e}")))?;
        self.instruments.validate().map_err(CampaignError::Config)?;
        self.truth()?;
        Ok(())
    }

    pub fn truth(&self) -> Result<ChallengeSpec, CampaignError> {
        ChallengeSpec::with_overrides(self.challenge, &self.ground_truth).map_err(CampaignError::Config)
    }

    /// Agent ids in creation order: `PM1..PMm` then `FP1..FPn`.
    pub fn agent_ids(&self) -> Vec<(AgentId, AgentKind)> {
        let mut out = Vec::with_capacity(self.m + self.n);
        for (kind, count) in [(AgentKind::Pm, self.m), (AgentKind::Fp, self.n)] {
            for i in 1..=count {
                let id = AgentId::new(format!("{}{i}", kind.prefix())).expect("well-formed id");
                out.push((id, kind));
            }
        }
        out
    }
}

pub struct Agent {
    pub id: AgentId,
    pub kind: AgentKind,
    pub visibility: Visibility,
    pub decision: DecisionPolicy,
    pub plate: usize,
    /// Completed measurements beyond the seed.
    pub iteration: usize,
    pub halted: Option<String>,
    /// Own measured compositions in order, seed first.
    pub measured: Vec<Composition>,
    /// Repository keys that fed the latest model fit.
    pub last_inputs: Vec<RepoKey>,
    /// FM score of the phase map after each measurement (PM agents).
    pub fm_trace: Vec<f64>,
    /// Percent minimum regret of the property data visible to the agent,
    /// taken as each of its own measurements lands (FP agents).
    pub regret_trace: Vec<f64>,
    rng: SimRng,
    pending: Option<(usize, Composition)>,
}

/// One line of the campaign log.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignRow {
    pub sim_time: f64,
    pub agent: AgentId,
    pub iteration: usize,
    pub composition: Composition,
    pub modality: Modality,
    pub value: f64,
}

/// The simulated world: lab, agents and in-flight selections.
pub struct Facility {
    lab: Lab<Facility>,
    agents: Vec<Agent>,
    config: FacilityConfig,
    /// Grid index to the agent that has selected it but not yet measured.
    claims: BTreeMap<usize, usize>,
    campaign: Vec<CampaignRow>,
}

impl World for Facility {
    type Error = CampaignError;
}

impl LabWorld for Facility {
    fn lab(&mut self) -> &mut Lab<Self> {
        &mut self.lab
    }
}

impl Facility {
    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn repository(&self) -> &DataRepository {
        &self.lab.data
    }

    pub fn campaign(&self) -> &[CampaignRow] {
        &self.campaign
    }

    pub fn lab_ref(&self) -> &Lab<Facility> {
        &self.lab
    }

    pub fn config(&self) -> &FacilityConfig {
        &self.config
    }
}

/// Instantiate agents, instruments and repositories and schedule every
/// agent's seed measurement at t=0.
pub fn build_facility(config: &FacilityConfig) -> Result<(Facility, Engine<Facility>), CampaignError> {
    config.validate()?;
    let truth = config.truth()?;
    let lab = Lab::new(
        CompositionGrid::standard(),
        truth,
        config.instruments.clone(),
        config.m,
        config.seed,
    )?;
    let arch = config.architecture;
    let agents = config
        .agent_ids()
        .into_iter()
        .map(|(id, kind)| {
            let ordinal: usize = id.as_str()[2..].parse().expect("numbered id");
            Agent {
                rng: substream(config.seed, id.as_str(), "inference"),
                visibility: if arch.shares_data() {
                    Visibility::Pooled
                } else {
                    Visibility::OwnOnly
                },
                decision: if arch.joint_decisions() && kind == AgentKind::Fp {
                    DecisionPolicy::JointFollower
                } else {
                    DecisionPolicy::Independent
                },
                plate: (ordinal - 1) % config.m,
                id,
                kind,
                iteration: 0,
                halted: None,
                measured: Vec::new(),
                last_inputs: Vec::new(),
                fm_trace: Vec::new(),
                regret_trace: Vec::new(),
                pending: None,
            }
        })
        .collect::<Vec<_>>();
    let mut engine = Engine::with_trace();
    for (a, agent) in agents.iter().enumerate() {
        engine.schedule(0.0, format!("seed:{}", agent.id), move |w: &mut Facility, e| {
            seed_measurement(w, e, a)
        })?;
    }
    Ok((
        Facility {
            lab,
            agents,
            config: config.clone(),
            claims: BTreeMap::new(),
            campaign: Vec::new(),
        },
        engine,
    ))
}

fn seed_measurement(w: &mut Facility, e: &mut Engine<Facility>, a: usize) -> Result<(), CampaignError> {
    let grid = w.lab.grid();
    let mut rng = substream(w.config.seed, w.agents[a].id.as_str(), "seed");
    let x = grid
        .get(rng.random_range(0..grid.len()))
        .expect("index in range");
    launch(w, e, a, 0, x)
}

fn halt(w: &mut Facility, a: usize, reason: &str) {
    let agent = &mut w.agents[a];
    info!("{} halted after {} iterations: {reason}", agent.id, agent.iteration);
    agent.halted = Some(reason.to_string());
    agent.pending = None;
    w.claims.retain(|_, &mut who| who != a);
}

fn launch(
    w: &mut Facility,
    e: &mut Engine<Facility>,
    a: usize,
    iteration: usize,
    x: Composition,
) -> Result<(), CampaignError> {
    let agent = &mut w.agents[a];
    agent.pending = Some((iteration, x));
    let who = agent.id.to_string();
    let plate = agent.plate;
    let kind = agent.kind.measurement();
    if let Some(idx) = w.lab.grid().index_of(x) {
        w.claims.insert(idx, a);
    }
    debug!("{who} requests {} at x={x}", kind.as_str());
    let requester = who.clone();
    let started = Lab::synthesize(w, e, &requester, plate, x, move |w, e, sid| {
        let who2 = who.clone();
        Lab::checkout(w, e, &who, sid, move |w, e, _sample| {
            let who3 = who2.clone();
            Lab::measure(w, e, &who2, plate, sid, kind, move |w, e, obs| {
                Lab::return_sample(w, e, &who3, sid)?;
                record(w, e, a, obs)
            })?;
            Ok(())
        })?;
        Ok(())
    });
    match started {
        Err(LabError::OutOfConsumables) => {
            halt(w, a, "out of consumables");
            Ok(())
        }
        other => other.map_err(CampaignError::from),
    }
}

fn record(w: &mut Facility, e: &mut Engine<Facility>, a: usize, obs: Observation) -> Result<(), CampaignError> {
    let now = e.now();
    let agent = &mut w.agents[a];
    let (iteration, x) = agent.pending.take().expect("measurement in flight");
    agent.measured.push(x);
    agent.iteration = iteration;
    let id = agent.id.clone();
    if let Some(idx) = w.lab.grid().index_of(x) {
        if w.claims.get(&idx) == Some(&a) {
            w.claims.remove(&idx);
        }
    }
    let (payload, value) = match obs {
        Observation::Raman(spectrum) => {
            let v = spectrum.dominant_shift();
            (
                Payload::Raman {
                    composition: x,
                    spectrum,
                },
                v,
            )
        }
        Observation::D33(measurement) => {
            let v = measurement.value;
            (
                Payload::D33 {
                    composition: x,
                    measurement,
                },
                v,
            )
        }
    };
    let modality = payload.modality();
    w.lab.data.put(RepoKey::new(&id, iteration, modality), payload, now)?;
    if w.agents[a].kind == AgentKind::Fp {
        let known: Vec<f64> = visible(&w.lab.data, &w.agents[a], Modality::D33)
            .iter()
            .filter_map(|r| r.payload.composition().map(|c| c.0))
            .collect();
        let trace = percent_min_regret(&known, w.lab.truth(), w.lab.grid()).expect("own row visible");
        w.agents[a].regret_trace.push(*trace.last().expect("nonempty"));
    }
    w.campaign.push(CampaignRow {
        sim_time: now,
        agent: id.clone(),
        iteration,
        composition: x,
        modality,
        value,
    });
    e.schedule(0.0, format!("decide:{id}:{iteration}"), move |w: &mut Facility, e| {
        decide(w, e, a)
    })?;
    Ok(())
}

/// Refit, publish, and either stop or launch the next measurement.
fn decide(w: &mut Facility, e: &mut Engine<Facility>, a: usize) -> Result<(), CampaignError> {
    let now = e.now();
    let n = w.agents[a].iteration;
    let (snapshot, alpha) = fit_and_acquire(w, a, n)?;
    let id = w.agents[a].id.clone();
    w.lab.data.put(
        RepoKey::new(&id, n, Modality::Posterior),
        Payload::Posterior(Box::new(snapshot)),
        now,
    )?;
    w.lab.data.put(
        RepoKey::new(&id, n, Modality::Acquisition),
        Payload::Acquisition(Box::new(alpha.clone())),
        now,
    )?;
    if n >= w.config.iterations {
        return Ok(());
    }
    let excluded = excluded_for(w, a);
    match select_next(&alpha, &excluded) {
        Ok(x) => launch(w, e, a, n + 1, x),
        Err(AcquisitionError::Exhausted) => {
            halt(w, a, "search space exhausted");
            Ok(())
        }
        Err(source) => Err(CampaignError::Acquisition {
            agent: id.to_string(),
            iteration: n + 1,
            source,
        }),
    }
}

/// Compositions the agent must not pick: everything already measured in
/// its own modality that it can see, plus, when data is pooled, points that
/// another agent of the same kind has selected but not yet measured.
fn excluded_for(w: &Facility, a: usize) -> Vec<Composition> {
    let agent = &w.agents[a];
    let own = agent.kind.measurement().modality();
    let mut out: Vec<Composition> = visible(&w.lab.data, agent, own)
        .iter()
        .filter_map(|r| r.payload.composition())
        .collect();
    if agent.visibility == Visibility::Pooled {
        let grid = w.lab.grid();
        for (&idx, &who) in &w.claims {
            if who != a && w.agents[who].kind == agent.kind {
                out.extend(grid.get(idx));
            }
        }
    }
    out
}

fn visible<'r>(repo: &'r DataRepository, agent: &Agent, modality: Modality) -> Vec<&'r RepoRow> {
    let mut q = RepoQuery::modality(modality);
    if agent.visibility == Visibility::OwnOnly {
        q = q.agent(&agent.id);
    }
    repo.get(&q)
}

/// Structure labels from Raman rows: spectral clustering aligned to
/// composition order. With fewer spectra than regions every point is put in
/// the middle region, which constrains neither change point.
fn labels_from(rows: &[&RepoRow], rng: &mut SimRng) -> Result<PhaseLabelSet, InferenceError> {
    let mut xs = Vec::with_capacity(rows.len());
    let mut spectra = Vec::with_capacity(rows.len());
    for r in rows {
        if let Payload::Raman {
            composition,
            spectrum,
        } = &r.payload
        {
            xs.push(composition.0);
            spectra.push(spectrum.intensities.as_slice());
        }
    }
    if spectra.len() < N_REGIONS {
        let n = xs.len();
        return Ok(PhaseLabelSet::from_hard(xs, &vec![1; n]).expect("region 1 is valid"));
    }
    let labels = spectral_cluster(&spectra, N_REGIONS, rng)?;
    Ok(align_labels(&labels, &xs))
}

fn property_data(rows: &[&RepoRow]) -> (Vec<f64>, Vec<f64>) {
    rows.iter()
        .filter_map(|r| match &r.payload {
            Payload::D33 {
                composition,
                measurement,
            } => Some((composition.0, measurement.value)),
            _ => None,
        })
        .unzip()
}

fn fit_and_acquire(
    w: &mut Facility,
    a: usize,
    n: usize,
) -> Result<(PosteriorSnapshot, AcquisitionField), CampaignError> {
    let Facility {
        lab, agents, config, ..
    } = w;
    let grid = lab.grid().clone();
    let truth_phase: Vec<usize> = grid.points().iter().map(|&x| lab.truth().true_phase(x)).collect();
    let pm_ids: Vec<AgentId> = agents
        .iter()
        .filter(|g| g.kind == AgentKind::Pm)
        .map(|g| g.id.clone())
        .collect();
    let agent = &mut agents[a];
    let name = agent.id.to_string();
    let repo = &lab.data;
    let params = &config.inference;
    let inference_err = |source: InferenceError| CampaignError::Inference {
        agent: name.clone(),
        iteration: n,
        source,
    };
    let acq_err = |source: AcquisitionError| CampaignError::Acquisition {
        agent: name.clone(),
        iteration: n,
        source,
    };

    let raman = visible(repo, agent, Modality::Raman);
    let d33 = visible(repo, agent, Modality::D33);
    let pooled = agent.visibility == Visibility::Pooled;

    match agent.kind {
        AgentKind::Pm => {
            let labels = labels_from(&raman, &mut agent.rng).map_err(inference_err)?;
            let mut inputs: Vec<RepoKey> = raman.iter().map(|r| r.key.clone()).collect();
            let snapshot = if pooled && config.pm_uses_coregionalization {
                inputs.extend(d33.iter().map(|r| r.key.clone()));
                let (x, y) = property_data(&d33);
                let post = coregional_infer(&labels, &x, &y, &grid, params, &mut agent.rng)
                    .map_err(inference_err)?;
                PosteriorSnapshot {
                    membership: Some(post.membership),
                    change_points: Some(post.change_points),
                    property: Some(post.property),
                }
            } else {
                let post =
                    phase_map_infer(&labels, &grid, params, &mut agent.rng).map_err(inference_err)?;
                PosteriorSnapshot {
                    membership: Some(post.membership),
                    change_points: Some(post.change_points),
                    property: None,
                }
            };
            let membership = snapshot.membership.as_ref().expect("set above");
            let fm = fowlkes_mallows(&membership.argmax_labels(), &truth_phase)
                .expect("grid has at least three points");
            let alpha = entropy_acq(membership);
            agent.fm_trace.push(fm);
            agent.last_inputs = inputs;
            Ok((snapshot, alpha))
        }
        AgentKind::Fp => {
            let (x, y) = property_data(&d33);
            let mut inputs: Vec<RepoKey> = d33.iter().map(|r| r.key.clone()).collect();
            let (snapshot, s_cp) = if pooled {
                inputs.extend(raman.iter().map(|r| r.key.clone()));
                let labels = labels_from(&raman, &mut agent.rng).map_err(inference_err)?;
                let post = coregional_infer(&labels, &x, &y, &grid, params, &mut agent.rng)
                    .map_err(inference_err)?;
                let s_cp = post.change_points.sds;
                (
                    PosteriorSnapshot {
                        membership: Some(post.membership),
                        change_points: Some(post.change_points),
                        property: Some(post.property),
                    },
                    Some(s_cp),
                )
            } else {
                let model = gp_fit(&x, &y, KernelKind::Matern52, params).map_err(inference_err)?;
                (
                    PosteriorSnapshot {
                        membership: None,
                        change_points: None,
                        property: Some(gp_predict(&model, &grid)),
                    },
                    None,
                )
            };
            let py = snapshot.property.as_ref().expect("set above");
            let ucb = ucb_acq(py, n + 1, config.ucb_lambda, config.ucb_parenthesization)
                .map_err(acq_err)?;
            let alpha = match (agent.decision, s_cp) {
                (DecisionPolicy::JointFollower, Some(s_cp)) => {
                    let mut latest: BTreeMap<&AgentId, &AcquisitionField> = BTreeMap::new();
                    for row in repo.get(&RepoQuery::modality(Modality::Acquisition)) {
                        if let Payload::Acquisition(f) = &row.payload {
                            if pm_ids.contains(&row.key.agent) {
                                latest.insert(&row.key.agent, f);
                            }
                        }
                    }
                    let fields: Vec<AcquisitionField> = latest.into_values().cloned().collect();
                    combine_acq(&ucb, &fields, s_cp).map_err(acq_err)?
                }
                _ => ucb,
            };
            agent.last_inputs = inputs;
            Ok((snapshot, alpha))
        }
    }
}

/// Result of one simulated campaign.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub config: FacilityConfig,
    pub campaign: Vec<CampaignRow>,
    pub repository_csv: String,
    /// `(relative path, CSV text)` for every posterior and acquisition row.
    pub snapshots: Vec<(String, String)>,
    /// Percent minimum regret per FP agent, indexed by iteration `0..=iterations`.
    /// Under pooled visibility this covers every property measurement the
    /// agent could see when its own measurement landed.
    pub regret: BTreeMap<AgentId, Vec<f64>>,
    /// Fowlkes–Mallows score per PM agent, indexed like `regret`.
    pub fm: BTreeMap<AgentId, Vec<f64>>,
    pub halted: BTreeMap<AgentId, String>,
    pub measurements: BTreeMap<AgentId, usize>,
    pub model_inputs: BTreeMap<AgentId, Vec<RepoKey>>,
    pub trace: Vec<TraceEntry>,
    pub trace_hash: String,
    pub end_time: f64,
}

impl RunOutcome {
    /// Mean regret over FP agents at each iteration.
    pub fn mean_regret(&self) -> Vec<f64> {
        mean_traces(self.regret.values())
    }

    /// Mean FM over PM agents at each iteration.
    pub fn mean_fm(&self) -> Vec<f64> {
        mean_traces(self.fm.values())
    }

    /// Highest final regret among the FP agents.
    pub fn worst_final_regret(&self) -> f64 {
        self.regret
            .values()
            .filter_map(|t| t.last().copied())
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn mean_traces<'a>(traces: impl Iterator<Item = &'a Vec<f64>>) -> Vec<f64> {
    let traces: Vec<&Vec<f64>> = traces.collect();
    let len = traces.iter().map(|t| t.len()).max().unwrap_or(0);
    (0..len)
        .map(|i| traces.iter().map(|t| t[i]).sum::<f64>() / traces.len() as f64)
        .collect()
}

/// Pad a trace that stopped early by repeating its last value.
fn pad(mut trace: Vec<f64>, len: usize) -> Vec<f64> {
    if let Some(&last) = trace.last() {
        trace.resize(len, last);
    }
    trace
}

/// Build, run to completion and score one campaign.
pub fn run_campaign(config: &FacilityConfig) -> Result<RunOutcome, CampaignError> {
    let (mut world, mut engine) = build_facility(config)?;
    let end_time = engine.run_until_idle(&mut world)?;
    let len = config.iterations + 1;
    let mut regret = BTreeMap::new();
    let mut fm = BTreeMap::new();
    let mut halted = BTreeMap::new();
    let mut measurements = BTreeMap::new();
    let mut model_inputs = BTreeMap::new();
    for agent in &world.agents {
        if let Some(reason) = &agent.halted {
            halted.insert(agent.id.clone(), reason.clone());
        }
        measurements.insert(agent.id.clone(), agent.measured.len().saturating_sub(1));
        model_inputs.insert(agent.id.clone(), agent.last_inputs.clone());
        match agent.kind {
            AgentKind::Fp => {
                regret.insert(agent.id.clone(), pad(agent.regret_trace.clone(), len));
            }
            AgentKind::Pm => {
                fm.insert(agent.id.clone(), pad(agent.fm_trace.clone(), len));
            }
        }
    }
    let snapshots = world
        .lab
        .data
        .get(&RepoQuery::default())
        .into_iter()
        .filter_map(|row| snapshot_csv(row).map(|csv| (row.payload_ref(), csv)))
        .collect();
    Ok(RunOutcome {
        config: config.clone(),
        campaign: world.campaign.clone(),
        repository_csv: world.lab.data.to_csv(),
        snapshots,
        regret,
        fm,
        halted,
        measurements,
        model_inputs,
        trace: engine.trace().map(<[_]>::to_vec).unwrap_or_default(),
        trace_hash: engine.trace_hash(),
        end_time,
    })
}

fn snapshot_csv(row: &RepoRow) -> Option<String> {
    let mut out = String::new();
    match &row.payload {
        Payload::Posterior(s) => {
            out.push_str("x,pm_r0,pm_r1,pm_r2,py_mean,py_sd\n");
            let grid = s
                .membership
                .as_ref()
                .map(|m| &m.grid)
                .or(s.property.as_ref().map(|p| &p.grid))?;
            for (i, x) in grid.points().iter().enumerate() {
                let _ = write!(out, "{x}");
                match &s.membership {
                    Some(m) => {
                        let r = m.probs[i];
                        let _ = write!(out, ",{},{},{}", num(r[0]), num(r[1]), num(r[2]));
                    }
                    None => out.push_str(",,,"),
                }
                match &s.property {
                    Some(p) => {
                        let _ = write!(out, ",{},{}", num(p.mean[i]), num(p.sd[i]));
                    }
                    None => out.push_str(",,"),
                }
                out.push('\n');
            }
        }
        Payload::Acquisition(f) => {
            out.push_str("x,alpha\n");
            for (x, v) in f.grid.points().iter().zip(&f.values) {
                let _ = writeln!(out, "{x},{}", num(*v));
            }
        }
        _ => return None,
    }
    Some(out)
}

/// DOT description of the facility wiring.
pub fn emit_topology(config: &FacilityConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "digraph \"{}\" {{", config.architecture);
    out.push_str("  rankdir=LR;\n");
    out.push_str("  sample_repository [shape=hexagon, label=\"sample repository\"];\n");
    out.push_str("  data_repository [shape=hexagon, label=\"data repository\"];\n");
    for p in 1..=config.m {
        for inst in ["synthesis", "raman", "d33"] {
            let _ = writeln!(out, "  {inst}{p} [shape=box];");
        }
    }
    let agents = config.agent_ids();
    for (id, _) in &agents {
        let _ = writeln!(out, "  {id} [shape=ellipse];");
    }
    for p in 1..=config.m {
        let _ = writeln!(out, "  synthesis{p} -> sample_repository [label=sample];");
        let _ = writeln!(out, "  sample_repository -> raman{p} [label=sample];");
        let _ = writeln!(out, "  sample_repository -> d33{p} [label=sample];");
        let _ = writeln!(out, "  raman{p} -> data_repository [label=data];");
        let _ = writeln!(out, "  d33{p} -> data_repository [label=data];");
    }
    for (id, _) in &agents {
        let _ = writeln!(out, "  {id} -> data_repository [label=data];");
        let _ = writeln!(out, "  data_repository -> {id} [label=data];");
    }
    if config.architecture.joint_decisions() {
        for (pm, _) in agents.iter().filter(|(_, k)| *k == AgentKind::Pm) {
            for (fp, _) in agents.iter().filter(|(_, k)| *k == AgentKind::Fp) {
                let _ = writeln!(out, "  {pm} -> {fp} [label=acq];");
            }
        }
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(arch: ArchitectureKind, challenge: Challenge, seed: u64) -> FacilityConfig {
        let mut c = FacilityConfig::new(arch, challenge, seed);
        c.iterations = 4;
        c.inference.n_prior_samples = 400;
        c.inference.n_resampled = 10;
        c.inference.subsamples_per_draw = 2;
        c.inference.restarts = 2;
        c
    }

    #[test]
    fn build_wires_agents_per_architecture() {
        for arch in ArchitectureKind::ALL {
            let (w, e) = build_facility(&quick(arch, Challenge::One, 1)).unwrap();
            assert_eq!(w.agents().len(), 4);
            assert_eq!(e.pending(), 4);
            for a in w.agents() {
                let pooled = a.visibility == Visibility::Pooled;
                assert_eq!(pooled, arch != ArchitectureKind::Independent);
                let joint = a.decision == DecisionPolicy::JointFollower;
                assert_eq!(joint, arch.joint_decisions() && a.kind == AgentKind::Fp);
            }
            let plates: Vec<usize> = w.agents().iter().map(|a| a.plate).collect();
            assert_eq!(plates, vec![0, 1, 0, 1]);
            assert_eq!(w.lab_ref().plates(), 2);
        }
    }

    #[test]
    fn invalid_config_rejected_with_field() {
        let mut c = FacilityConfig::new(ArchitectureKind::Independent, Challenge::One, 0);
        c.m = 0;
        let err = build_facility(&c).err().unwrap().to_string();
        assert!(err.contains("m:"), "{err}");
        let mut c = FacilityConfig::new(ArchitectureKind::Independent, Challenge::One, 0);
        c.ucb_lambda = 0.0;
        assert!(build_facility(&c).err().unwrap().to_string().contains("ucb_lambda"));
    }

    #[test]
    fn budget_and_modality_discipline() {
        for arch in ArchitectureKind::ALL {
            let out = run_campaign(&quick(arch, Challenge::Two, 3)).unwrap();
            for (id, &count) in &out.measurements {
                if !out.halted.contains_key(id) {
                    assert_eq!(count, 4, "{arch} {id}");
                }
            }
            for ev in &out.trace {
                if let Some(rest) = ev.kind.strip_prefix("measure-done:") {
                    let mut parts = rest.split(':');
                    let who = parts.next().unwrap();
                    let kind = parts.next().unwrap();
                    let expected = if who.starts_with("PM") { "raman" } else { "d33" };
                    assert_eq!(kind, expected, "{}", ev.kind);
                }
            }
            for row in &out.campaign {
                let expected = if row.agent.as_str().starts_with("PM") {
                    Modality::Raman
                } else {
                    Modality::D33
                };
                assert_eq!(row.modality, expected);
            }
            for t in out.regret.values().chain(out.fm.values()) {
                assert_eq!(t.len(), 5);
            }
        }
    }

    #[test]
    fn independent_agents_only_use_their_own_rows() {
        let out = run_campaign(&quick(ArchitectureKind::Independent, Challenge::Two, 5)).unwrap();
        for (id, keys) in &out.model_inputs {
            assert!(!keys.is_empty());
            assert!(keys.iter().all(|k| &k.agent == id), "{id}: {keys:?}");
        }
        let shared = run_campaign(&quick(ArchitectureKind::DataSharing, Challenge::Two, 5)).unwrap();
        let fp1 = AgentId::new("FP1").unwrap();
        assert!(shared.model_inputs[&fp1].iter().any(|k| k.agent != fp1));
    }

    #[test]
    fn repeat_runs_are_identical() {
        let c = quick(ArchitectureKind::DataSharingJointDm, Challenge::One, 9);
        let a = run_campaign(&c).unwrap();
        let b = run_campaign(&c).unwrap();
        assert_eq!(a.repository_csv, b.repository_csv);
        assert_eq!(a.trace_hash, b.trace_hash);
        assert_eq!(a.campaign, b.campaign);
    }

    #[test]
    fn sharing_agents_never_duplicate_a_modality() {
        let out = run_campaign(&quick(ArchitectureKind::DataSharing, Challenge::Two, 11)).unwrap();
        for modality in [Modality::Raman, Modality::D33] {
            let mut xs: Vec<f64> = out
                .campaign
                .iter()
                .filter(|r| r.modality == modality && r.iteration > 0)
                .map(|r| r.composition.0)
                .collect();
            let n = xs.len();
            xs.sort_by(f64::total_cmp);
            xs.dedup();
            assert_eq!(xs.len(), n, "{modality:?}");
        }
    }

    #[test]
    fn finite_stock_halts_agents() {
        let mut c = quick(ArchitectureKind::Independent, Challenge::One, 2);
        c.instruments.wafer_stock = Some(6);
        let out = run_campaign(&c).unwrap();
        assert!(!out.halted.is_empty());
        assert!(out.halted.values().all(|r| r == "out of consumables"));
        let distinct: std::collections::BTreeSet<u64> = out
            .campaign
            .iter()
            .map(|r| r.composition.0.to_bits())
            .collect();
        assert!(distinct.len() <= 6);
    }

    #[test]
    fn topology_edges() {
        let count = |dot: &str, label: &str| dot.matches(&format!("[label={label}]")).count();
        let ind = emit_topology(&FacilityConfig::new(ArchitectureKind::Independent, Challenge::One, 0));
        assert_eq!(count(&ind, "acq"), 0);
        let joint =
            emit_topology(&FacilityConfig::new(ArchitectureKind::DataSharingJointDm, Challenge::One, 0));
        assert_eq!(count(&joint, "acq"), 4);
        for id in ["PM1", "PM2", "FP1", "FP2"] {
            assert!(joint.contains(&format!("{id} -> data_repository [label=data]")));
            assert!(joint.contains(&format!("{id} [shape=ellipse]")));
        }
        assert!(joint.contains("raman2 [shape=box]"));
        assert!(joint.contains("shape=hexagon"));
        for line in joint.lines().filter(|l| l.contains("[label=acq]")) {
            assert!(line.trim_start().starts_with("PM") && line.contains("-> FP"));
        }
    }

    #[test]
    fn architecture_names_parse() {
        for a in ArchitectureKind::ALL {
            assert_eq!(a.as_str().parse::<ArchitectureKind>().unwrap(), a);
        }
        assert!("Shared".parse::<ArchitectureKind>().is_err());
    }
}
