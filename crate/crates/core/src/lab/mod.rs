//! The simulated physical facility.
//!
//! Each plate copy owns one synthesis, one Raman and one d33 instrument,
//! all modelled as FIFO-queued [`SimResource`]s. Every plate shares a single
//! sample repository (lending library semantics) and a single
//! [`DataRepository`].
//!
//! Operations are continuation-passing: a call validates its preconditions
//! synchronously and returns, and the supplied continuation fires inside a
//! later event once the physical work is done.

mod repository;

pub use repository::{
    AgentId, DataRepository, Payload, PosteriorSnapshot, RepoKey, RepoQuery, RepoRow, Modality,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{
    Composition, CompositionGrid, PropertyMeasurement, RamanSpectrum, Sample, SampleId,
    SampleStatus,
};
use crate::error::LabError;
use crate::rng::{substream, SimRng};
use crate::sim::{Engine, SimResource, Token, World};
use crate::truth::ChallengeSpec;

/// Instrument and logistics settings shared by every plate copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InstrumentSettings {
    pub capacity: usize,
    pub synthesis_time: f64,
    pub measurement_time: f64,
    pub transport_delay: f64,
    /// Facility-wide wafer stock; `None` is unlimited.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wafer_stock: Option<u64>,
}

impl Default for InstrumentSettings {
    fn default() -> Self {
        Self {
            capacity: 1,
            synthesis_time: 1.0,
            measurement_time: 1.0,
            transport_delay: 0.0,
            wafer_stock: None,
        }
    }
}

impl InstrumentSettings {
    pub fn validate(&self) -> Result<(), String> {
        if self.capacity == 0 {
            return Err("instruments.capacity: must be positive".into());
        }
        for (name, v) in [
            ("synthesis_time", self.synthesis_time),
            ("measurement_time", self.measurement_time),
            ("transport_delay", self.transport_delay),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("instruments.{name}: must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MeasurementKind {
    Raman,
    D33,
}

impl MeasurementKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MeasurementKind::Raman => "raman",
            MeasurementKind::D33 => "d33",
        }
    }

    pub fn modality(self) -> Modality {
        match self {
            MeasurementKind::Raman => Modality::Raman,
            MeasurementKind::D33 => Modality::D33,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    Raman(RamanSpectrum),
    D33(PropertyMeasurement),
}

/// State that embeds a [`Lab`] and can be driven by the engine.
pub trait LabWorld: World<Error: From<LabError>> {
    fn lab(&mut self) -> &mut Lab<Self>;
}

pub type SampleCont<W> =
    Box<dyn FnOnce(&mut W, &mut Engine<W>, SampleId) -> Result<(), <W as World>::Error>>;

struct Plate<W: World> {
    synthesis: SimResource<W>,
    raman: SimResource<W>,
    d33: SimResource<W>,
    raman_rng: SimRng,
    d33_rng: SimRng,
}

struct SampleEntry<W: World> {
    sample: Sample,
    lending: SimResource<W>,
    holder: Option<(String, Token)>,
}

/// Utilisation counters for one instrument.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstrumentUsage {
    pub name: String,
    pub capacity: usize,
    pub peak_in_use: usize,
    pub acquired: u64,
    pub released: u64,
}

pub struct Lab<W: World> {
    grid: CompositionGrid,
    truth: ChallengeSpec,
    settings: InstrumentSettings,
    plates: Vec<Plate<W>>,
    samples: BTreeMap<SampleId, SampleEntry<W>>,
    by_composition: BTreeMap<usize, SampleId>,
    pending_synthesis: BTreeMap<usize, Vec<SampleCont<W>>>,
    stock: Option<u64>,
    next_sample: u64,
    pub data: DataRepository,
}

impl<W: LabWorld> Lab<W> {
    /// Lab with `plates` copies of each instrument. Instrument noise streams
    /// derive from `run_seed`.
    pub fn new(
        grid: CompositionGrid,
        truth: ChallengeSpec,
        settings: InstrumentSettings,
        plates: usize,
        run_seed: u64,
    ) -> Result<Self, LabError> {
        let cap = settings.capacity;
        let plates = (0..plates)
            .map(|k| -> Result<Plate<W>, LabError> {
                let p = k + 1;
                Ok(Plate {
                    synthesis: SimResource::new(format!("synthesis{p}"), cap)?,
                    raman: SimResource::new(format!("raman{p}"), cap)?,
                    d33: SimResource::new(format!("d33{p}"), cap)?,
                    raman_rng: substream(run_seed, &format!("raman{p}"), "noise"),
                    d33_rng: substream(run_seed, &format!("d33{p}"), "noise"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            grid,
            truth,
            stock: settings.wafer_stock,
            settings,
            plates,
            samples: BTreeMap::new(),
            by_composition: BTreeMap::new(),
            pending_synthesis: BTreeMap::new(),
            next_sample: 0,
            data: DataRepository::default(),
        })
    }

    pub fn grid(&self) -> &CompositionGrid {
        &self.grid
    }

    pub fn truth(&self) -> &ChallengeSpec {
        &self.truth
    }

    pub fn plates(&self) -> usize {
        self.plates.len()
    }

    pub fn remaining_stock(&self) -> Option<u64> {
        self.stock
    }

    pub fn sample(&self, id: SampleId) -> Option<&Sample> {
        self.samples.get(&id).map(|e| &e.sample)
    }

    pub fn sample_at(&self, x: Composition) -> Option<SampleId> {
        self.grid
            .index_of(x)
            .and_then(|i| self.by_composition.get(&i).copied())
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.samples.values().map(|e| &e.sample)
    }

    pub fn instrument_usage(&self) -> Vec<InstrumentUsage> {
        let usage = |r: &SimResource<W>| InstrumentUsage {
            name: r.name().to_string(),
            capacity: r.capacity(),
            peak_in_use: r.peak_in_use(),
            acquired: r.acquired(),
            released: r.released(),
        };
        self.plates
            .iter()
            .flat_map(|p| [usage(&p.synthesis), usage(&p.raman), usage(&p.d33)])
            .collect()
    }

    fn plate(&mut self, plate: usize, what: &'static str) -> Result<&mut Plate<W>, LabError> {
        self.plates
            .get_mut(plate)
            .ok_or(LabError::NoInstrument(what, plate))
    }

    /// Make sure a sample exists at `composition`. Reuses an existing sample
    /// (no delay, no wafer) or queues a synthesis on `plate`'s synthesizer.
    pub fn synthesize<F>(
        world: &mut W,
        engine: &mut Engine<W>,
        requester: &str,
        plate: usize,
        composition: Composition,
        then: F,
    ) -> Result<(), LabError>
    where
        F: FnOnce(&mut W, &mut Engine<W>, SampleId) -> Result<(), W::Error> + 'static,
    {
        let lab = world.lab();
        let idx = lab
            .grid
            .index_of(composition)
            .ok_or(LabError::OffGrid(composition.0))?;
        lab.plate(plate, "synthesis")?;
        if let Some(&id) = lab.by_composition.get(&idx) {
            engine.schedule(0.0, format!("sample-reuse:{requester}:{id}"), move |w, e| {
                then(w, e, id)
            })?;
            return Ok(());
        }
        if let Some(waiting) = lab.pending_synthesis.get_mut(&idx) {
            waiting.push(Box::new(then));
            return Ok(());
        }
        match lab.stock.as_mut() {
            Some(0) => return Err(LabError::OutOfConsumables),
            Some(n) => *n -= 1,
            None => {}
        }
        lab.pending_synthesis.insert(idx, vec![Box::new(then)]);
        let service = lab.settings.synthesis_time;
        let who = requester.to_string();
        lab.plates[plate]
            .synthesis
            .acquire(engine, requester, move |_w: &mut W, e: &mut Engine<W>, token| {
                e.schedule(
                    service,
                    format!("synthesis-done:{who}:x={composition}"),
                    move |w: &mut W, e: &mut Engine<W>| {
                        let lab = w.lab();
                        lab.plates[plate]
                            .synthesis
                            .release(e, token)
                            .map_err(LabError::from)?;
                        let id = lab.register_sample(idx, e.now())?;
                        let waiting = lab.pending_synthesis.remove(&idx).unwrap_or_default();
                        for cont in waiting {
                            e.schedule(0.0, format!("sample-ready:{id}"), move |w, e| {
                                cont(w, e, id)
                            })
                            .map_err(LabError::from)?;
                        }
                        Ok(())
                    },
                )
                .map_err(LabError::from)?;
                Ok(())
            })?;
        Ok(())
    }

    fn register_sample(&mut self, idx: usize, at: f64) -> Result<SampleId, LabError> {
        let id = SampleId(self.next_sample);
        self.next_sample += 1;
        let composition = self.grid.get(idx).ok_or(LabError::OffGrid(f64::NAN))?;
        let lending = SimResource::new(format!("sample{id}"), 1)?;
        self.samples.insert(
            id,
            SampleEntry {
                sample: Sample {
                    id,
                    composition,
                    status: SampleStatus::InRepository,
                    synthesized_at: at,
                },
                lending,
                holder: None,
            },
        );
        self.by_composition.insert(idx, id);
        Ok(id)
    }

    /// Borrow a sample. Concurrent borrowers queue FIFO; the continuation
    /// fires after the transport delay.
    pub fn checkout<F>(
        world: &mut W,
        engine: &mut Engine<W>,
        requester: &str,
        id: SampleId,
        then: F,
    ) -> Result<(), LabError>
    where
        F: FnOnce(&mut W, &mut Engine<W>, Sample) -> Result<(), W::Error> + 'static,
    {
        let lab = world.lab();
        let delay = lab.settings.transport_delay;
        let entry = lab
            .samples
            .get_mut(&id)
            .ok_or(LabError::UnknownSample(id.0))?;
        let who = requester.to_string();
        entry
            .lending
            .acquire(engine, requester, move |w: &mut W, e: &mut Engine<W>, token| {
                let entry = w.lab().samples.get_mut(&id).expect("sample registered");
                entry.holder = Some((who.clone(), token));
                entry.sample.status = SampleStatus::CheckedOut;
                let sample = entry.sample.clone();
                e.schedule(delay, format!("checkout:{who}:{id}"), move |w, e| {
                    then(w, e, sample)
                })
                .map_err(LabError::from)?;
                Ok(())
            })?;
        Ok(())
    }

    /// Give a borrowed sample back to the repository.
    pub fn return_sample(
        world: &mut W,
        engine: &mut Engine<W>,
        requester: &str,
        id: SampleId,
    ) -> Result<(), LabError> {
        let entry = world
            .lab()
            .samples
            .get_mut(&id)
            .ok_or(LabError::UnknownSample(id.0))?;
        let (holder, token) = entry.holder.take().ok_or(LabError::NotCheckedOut(id.0))?;
        if holder != requester {
            let err = LabError::WrongHolder {
                sample: id.0,
                holder: holder.clone(),
                requester: requester.to_string(),
            };
            entry.holder = Some((holder, token));
            return Err(err);
        }
        entry.sample.status = SampleStatus::InRepository;
        entry.lending.release(engine, token)?;
        Ok(())
    }

    /// Characterize a checked-out sample on `plate`'s instrument of `kind`.
    pub fn measure<F>(
        world: &mut W,
        engine: &mut Engine<W>,
        requester: &str,
        plate: usize,
        id: SampleId,
        kind: MeasurementKind,
        then: F,
    ) -> Result<(), LabError>
    where
        F: FnOnce(&mut W, &mut Engine<W>, Observation) -> Result<(), W::Error> + 'static,
    {
        let lab = world.lab();
        let entry = lab.samples.get(&id).ok_or(LabError::UnknownSample(id.0))?;
        match &entry.holder {
            None => return Err(LabError::NotCheckedOut(id.0)),
            Some((h, _)) if h != requester => {
                return Err(LabError::WrongHolder {
                    sample: id.0,
                    holder: h.clone(),
                    requester: requester.to_string(),
                })
            }
            Some(_) => {}
        }
        let x = entry.sample.composition.0;
        let service = lab.settings.measurement_time;
        let p = lab.plate(plate, kind.as_str())?;
        let instrument = match kind {
            MeasurementKind::Raman => &mut p.raman,
            MeasurementKind::D33 => &mut p.d33,
        };
        let who = requester.to_string();
        instrument.acquire(engine, requester, move |_w: &mut W, e: &mut Engine<W>, token| {
            let label = format!("measure-done:{who}:{}:x={x}", kind.as_str());
            e.schedule(service, label, move |w: &mut W, e: &mut Engine<W>| {
                let now = e.now();
                let lab = w.lab();
                let Lab { plates, truth, .. } = lab;
                let p = &mut plates[plate];
                let obs = match kind {
                    MeasurementKind::Raman => {
                        p.raman.release(e, token).map_err(LabError::from)?;
                        let region = truth.true_phase(x);
                        Observation::Raman(truth.gen_raman(region, id, &mut p.raman_rng))
                    }
                    MeasurementKind::D33 => {
                        p.d33.release(e, token).map_err(LabError::from)?;
                        Observation::D33(PropertyMeasurement {
                            sample_id: id,
                            value: truth.observe_d33(x, &mut p.d33_rng),
                            measured_at: now,
                        })
                    }
                };
                then(w, e, obs)
            })
            .map_err(LabError::from)?;
            Ok(())
        })?;
        Ok(())
    }
}
