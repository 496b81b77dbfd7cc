//! Multi-seed sweeps, run output files, summaries and the `report` command.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{emit_topology, run_campaign, ArchitectureKind, RunOutcome};
use crate::config::RunConfig;
use crate::error::CampaignError;
use crate::metrics::ci95;
use crate::truth::Challenge;

/// Environment variable capping how many campaigns run at once.
pub const THREADS_ENV: &str = "MULTITASK_THREADS";

pub const SUMMARY_HEADER: &str =
    "architecture,challenge,iteration,mean_regret,ci_half,mean_fm,fm_ci_half";
pub const CAMPAIGN_HEADER: &str = "sim_time,agent_id,iteration,composition,modality,value";
pub const PLOT_HEADER: &str =
    "iteration,mean_regret,regret_lo,regret_hi,mean_fm,fm_lo,fm_hi,runs";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("run {architecture}/seed {seed}: {source}")]
    Campaign {
        architecture: ArchitectureKind,
        seed: u64,
        #[source]
        source: CampaignError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("report: {0}")]
    Report(String),
}

impl RunError {
    /// Process exit code: 2 for bad input, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Report(_) => 2,
            _ => 1,
        }
    }
}

/// Shortest round-trip text for a CSV cell, switching to exponent form for
/// very small or very large magnitudes.
pub(crate) fn num(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || !a.is_finite() || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn write(path: &Path, contents: &str) -> Result<(), RunError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| RunError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Per-run metadata written to `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub architecture: ArchitectureKind,
    pub challenge: Challenge,
    pub seed: u64,
    pub trace_hash: String,
    pub end_time: f64,
    pub final_mean_regret: f64,
    pub worst_final_regret: f64,
    pub final_mean_fm: f64,
    pub halted: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: RunConfig,
    pub runs: Vec<ManifestRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRun {
    pub architecture: ArchitectureKind,
    pub seed: u64,
    pub dir: String,
    pub trace_hash: String,
}

/// Completed sweep, per architecture in sweep order.
pub struct SweepResult {
    pub outcomes: Vec<(ArchitectureKind, Vec<RunOutcome>)>,
    pub manifest: Manifest,
}

pub fn version() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

fn thread_pool() -> Result<rayon::ThreadPool, RunError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| RunError::Config(format!("{THREADS_ENV}: expected a positive integer, got {v:?}")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| RunError::Config(format!("{THREADS_ENV}: {e}")))
}

/// Run every `(architecture, seed)` campaign without writing files.
pub fn simulate(config: &RunConfig) -> Result<Vec<(ArchitectureKind, Vec<RunOutcome>)>, RunError> {
    config.validate().map_err(RunError::Config)?;
    let jobs: Vec<(ArchitectureKind, u64)> = config
        .architecture
        .architectures()
        .into_iter()
        .flat_map(|a| config.seeds().map(move |s| (a, s)))
        .collect();
    let pool = thread_pool()?;
    let results: Vec<Result<RunOutcome, RunError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(architecture, seed)| {
                run_campaign(&config.facility(architecture, seed)).map_err(|source| {
                    RunError::Campaign {
                        architecture,
                        seed,
                        source,
                    }
                })
            })
            .collect()
    });
    let mut grouped: Vec<(ArchitectureKind, Vec<RunOutcome>)> = config
        .architecture
        .architectures()
        .into_iter()
        .map(|a| (a, Vec::new()))
        .collect();
    for r in results {
        let outcome = r?;
        let slot = grouped
            .iter_mut()
            .find(|(a, _)| *a == outcome.config.architecture)
            .expect("architecture in sweep");
        slot.1.push(outcome);
    }
    Ok(grouped)
}

/// Simulate and write all outputs under `config.output_dir`.
pub fn run(config: &RunConfig) -> Result<SweepResult, RunError> {
    let outcomes = simulate(config)?;
    let root = &config.output_dir;
    let mut runs = Vec::new();
    for (arch, list) in &outcomes {
        let arch_dir = root.join(arch.as_str());
        for outcome in list {
            let rel = format!("{}/run_{}", arch.as_str(), outcome.config.seed);
            write_run(&root.join(&rel), outcome)?;
            runs.push(ManifestRun {
                architecture: *arch,
                seed: outcome.config.seed,
                dir: rel,
                trace_hash: outcome.trace_hash.clone(),
            });
        }
        let traces: Vec<RunTraces> = list.iter().map(RunTraces::from).collect();
        write(
            &arch_dir.join("summary.csv"),
            &summary_csv(*arch, config.challenge, &traces),
        )?;
    }
    let manifest = Manifest {
        version: version(),
        config: config.clone(),
        runs,
    };
    write(
        &root.join("manifest.json"),
        &(serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n"),
    )?;
    Ok(SweepResult { outcomes, manifest })
}

pub fn campaign_csv(outcome: &RunOutcome) -> String {
    let mut out = format!("{CAMPAIGN_HEADER}\n");
    for r in &outcome.campaign {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            num(r.sim_time),
            r.agent,
            r.iteration,
            r.composition,
            r.modality.as_str(),
            num(r.value)
        );
    }
    out
}

fn trace_csv(traces: &BTreeMap<crate::lab::AgentId, Vec<f64>>, mean: &[f64]) -> String {
    let mut out = String::from("iteration");
    for id in traces.keys() {
        let _ = write!(out, ",{id}");
    }
    out.push_str(",mean\n");
    for (i, m) in mean.iter().enumerate() {
        let _ = write!(out, "{i}");
        for t in traces.values() {
            let _ = write!(out, ",{}", num(t[i]));
        }
        let _ = writeln!(out, ",{}", num(*m));
    }
    out
}

fn write_run(dir: &Path, outcome: &RunOutcome) -> Result<(), RunError> {
    write(&dir.join("campaign.csv"), &campaign_csv(outcome))?;
    write(&dir.join("repository.csv"), &outcome.repository_csv)?;
    write(
        &dir.join("regret.csv"),
        &trace_csv(&outcome.regret, &outcome.mean_regret()),
    )?;
    write(&dir.join("fm.csv"), &trace_csv(&outcome.fm, &outcome.mean_fm()))?;
    write(&dir.join("topology.dot"), &emit_topology(&outcome.config))?;
    for (rel, csv) in &outcome.snapshots {
        write(&dir.join(rel), csv)?;
    }
    let record = RunRecord {
        architecture: outcome.config.architecture,
        challenge: outcome.config.challenge,
        seed: outcome.config.seed,
        trace_hash: outcome.trace_hash.clone(),
        end_time: outcome.end_time,
        final_mean_regret: outcome.mean_regret().last().copied().unwrap_or(f64::NAN),
        worst_final_regret: outcome.worst_final_regret(),
        final_mean_fm: outcome.mean_fm().last().copied().unwrap_or(f64::NAN),
        halted: outcome
            .halted
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect(),
    };
    write(
        &dir.join("run.json"),
        &(serde_json::to_string_pretty(&record).expect("record serializes") + "\n"),
    )
}

/// Run-level mean regret and FM traces.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTraces {
    pub regret: Vec<f64>,
    pub fm: Vec<f64>,
}

impl From<&RunOutcome> for RunTraces {
    fn from(o: &RunOutcome) -> Self {
        Self {
            regret: o.mean_regret(),
            fm: o.mean_fm(),
        }
    }
}

/// Mean and CI half-width per iteration. The half-width is `None` for a
/// single run.
pub fn aggregate(traces: &[Vec<f64>]) -> Vec<(f64, Option<f64>)> {
    let len = traces.iter().map(Vec::len).min().unwrap_or(0);
    (0..len)
        .map(|i| {
            let col: Vec<f64> = traces.iter().map(|t| t[i]).collect();
            match ci95(&col) {
                Ok((m, h)) => (m, Some(h)),
                Err(_) => (col.iter().sum::<f64>() / col.len() as f64, None),
            }
        })
        .collect()
}

fn fixed(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

pub fn summary_rows(arch: ArchitectureKind, challenge: Challenge, runs: &[RunTraces]) -> String {
    let regret = aggregate(&runs.iter().map(|r| r.regret.clone()).collect::<Vec<_>>());
    let fm = aggregate(&runs.iter().map(|r| r.fm.clone()).collect::<Vec<_>>());
    let mut out = String::new();
    for (i, ((rm, rh), (fm_m, fh))) in regret.iter().zip(&fm).enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            arch,
            challenge.id(),
            i,
            fixed(Some(*rm)),
            fixed(*rh),
            fixed(Some(*fm_m)),
            fixed(*fh)
        );
    }
    out
}

pub fn summary_csv(arch: ArchitectureKind, challenge: Challenge, runs: &[RunTraces]) -> String {
    format!("{SUMMARY_HEADER}\n{}", summary_rows(arch, challenge, runs))
}

fn plot_csv(runs: &[RunTraces]) -> String {
    let regret = aggregate(&runs.iter().map(|r| r.regret.clone()).collect::<Vec<_>>());
    let fm = aggregate(&runs.iter().map(|r| r.fm.clone()).collect::<Vec<_>>());
    let band = |m: f64, h: Option<f64>| match h {
        Some(h) => (fixed(Some(m - h)), fixed(Some(m + h))),
        None => (String::new(), String::new()),
    };
    let mut out = format!("{PLOT_HEADER}\n");
    for (i, ((rm, rh), (fmm, fh))) in regret.iter().zip(&fm).enumerate() {
        let (rlo, rhi) = band(*rm, *rh);
        let (flo, fhi) = band(*fmm, *fh);
        let _ = writeln!(
            out,
            "{i},{},{rlo},{rhi},{},{flo},{fhi},{}",
            fixed(Some(*rm)),
            fixed(Some(*fmm)),
            runs.len()
        );
    }
    out
}

/// A completed run directory read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub record: RunRecord,
    pub traces: RunTraces,
}

fn read(path: &Path) -> Result<String, RunError> {
    fs::read_to_string(path).map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn mean_column(path: &Path) -> Result<Vec<f64>, RunError> {
    let text = read(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| RunError::Report(format!("{}: empty file", path.display())))?;
    let col = header
        .split(',')
        .position(|h| h == "mean")
        .ok_or_else(|| RunError::Report(format!("{}: no mean column", path.display())))?;
    lines
        .map(|l| {
            l.split(',')
                .nth(col)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| RunError::Report(format!("{}: bad row {l:?}", path.display())))
        })
        .collect()
}

pub fn load_run(dir: &Path) -> Result<LoadedRun, RunError> {
    let record: RunRecord = serde_json::from_str(&read(&dir.join("run.json"))?)
        .map_err(|e| RunError::Report(format!("{}: {e}", dir.join("run.json").display())))?;
    Ok(LoadedRun {
        dir: dir.to_path_buf(),
        traces: RunTraces {
            regret: mean_column(&dir.join("regret.csv"))?,
            fm: mean_column(&dir.join("fm.csv"))?,
        },
        record,
    })
}

/// Run directories named by `paths`: each path is either a run directory or
/// a directory whose immediate children include run directories.
pub fn collect_runs(paths: &[PathBuf]) -> Result<Vec<LoadedRun>, RunError> {
    let mut runs = Vec::new();
    for p in paths {
        if p.join("run.json").is_file() {
            runs.push(load_run(p)?);
            continue;
        }
        let entries = fs::read_dir(p).map_err(|source| RunError::Io {
            path: p.clone(),
            source,
        })?;
        let mut children: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|c| c.join("run.json").is_file())
            .collect();
        children.sort();
        if children.is_empty() {
            return Err(RunError::Report(format!("{}: no completed runs", p.display())));
        }
        for c in children {
            runs.push(load_run(&c)?);
        }
    }
    if runs.is_empty() {
        return Err(RunError::Report("no run directories given".into()));
    }
    Ok(runs)
}

/// Aggregate runs into summary CSV text plus per-architecture plot data.
pub fn report(paths: &[PathBuf]) -> Result<(String, BTreeMap<ArchitectureKind, String>), RunError> {
    let runs = collect_runs(paths)?;
    let challenge = runs[0].record.challenge;
    if let Some(other) = runs.iter().find(|r| r.record.challenge != challenge) {
        return Err(RunError::Report(format!(
            "{} is challenge {} but {} is challenge {}",
            other.dir.display(),
            other.record.challenge,
            runs[0].dir.display(),
            challenge
        )));
    }
    let mut groups: BTreeMap<ArchitectureKind, Vec<RunTraces>> = BTreeMap::new();
    for r in &runs {
        groups
            .entry(r.record.architecture)
            .or_default()
            .push(r.traces.clone());
    }
    let mut summary = format!("{SUMMARY_HEADER}\n");
    let mut plots = BTreeMap::new();
    for (arch, traces) in &groups {
        summary.push_str(&summary_rows(*arch, challenge, traces));
        plots.insert(*arch, plot_csv(traces));
    }
    Ok((summary, plots))
}

/// Write `report` results into `out`.
pub fn write_report(out: &Path, summary: &str, plots: &BTreeMap<ArchitectureKind, String>) -> Result<(), RunError> {
    write(&out.join("summary.csv"), summary)?;
    for (arch, csv) in plots {
        write(&out.join(format!("plot_{}.csv", arch.as_str())), csv)?;
    }
    Ok(())
}

/// `x,true_property,true_phase` over the standard grid.
pub fn truth_csv(challenge: Challenge) -> String {
    let spec = crate::truth::ChallengeSpec::new(challenge);
    let grid = crate::domain::CompositionGrid::standard();
    let mut out = String::from("x,true_property,true_phase\n");
    for &x in grid.points() {
        let _ = writeln!(out, "{x},{:.6},{}", spec.true_property(x), spec.true_phase(x));
    }
    out
}
