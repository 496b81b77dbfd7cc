use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use multitask_core::config::RunConfig;
use multitask_core::runner::Manifest;

const QUICK: &str = "\
iterations = 3
n_runs = 2
[inference]
n_prior_samples = 400
n_resampled = 10
subsamples_per_draw = 2
restarts = 2
";

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_multitask"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_quick(dir: &Path, extra: &str, args: &[&str]) -> (PathBuf, Output) {
    let cfg = dir.join("config.toml");
    fs::write(&cfg, format!("{extra}{QUICK}")).unwrap();
    let out = dir.join("out");
    let mut full = vec!["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    full.extend_from_slice(args);
    let res = cli(&full);
    (out, res)
}

fn first_line(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .lines()
        .next()
        .unwrap()
        .to_string()
}

#[test]
fn dump_truth_challenge_two() {
    let out = cli(&["dump-truth", "--challenge", "2"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x,true_property,true_phase"));
    let rows: Vec<(f64, f64, usize)> = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 101);
    let best = rows.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    assert_eq!(best.0, 65.0);
    let changes = rows.windows(2).filter(|w| w[0].2 != w[1].2).count();
    assert_eq!(changes, 2);
}

#[test]
fn dump_truth_challenge_one_peaks_at_sixty() {
    let out = cli(&["dump-truth", "--challenge", "1"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let best = text
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<f64> = l.split(',').map(|v| v.parse().unwrap()).collect();
            (f[0], f[1])
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    assert_eq!(best.0, 60.0);
}

#[test]
fn unknown_challenge_exits_two() {
    let out = cli(&["dump-truth", "--challenge", "3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains('3'));
}

#[test]
fn invalid_config_exits_two_naming_field() {
    let dir = tempfile::tempdir().unwrap();
    let (_, out) = run_quick(dir.path(), "m = 0\n", &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("m:"), "{err}");
    assert!(!dir.path().join("out").exists(), "nothing is written for a bad config");

    let (_, out) = run_quick(dir.path(), "", &["--arch", "Solo"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, QUICK).unwrap();
    let out = cli(&["run", "--config", cfg.to_str().unwrap(), "--out", blocker.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn run_all_writes_golden_layout() {
    let dir = tempfile::tempdir().unwrap();
    let (out, res) = run_quick(dir.path(), "", &["--arch", "all", "--seed", "5"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for arch in ["Independent", "DataSharing", "DataSharingJointDM"] {
        let a = out.join(arch);
        assert_eq!(
            first_line(&a.join("summary.csv")),
            "architecture,challenge,iteration,mean_regret,ci_half,mean_fm,fm_ci_half"
        );
        let summary = fs::read_to_string(a.join("summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 1 + 4);
        for seed in [5, 6] {
            let r = a.join(format!("run_{seed}"));
            assert_eq!(
                first_line(&r.join("campaign.csv")),
                "sim_time,agent_id,iteration,composition,modality,value"
            );
            assert_eq!(
                first_line(&r.join("repository.csv")),
                "agent_id,iteration,modality,sim_time,payload_ref"
            );
            assert_eq!(first_line(&r.join("regret.csv")), "iteration,FP1,FP2,mean");
            assert_eq!(first_line(&r.join("fm.csv")), "iteration,PM1,PM2,mean");
            assert_eq!(
                first_line(&r.join("snapshots/FP1_it3_posterior.csv")),
                "x,pm_r0,pm_r1,pm_r2,py_mean,py_sd"
            );
            assert_eq!(first_line(&r.join("snapshots/PM2_it0_acquisition.csv")), "x,alpha");
            assert!(first_line(&r.join("topology.dot")).starts_with("digraph"));
            // Four agents, each measuring iterations 0..=3.
            let campaign = fs::read_to_string(r.join("campaign.csv")).unwrap();
            assert_eq!(campaign.lines().count(), 1 + 16);
        }
    }
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert_eq!(stdout.lines().count(), 3, "{stdout}");

    let manifest: Manifest =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.runs.len(), 6);
    assert_eq!(manifest.config.base_seed, 5);
    // The echoed configuration parses back to itself.
    let back = RunConfig::from_toml(&manifest.config.to_toml()).unwrap();
    assert_eq!(back, manifest.config);
}

#[test]
fn report_single_run_has_empty_ci_and_rejects_mixed_challenges() {
    let dir = tempfile::tempdir().unwrap();
    let (out2, res) = run_quick(dir.path(), "architecture = \"DataSharing\"\n", &[]);
    assert!(res.status.success());
    let single = out2.join("DataSharing/run_0");
    let rep = cli(&["report", single.to_str().unwrap()]);
    assert!(rep.status.success());
    let text = String::from_utf8(rep.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    for row in rows {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f[0], "DataSharing");
        assert_eq!(f[4], "", "{row}");
        assert_eq!(f[6], "", "{row}");
    }

    // Two runs through a parent directory give finite CI cells and plot data.
    let plots = dir.path().join("plots");
    let rep = cli(&[
        "report",
        out2.join("DataSharing").to_str().unwrap(),
        "--out",
        plots.to_str().unwrap(),
    ]);
    assert!(rep.status.success());
    let summary = fs::read_to_string(plots.join("summary.csv")).unwrap();
    assert!(summary.lines().skip(1).all(|l| !l.split(',').nth(4).unwrap().is_empty()));
    assert_eq!(
        first_line(&plots.join("plot_DataSharing.csv")),
        "iteration,mean_regret,regret_lo,regret_hi,mean_fm,fm_lo,fm_hi,runs"
    );

    let other = dir.path().join("c1");
    fs::create_dir(&other).unwrap();
    let (out1, res) = run_quick(&other, "challenge = 1\narchitecture = \"DataSharing\"\n", &[]);
    assert!(res.status.success());
    let rep = cli(&[
        "report",
        single.to_str().unwrap(),
        out1.join("DataSharing/run_0").to_str().unwrap(),
    ]);
    assert_eq!(rep.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&rep.stderr).contains("challenge"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (oa, ra) = run_quick(a.path(), "", &[]);
    let (ob, rb) = run_quick(b.path(), "", &[]);
    assert!(ra.status.success() && rb.status.success());
    for f in [
        "DataSharingJointDM/summary.csv",
        "DataSharingJointDM/run_0/campaign.csv",
        "DataSharingJointDM/run_1/repository.csv",
        "DataSharingJointDM/run_1/run.json",
    ] {
        assert_eq!(fs::read(oa.join(f)).unwrap(), fs::read(ob.join(f)).unwrap(), "{f}");
    }
}
