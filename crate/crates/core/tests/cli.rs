use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fedhypevae::config::{Profile, RunConfig, CHECKPOINT_MAGIC};
use fedhypevae::data::LabeledSet;
use fedhypevae::evalbench::{read_probe_csv, Condition, ExperimentReport};
use tempfile::TempDir;

fn fhve(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fhve")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

const SMALL: &str = r#"{
  "profile": "desk",
  "data": {"samples_per_client": 60},
  "federation": {"rounds": 2, "local_epochs": 1, "dp": {"enabled": true}},
  "synthesis": {"steps": 10, "samples": 32, "count": 300},
  "probe": {"epochs": 50},
  "seeds": [3]
}"#;

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.json");
    fs::write(&p, SMALL).unwrap();
    p
}

fn run_small(dir: &Path, out: &str, extra: &[&str]) -> PathBuf {
    let cfg = small_config(dir);
    let out = dir.join(out);
    let mut args = vec!["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = fhve(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn missing_config_exits_2_naming_the_path() {
    let o = fhve(&["run", "--config", "/nonexistent/cfg.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/cfg.json"));
}

#[test]
fn invalid_field_exits_2_naming_the_field() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("bad.json");
    fs::write(&p, r#"{"federation": {"clip": 3}}"#).unwrap();
    let o = fhve(&["run", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("federation.clip"), "{}", stderr(&o));
}

#[test]
fn bad_thread_cap_is_rejected() {
    let o = Command::new(env!("CARGO_BIN_EXE_fhve"))
        .args(["print-defaults"])
        .env("FHVE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn print_defaults_round_trips() {
    for (flag, p) in [("full", Profile::Full), ("desk", Profile::Desk)] {
        let o = fhve(&["print-defaults", "--profile", flag]);
        assert!(o.status.success());
        let cfg = RunConfig::from_json(&String::from_utf8(o.stdout).unwrap()).unwrap();
        assert_eq!(cfg, RunConfig::profile(p));
    }
}

#[test]
fn run_writes_artifacts_within_budget() {
    let dir = TempDir::new().unwrap();
    let out = run_small(dir.path(), "out", &[]);
    for f in ["resolved_config.json", "report.json", "probe.csv"] {
        assert!(fs::metadata(out.join(f)).unwrap().len() > 0, "{f}");
    }
    for f in ["rounds.csv", "messages.jsonl", "phi.ckpt", "meta_code.json", "synthetic.fhve", "synthetic.json"] {
        assert!(fs::metadata(out.join("seed_3").join(f)).unwrap().len() > 0, "{f}");
    }
    let report: ExperimentReport = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let eps = report.per_seed[0].total_epsilon.unwrap();
    assert!(eps <= 1.0, "{eps}");
}

#[test]
fn same_seed_gives_identical_csv_reports() {
    let dir = TempDir::new().unwrap();
    let a = run_small(dir.path(), "a", &["--seed", "7"]);
    let b = run_small(dir.path(), "b", &["--seed", "7"]);
    for f in ["probe.csv", "seed_7/rounds.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn resolved_snapshot_reproduces_the_run() {
    let dir = TempDir::new().unwrap();
    let a = run_small(dir.path(), "a", &[]);
    let b = dir.path().join("b");
    let snap = a.join("resolved_config.json");
    let o = fhve(&["run", "--config", snap.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(a.join("probe.csv")).unwrap(), fs::read(b.join("probe.csv")).unwrap());
    assert_eq!(fs::read(a.join("seed_3/phi.ckpt")).unwrap(), fs::read(b.join("seed_3/phi.ckpt")).unwrap());
}

#[test]
fn stage_commands_reproduce_the_run() {
    let dir = TempDir::new().unwrap();
    let out = run_small(dir.path(), "out", &[]);
    let seed_dir = out.join("seed_3");
    let synth = dir.path().join("stage/synthetic.fhve");
    let o = fhve(&[
        "synth",
        "--checkpoint",
        seed_dir.join("phi.ckpt").to_str().unwrap(),
        "--code",
        seed_dir.join("meta_code.json").to_str().unwrap(),
        "--count",
        "300",
        "--balanced",
        "--seed",
        "3",
        "--out",
        synth.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let set = LabeledSet::read(&synth).unwrap();
    assert_eq!(set.class_counts(), vec![100, 100, 100]);
    assert_eq!(fs::read(&synth).unwrap(), fs::read(seed_dir.join("synthetic.fhve")).unwrap());

    let run_rows = read_probe_csv(&out.join("probe.csv")).unwrap();
    for client in 0..4 {
        let csv = dir.path().join(format!("stage/probe_{client}.csv"));
        let o = fhve(&[
            "probe",
            "--train",
            synth.to_str().unwrap(),
            "--test",
            seed_dir.join(format!("client_{client}_test.fhve")).to_str().unwrap(),
            "--epochs",
            "50",
            "--seed",
            "3",
            "--client",
            &client.to_string(),
            "--out",
            csv.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let row = read_probe_csv(&csv).unwrap().remove(0);
        let want = run_rows
            .iter()
            .find(|r| r.client == client && r.condition == Condition::Synthetic)
            .unwrap();
        assert_eq!(&row, want);
    }
}

#[test]
fn partition_conserves_records() {
    let dir = TempDir::new().unwrap();
    let mut set = LabeledSet::new(4, 3);
    for i in 0..100 {
        set.push(vec![i as f64; 4], i % 3);
    }
    let data = dir.path().join("all.fhve");
    set.write(&data).unwrap();
    let parts = dir.path().join("parts");
    let o = fhve(&[
        "partition",
        "--data",
        data.to_str().unwrap(),
        "--clients",
        "10",
        "--alpha",
        "0.3",
        "--seed",
        "4",
        "--out",
        parts.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let total: usize = (0..10)
        .map(|i| LabeledSet::read(&parts.join(format!("client_{i}.fhve"))).unwrap().len())
        .sum();
    assert_eq!(total, 100);
}

#[test]
fn checkpoint_version_mismatch_exits_3() {
    let dir = TempDir::new().unwrap();
    let out = run_small(dir.path(), "out", &[]);
    let mut bytes = fs::read(out.join("seed_3/phi.ckpt")).unwrap();
    assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
    bytes[8..12].copy_from_slice(&99u32.to_le_bytes());
    let bad = dir.path().join("v99.ckpt");
    fs::write(&bad, bytes).unwrap();
    let o = fhve(&[
        "synth",
        "--checkpoint",
        bad.to_str().unwrap(),
        "--code",
        out.join("seed_3/meta_code.json").to_str().unwrap(),
        "--count",
        "3",
        "--balanced",
        "--out",
        dir.path().join("x.fhve").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn bundled_dp_config_meets_its_budget() {
    let dir = TempDir::new().unwrap();
    let cfg = repo_root().join("configs/desk-dp.json");
    let out = dir.path().join("dp");
    let o = Command::new(env!("CARGO_BIN_EXE_fhve"))
        .args(["run", "--config", cfg.to_str().unwrap(), "--seed", "1", "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let report: ExperimentReport = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(report.per_seed[0].total_epsilon.unwrap() <= 1.0);
    assert!(fs::metadata(out.join("probe.csv")).unwrap().len() > 0);
}
