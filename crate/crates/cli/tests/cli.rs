use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const CONFIG: &str = r#"{
  "seed": 3,
  "network": {"rows": 2, "cols": 3},
  "base_demand": 2500,
  "sessions": 3,
  "n_train": 2,
  "model": {"hidden": 4, "decoder_hidden": 6, "lstm_layers": 1, "gcn_layers": 1, "hops": 1, "epochs": 1, "batch": 8}
}"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trafficlab")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

struct Run {
    _tmp: tempfile::TempDir,
    config: PathBuf,
    out: PathBuf,
}

impl Run {
    fn new() -> Run {
        let tmp = tempfile::tempdir().unwrap();
        let config = tmp.path().join("config.json");
        fs::write(&config, CONFIG).unwrap();
        let out = tmp.path().join("run");
        Run { _tmp: tmp, config, out }
    }

    fn args<'a>(&'a self, cmd: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
        let mut v = vec![cmd, "--config", self.config.to_str().unwrap(), "--out", self.out.to_str().unwrap()];
        v.extend_from_slice(extra);
        v
    }

    fn ok(&self, cmd: &str, extra: &[&str]) -> String {
        ok(&self.args(cmd, extra))
    }
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    files
}

fn error_code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn simulate_is_deterministic() {
    let a = Run::new();
    let b = Run::new();
    a.ok("simulate", &["--sessions", "3", "--seed", "1"]);
    b.ok("simulate", &["--sessions", "3", "--seed", "1"]);
    let (ta, tb) = (tree(&a.out), tree(&b.out));
    assert!(ta.contains_key(Path::new("sessions/s002/trajectories.csv")));
    assert!(ta.contains_key(Path::new("sessions/manifest.json")));
    assert_eq!(ta, tb);
}

#[test]
fn full_pipeline_with_ld_variant() {
    let r = Run::new();
    r.ok("simulate", &[]);
    r.ok("dataset", &[]);
    r.ok("baseline", &[]);
    r.ok("train", &["--modalities", "ld"]);
    r.ok("eval", &["--modalities", "ld"]);
    let metrics = fs::read_to_string(r.out.join("eval/ld/metrics.csv")).unwrap();
    assert!(metrics.lines().nth(1).unwrap().starts_with("ld,segment,15,"), "{metrics}");
    let baseline = fs::read_to_string(r.out.join("baseline/metrics.csv")).unwrap();
    assert!(baseline.contains("IA(drone),segment,30,"));
    for dir in ["sessions", "dataset", "baseline", "model/ld", "eval/ld"] {
        let m: serde_json::Value = serde_json::from_slice(&fs::read(r.out.join(dir).join("manifest.json")).unwrap()).unwrap();
        let seeds = if dir == "dataset" { &m["metadata"]["seeds"] } else { &m["seeds"] };
        assert_eq!(seeds["master"], 3, "{dir}");
    }

    r.ok("report", &[]);
    let report = tree(&r.out.join("report"));
    for f in ["mfd.csv", "travel_times.csv", "mfd_summary.json", "manifest.json"] {
        assert!(report.contains_key(Path::new(f)), "{f}");
    }
}

#[test]
fn reruns_are_byte_identical() {
    let r = Run::new();
    r.ok("simulate", &[]);
    r.ok("dataset", &[]);
    r.ok("train", &[]);
    r.ok("eval", &[]);
    let ckpt = fs::read(r.out.join("model/both/model.ckpt")).unwrap();
    let report = fs::read(r.out.join("eval/both/metrics.csv")).unwrap();
    r.ok("train", &["--jobs", "2"]);
    r.ok("eval", &["--jobs", "2"]);
    assert_eq!(ckpt, fs::read(r.out.join("model/both/model.ckpt")).unwrap());
    assert_eq!(report, fs::read(r.out.join("eval/both/metrics.csv")).unwrap());
}

#[test]
fn eval_without_checkpoint_exits_4() {
    let r = Run::new();
    let out = run(&r.args("eval", &[]));
    assert_eq!(error_code(&out), 4);
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    let v: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(v["error"], "missing_artifact");
    assert!(v["message"].as_str().unwrap().contains("model.ckpt"));
}

#[test]
fn dataset_without_sessions_exits_4() {
    let r = Run::new();
    assert_eq!(error_code(&run(&r.args("dataset", &[]))), 4);
}

#[test]
fn unknown_flag_exits_2() {
    assert_eq!(error_code(&run(&["simulate", "--frobnicate"])), 2);
}

#[test]
fn malformed_config_exits_3() {
    let r = Run::new();
    fs::write(&r.config, "{\"sessions\": \"many\"}").unwrap();
    let out = run(&r.args("simulate", &[]));
    assert_eq!(error_code(&out), 3);
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["code"], 3);
}

#[test]
fn invalid_override_exits_3() {
    let r = Run::new();
    assert_eq!(error_code(&run(&r.args("simulate", &["--coverage", "1.5"]))), 3);
    assert_eq!(error_code(&run(&r.args("simulate", &["--modalities", "radar"]))), 3);
}
