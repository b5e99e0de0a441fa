use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::info;
use serde_json::{json, Value};

use trafficlab::dataset::{read_dataset, write_dataset, Dataset};
use trafficlab::edie::travel_time_stats;
use trafficlab::evalkit::{baseline_report, group_by_demand, group_by_segment, group_by_speed, write_coverage_csv, write_group_csv};
use trafficlab::himsnet::{parse_modalities, Model};
use trafficlab::pipeline::{
    build_dataset, build_network, coverage_sweep, derive_seed, evaluate_model, session_mfd, session_speeds,
    simulate_scaled, simulate_sessions, summarize_mfd, test_samples, train_on, with_jobs, write_mfd_csv,
    write_travel_time_csv, Network, RunConfig,
};
use trafficlab::roadnet::RoadGraph;
use trafficlab::simcore::{read_session, write_session};
use trafficlab::Error;

use crate::Common;

pub const MANIFEST: &str = "manifest.json";

pub enum Failure {
    Config(String),
    Missing(PathBuf),
    Runtime(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Runtime(_) => 1,
            Failure::Config(_) => 3,
            Failure::Missing(_) => 4,
        }
    }

    /// One JSON object on one line.
    pub fn line(&self) -> String {
        let (kind, message) = match self {
            Failure::Config(m) => ("config", m.clone()),
            Failure::Missing(p) => ("missing_artifact", format!("missing artifact: {}", p.display())),
            Failure::Runtime(m) => ("runtime", m.clone()),
        };
        json!({"error": kind, "code": self.code(), "message": message}).to_string()
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::MissingArtifact(p) => Failure::Missing(p),
            Error::InvalidArgument(m) => Failure::Config(m),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

pub fn load_config(c: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &c.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Config(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Config(format!("malformed config {}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = c.sessions {
        cfg.sessions = v;
    }
    if let Some(v) = c.train_sessions {
        cfg.n_train = v;
    }
    if let Some(v) = c.mode {
        cfg.mode = v;
    }
    if let Some(v) = c.coverage {
        cfg.coverage = v;
    }
    if let Some(v) = c.noise_ld {
        cfg.noise_ld = v;
    }
    if let Some(v) = c.noise_drone {
        cfg.noise_drone = v;
    }
    if let Some(v) = &c.modalities {
        cfg.model.modalities = parse_modalities(v)?;
    }
    if c.no_gnn {
        cfg.model.use_gnn = false;
    }
    if let Some(v) = c.hops {
        cfg.model.hops = v;
    }
    if let Some(v) = c.epochs {
        cfg.model.epochs = v;
    }
    if let Some(v) = c.jobs {
        cfg.jobs = v;
    }
    // A session count without a split keeps roughly the default 3:1 ratio.
    if c.sessions.is_some() && c.train_sessions.is_none() && c.config.is_none() {
        cfg.n_train = (cfg.sessions * 3 / 4).clamp(1, cfg.sessions.saturating_sub(1).max(1));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn sessions_dir(out: &Path) -> PathBuf {
    out.join("sessions")
}

fn dataset_dir(out: &Path) -> PathBuf {
    out.join("dataset")
}

fn variant_slug(model: &trafficlab::himsnet::ModelConfig) -> String {
    model.variant().replace('/', "-")
}

fn model_dir(out: &Path, cfg: &RunConfig) -> PathBuf {
    out.join("model").join(variant_slug(&cfg.model))
}

fn write_manifest(dir: &Path, stage: &str, cfg: &RunConfig, extra: Value) -> Outcome {
    fs::create_dir_all(dir)?;
    let m = json!({
        "stage": stage,
        "config_hash": cfg.hash(),
        "seeds": cfg.seeds(),
        "config": cfg,
        "details": extra,
    });
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n")?;
    Ok(())
}

fn require(path: PathBuf) -> Result<PathBuf, Failure> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Failure::Missing(path))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    Ok(BufWriter::new(File::create(path)?))
}

fn jobs<T: Send>(cfg: &RunConfig, f: impl FnOnce() -> Result<T, Failure> + Send) -> Result<T, Failure> {
    with_jobs(cfg.jobs, f)?
}

/// Network rebuilt from the config and checked against the one stored with the sessions.
fn network(cfg: &RunConfig, out: &Path) -> Result<Network, Failure> {
    let net = build_network(&cfg.network, cfg.seed)?;
    let stored = RoadGraph::load(&require(sessions_dir(out).join("network.json"))?)?;
    if stored != net.graph {
        return Err(Failure::Config("network in the sessions directory does not match this config (seed or network settings differ)".into()));
    }
    Ok(net)
}

pub fn simulate(c: &Common) -> Outcome {
    let cfg = load_config(c)?;
    let dir = sessions_dir(&c.out);
    jobs(&cfg, || {
        let net = build_network(&cfg.network, cfg.seed)?;
        fs::create_dir_all(&dir)?;
        net.graph.save(&dir.join("network.json"))?;
        let runs = simulate_sessions(&cfg, &net)?;
        let mut scales = Vec::new();
        for r in &runs {
            write_session(&r.trajectories, r.seed, &dir.join(format!("s{:03}", r.index)))?;
            scales.push(json!({"session": r.index, "seed": r.seed, "demand_scale": r.demand_scale, "vehicles": r.trajectories.vehicles.len()}));
        }
        write_manifest(&dir, "simulate", &cfg, json!({"sessions": scales}))?;
        println!("simulated {} sessions into {}", runs.len(), dir.display());
        Ok(())
    })
}

pub fn dataset(c: &Common) -> Outcome {
    let cfg = load_config(c)?;
    let net = network(&cfg, &c.out)?;
    let src = sessions_dir(&c.out);
    jobs(&cfg, || {
        let mut speeds = Vec::new();
        let mut scales = Vec::new();
        for i in 0..cfg.sessions {
            let (traj, meta) = read_session(&src.join(format!("s{i:03}")), cfg.sim.step)?;
            speeds.push(session_speeds(&net.graph, &traj)?);
            scales.push(meta.demand_scale);
        }
        let (ds, plan) = build_dataset(&cfg, &net, &speeds, &scales)?;
        let dir = dataset_dir(&c.out);
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        let mut ds = ds;
        ds.metadata["stage_config"] = serde_json::to_value(&cfg).expect("config serializes");
        write_dataset(&dir, &ds)?;
        let layouts = dir.join("layouts");
        fs::create_dir_all(&layouts)?;
        for (i, l) in plan.layouts.iter().enumerate() {
            fs::write(layouts.join(format!("s{i:03}.json")), l.to_json()?)?;
        }
        println!("wrote {} samples to {}", ds.samples.len(), dir.display());
        Ok(())
    })
}

fn load_dataset(out: &Path) -> Result<Dataset, Failure> {
    Ok(read_dataset(&dataset_dir(out))?)
}

pub fn train(c: &Common) -> Outcome {
    let cfg = load_config(c)?;
    let net = network(&cfg, &c.out)?;
    let ds = load_dataset(&c.out)?;
    jobs(&cfg, || {
        let (model, report) = train_on(&cfg.model, &net, &ds)?;
        let dir = model_dir(&c.out, &cfg);
        fs::create_dir_all(&dir)?;
        let extra = json!({"variant": model.config.variant(), "config_hash": cfg.hash(), "seeds": cfg.seeds()});
        model.save(&dir.join("model.ckpt"), ds.normalizer.as_ref(), extra)?;
        report.write_csv(create(&dir.join("train_log.csv"))?)?;
        write_manifest(&dir, "train", &cfg, json!({"variant": model.config.variant(), "final_loss": report.final_epoch_loss()}))?;
        println!("trained {} ({} parameters) into {}", model.config.variant(), model.num_parameters(), dir.display());
        Ok(())
    })
}

pub fn eval(c: &Common, checkpoint: Option<&Path>) -> Outcome {
    let cfg = load_config(c)?;
    let path = match checkpoint {
        Some(p) => p.to_path_buf(),
        None => model_dir(&c.out, &cfg).join("model.ckpt"),
    };
    let path = require(path)?;
    let net = network(&cfg, &c.out)?;
    let ds = load_dataset(&c.out)?;
    jobs(&cfg, || {
        let (model, _, _) = Model::load(&path)?;
        let variant = model.config.variant();
        let (report, preds) = evaluate_model(&model, &net, &ds)?;
        let dir = c.out.join("eval").join(variant_slug(&model.config));
        fs::create_dir_all(&dir)?;
        report.write_csv(create(&dir.join("metrics.csv"))?)?;
        let test = test_samples(&ds);
        let mut groups = group_by_demand(&test, &preds)?;
        groups.extend(group_by_speed(&test, &preds)?);
        write_group_csv(&groups, create(&dir.join("groups.csv"))?)?;
        write_group_csv(&group_by_segment(&test, &preds, &net.graph.midpoints())?, create(&dir.join("segments.csv"))?)?;
        write_manifest(&dir, "eval", &cfg, json!({"variant": variant, "checkpoint": path}))?;
        println!("evaluated {variant} into {}", dir.display());
        Ok(())
    })
}

pub fn baseline(c: &Common) -> Outcome {
    let cfg = load_config(c)?;
    let net = network(&cfg, &c.out)?;
    let ds = load_dataset(&c.out)?;
    let dir = c.out.join("baseline");
    fs::create_dir_all(&dir)?;
    let report = baseline_report(&test_samples(&ds), &net.region_members())?;
    report.write_csv(create(&dir.join("metrics.csv"))?)?;
    write_manifest(&dir, "baseline", &cfg, json!({}))?;
    println!("baselines written to {}", dir.display());
    Ok(())
}

pub fn report(c: &Common, sweep: &[f64]) -> Outcome {
    let cfg = load_config(c)?;
    let net = network(&cfg, &c.out)?;
    let src = sessions_dir(&c.out);
    let dir = c.out.join("report");
    fs::create_dir_all(&dir)?;
    jobs(&cfg, || {
        let mut mfd_rows = Vec::new();
        let mut tt_rows = Vec::new();
        let mut speeds = Vec::new();
        let mut scales = Vec::new();
        for i in 0..cfg.sessions {
            let (traj, meta) = read_session(&src.join(format!("s{i:03}")), cfg.sim.step)?;
            mfd_rows.push((i, meta.demand_scale, session_mfd(&net.graph, &traj)?));
            tt_rows.push((i, meta.demand_scale, travel_time_stats(&traj)));
            if !sweep.is_empty() {
                speeds.push(session_speeds(&net.graph, &traj)?);
                scales.push(meta.demand_scale);
            }
        }
        write_mfd_csv(&mfd_rows, create(&dir.join("mfd.csv"))?)?;
        write_travel_time_csv(&tt_rows, create(&dir.join("travel_times.csv"))?)?;

        // Controlled comparison: the same spawn seed at two common demand scales.
        let seed = derive_seed(cfg.seed, "mfd", 0);
        let mut scale_summary = Vec::new();
        let mut scaled_rows = Vec::new();
        for scale in [1.2, 1.5, 1.8] {
            let traj = simulate_scaled(&cfg, &net, scale, seed)?;
            let points = session_mfd(&net.graph, &traj)?;
            let s = summarize_mfd(&points, 0.0, cfg.sim.demand_end);
            let tt = travel_time_stats(&traj);
            scale_summary.push(json!({"demand_scale": scale, "summary": s, "travel_time": {"mean": tt.mean, "median": tt.median, "p90": tt.p90}}));
            scaled_rows.push((0, scale, points));
        }
        write_mfd_csv(&scaled_rows, create(&dir.join("mfd_by_scale.csv"))?)?;
        fs::write(dir.join("mfd_summary.json"), serde_json::to_string_pretty(&scale_summary).expect("summary serializes") + "\n")?;

        let mut produced = vec!["mfd.csv", "travel_times.csv", "mfd_by_scale.csv", "mfd_summary.json"];
        let ckpt = model_dir(&c.out, &cfg).join("model.ckpt");
        if ckpt.exists() && dataset_dir(&c.out).join(trafficlab::dataset::MANIFEST_FILE).exists() {
            let ds = load_dataset(&c.out)?;
            let (model, _, _) = Model::load(&ckpt)?;
            let (_, preds) = evaluate_model(&model, &net, &ds)?;
            let test = test_samples(&ds);
            let mut groups = group_by_demand(&test, &preds)?;
            groups.extend(group_by_speed(&test, &preds)?);
            groups.extend(group_by_segment(&test, &preds, &net.graph.midpoints())?);
            write_group_csv(&groups, create(&dir.join("grouped_errors.csv"))?)?;
            produced.push("grouped_errors.csv");
        } else {
            info!("no checkpoint at {}; skipping grouped errors", ckpt.display());
        }
        if !sweep.is_empty() {
            let rows = coverage_sweep(&cfg, &net, &speeds, &scales, sweep);
            write_coverage_csv(&rows, create(&dir.join("coverage.csv"))?)?;
            produced.push("coverage.csv");
        }
        write_manifest(&dir, "report", &cfg, json!({"files": produced, "sweep": sweep}))?;
        println!("reports written to {}", dir.display());
        Ok(())
    })
}
