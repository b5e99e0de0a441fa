//! End-to-end wiring: network, simulated sessions, ground-truth speeds, sensor views,
//! datasets, training and reports.

use std::io::Write;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    extract_samples, split_dataset, Dataset, MSTSSample, Normalizer, Split, DRONE_RESOLUTION, FIRST_WINDOW_START,
    SESSION_HORIZON,
};
use crate::edie::{mfd_series, session_splits, travel_time_stats, BinnedSums, MfdPoint, PointBins, SpeedSeries, TravelTimeStats};
use crate::error::{invalid, Result};
use crate::evalkit::{evaluate, CoverageRow, EvalReport, LabelAverage, LaStat, Task};
use crate::himsnet::{predict, train, Model, ModelConfig, ModelContext, Prediction, TrainReport};
use crate::roadnet::{build_grid_network_with_speed, cluster_regions, grid_partition, GridMap, RegionMap, RoadGraph};
use crate::sensors::{
    observe_session, place_loop_detectors, NoiseSpec, SensorLayout, SensorMode, SeriesMatrix, SessionSpeeds,
    SLOT_SECONDS,
};
use crate::simcore::{augment_od, default_signals, simulate_session, uniform_od, AugmentParams, SessionTrajectories, SignalPlan, SimParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub rows: usize,
    pub cols: usize,
    pub seg_len: (f64, f64),
    pub free_flow_speed: f64,
    pub regions: usize,
    pub cell_size: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig { rows: 10, cols: 10, seg_len: (90.0, 180.0), free_flow_speed: 14.0, regions: 4, cell_size: 220.0 }
    }
}

/// Everything needed to reproduce a run; flags override individual fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub network: NetworkConfig,
    /// Vehicles per demand period summed over all OD pairs, before augmentation.
    pub base_demand: f64,
    pub augment: AugmentParams,
    pub sim: SimParams,
    pub sessions: usize,
    pub n_train: usize,
    pub mode: SensorMode,
    pub coverage: f64,
    pub noise_ld: f64,
    pub noise_drone: f64,
    /// Training-label noise; defaults to the drone sigma, doubled without drones.
    pub noise_label: Option<f64>,
    pub model: ModelConfig,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            network: NetworkConfig::default(),
            base_demand: 12000.0,
            augment: AugmentParams::default(),
            sim: SimParams::default(),
            sessions: 101,
            n_train: 75,
            mode: SensorMode::Full,
            coverage: 0.1,
            noise_ld: 0.05,
            noise_drone: 0.15,
            noise_label: None,
            model: ModelConfig::default(),
            jobs: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_train >= self.sessions {
            return Err(invalid(format!("need 0 < n_train < sessions, got {} of {}", self.n_train, self.sessions)));
        }
        if !(self.coverage > 0.0 && self.coverage <= 1.0) {
            return Err(invalid(format!("coverage must be in (0, 1], got {}", self.coverage)));
        }
        if !(self.base_demand >= 0.0) {
            return Err(invalid("base_demand must be non-negative"));
        }
        if self.network.regions == 0 || !(self.network.cell_size > 0.0) {
            return Err(invalid("network needs at least one region and a positive cell size"));
        }
        self.noise()?;
        self.model.validate()
    }

    /// SHA-256 of the canonical JSON form.
    /// Hash of every field that can change an output; `jobs` is left out.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&RunConfig { jobs: 0, ..self.clone() }).expect("config serializes");
        hex(&Sha256::digest(bytes))
    }

    pub fn label_sigma(&self) -> f64 {
        self.noise_label.unwrap_or(match self.mode {
            SensorMode::PnLdMinus => 2.0 * self.noise_drone,
            _ => self.noise_drone,
        })
    }

    pub fn noise(&self) -> Result<NoiseSpec> {
        NoiseSpec::new(self.noise_ld, self.noise_drone, self.label_sigma(), derive_seed(self.seed, "noise", 0))
    }

    /// Recorded in every artifact manifest.
    pub fn seeds(&self) -> serde_json::Value {
        serde_json::json!({
            "master": self.seed,
            "network": derive_seed(self.seed, "network", 0),
            "split": derive_seed(self.seed, "split", 0),
            "detectors": derive_seed(self.seed, "detectors", 0),
            "noise": derive_seed(self.seed, "noise", 0),
            "model": self.model.seed,
        })
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Independent sub-seed for a named purpose and index.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Runs `f` with at most `jobs` worker threads (0 = default pool).
#[cfg(feature = "parallel")]
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if jobs == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| invalid(format!("cannot start {jobs} workers: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(not(feature = "parallel"))]
pub fn with_jobs<T: Send>(_jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    Ok(f())
}

#[cfg(feature = "parallel")]
fn map_indices<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_indices<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..n).map(f).collect()
}

#[derive(Clone, Debug)]
pub struct Network {
    pub graph: RoadGraph,
    pub regions: RegionMap,
    pub grid: GridMap,
    pub signals: Vec<SignalPlan>,
}

impl Network {
    pub fn region_members(&self) -> Vec<Vec<usize>> {
        self.regions.members()
    }

    pub fn context(&self, hops: usize) -> Result<ModelContext> {
        ModelContext::new(&self.graph.neighbors(), hops, &self.region_members())
    }
}

pub fn build_network(cfg: &NetworkConfig, seed: u64) -> Result<Network> {
    let graph = build_grid_network_with_speed(
        cfg.rows,
        cfg.cols,
        cfg.seg_len,
        cfg.free_flow_speed,
        derive_seed(seed, "network", 0),
    )?;
    let regions = cluster_regions(&graph, cfg.regions, derive_seed(seed, "regions", 0))?;
    let grid = grid_partition(&graph, cfg.cell_size)?;
    let signals = default_signals(&graph, derive_seed(seed, "signals", 0));
    Ok(Network { graph, regions, grid, signals })
}

#[derive(Clone, Debug)]
pub struct SessionRun {
    pub index: usize,
    pub seed: u64,
    pub demand_scale: f64,
    pub trajectories: SessionTrajectories,
}

/// One augmented-demand session; its randomness depends only on the master seed and index.
pub fn simulate_one(cfg: &RunConfig, net: &Network, index: usize) -> Result<SessionRun> {
    let n = net.graph.intersections.len();
    let base = uniform_od(n, cfg.base_demand);
    let (od, scale) = augment_od(&base, derive_seed(cfg.seed, "augment", index as u64), &cfg.augment)?;
    let seed = derive_seed(cfg.seed, "session", index as u64);
    let mut trajectories = simulate_session(&net.graph, &od, &net.signals, seed, &cfg.sim)?;
    trajectories.demand_scale = scale;
    info!("session {index}: scale {scale:.3}, {} vehicles", trajectories.vehicles.len());
    Ok(SessionRun { index, seed, demand_scale: scale, trajectories })
}

/// Session with a fixed demand scale and no other OD perturbation.
pub fn simulate_scaled(cfg: &RunConfig, net: &Network, scale: f64, seed: u64) -> Result<SessionTrajectories> {
    let n = net.graph.intersections.len();
    let od = uniform_od(n, cfg.base_demand * scale);
    let mut t = simulate_session(&net.graph, &od, &net.signals, seed, &cfg.sim)?;
    t.demand_scale = scale;
    Ok(t)
}

pub fn simulate_sessions(cfg: &RunConfig, net: &Network) -> Result<Vec<SessionRun>> {
    with_jobs(cfg.jobs, || map_indices(cfg.sessions, |i| simulate_one(cfg, net, i)))?
}

pub fn drone_steps() -> usize {
    (SESSION_HORIZON / DRONE_RESOLUTION).round() as usize
}

pub fn slot_count() -> usize {
    (SESSION_HORIZON / SLOT_SECONDS).round() as usize
}

/// Ground-truth drone, detector and label series over the sample horizon.
pub fn session_speeds(graph: &RoadGraph, traj: &SessionTrajectories) -> Result<SessionSpeeds> {
    let splits = session_splits(graph, traj)?;
    let n = graph.len();
    let drone = SeriesMatrix::from_sums(&BinnedSums::from_splits(&splits, n, DRONE_RESOLUTION, drone_steps()));
    let seg = BinnedSums::from_splits(&splits, n, SLOT_SECONDS, slot_count());
    let points = PointBins::from_splits(graph, &splits, SLOT_SECONDS, slot_count());
    let series: Vec<SpeedSeries> = (0..n).map(|s| points.series(s)).collect();
    let ld = SeriesMatrix::from_series(&series, slot_count(), SLOT_SECONDS);
    Ok(SessionSpeeds { drone, ld, seg })
}

pub fn all_speeds(cfg: &RunConfig, net: &Network, runs: &[SessionRun]) -> Result<Vec<SessionSpeeds>> {
    with_jobs(cfg.jobs, || map_indices(runs.len(), |i| session_speeds(&net.graph, &runs[i].trajectories)))?
}

/// Per-segment detector series over the sample period of the training sessions, joined end to end.
pub fn placement_series(speeds: &[&SessionSpeeds]) -> Vec<SpeedSeries> {
    let n = speeds.first().map_or(0, |s| s.ld.entities);
    let first = (FIRST_WINDOW_START / SLOT_SECONDS).round() as usize;
    (0..n)
        .map(|seg| SpeedSeries {
            id: seg,
            resolution: SLOT_SECONDS,
            start: 0.0,
            values: speeds
                .iter()
                .flat_map(|s| (first..s.ld.steps).map(move |b| s.ld.get(seg, b)))
                .collect(),
        })
        .collect()
}

/// Sensor layouts of a dataset: one shared detector set, drone schedules per session.
#[derive(Clone, Debug)]
pub struct SensorPlan {
    pub ld_segments: Vec<usize>,
    pub layouts: Vec<SensorLayout>,
}

pub fn plan_sensors(cfg: &RunConfig, net: &Network, speeds: &[SessionSpeeds], train_ids: &[usize]) -> Result<SensorPlan> {
    let n = net.graph.len();
    if cfg.mode == SensorMode::Full {
        let layout = SensorLayout::complete(n, &net.grid, slot_count());
        return Ok(SensorPlan { ld_segments: layout.ld_segments.clone(), layouts: vec![layout; speeds.len()] });
    }
    let train: Vec<&SessionSpeeds> = train_ids.iter().map(|&i| &speeds[i]).collect();
    let ld_segments = place_loop_detectors(&placement_series(&train), cfg.coverage, derive_seed(cfg.seed, "detectors", 0))?;
    let layouts = (0..speeds.len())
        .map(|i| {
            let seed = derive_seed(cfg.seed, "drones", i as u64);
            SensorLayout::new(ld_segments.clone(), &net.grid, cfg.coverage, slot_count(), seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SensorPlan { ld_segments, layouts })
}

/// Observes every session under the configured sensor mode and cuts the samples.
pub fn build_dataset(cfg: &RunConfig, net: &Network, speeds: &[SessionSpeeds], scales: &[f64]) -> Result<(Dataset, SensorPlan)> {
    if speeds.len() != cfg.sessions || scales.len() != cfg.sessions {
        return Err(invalid(format!("config expects {} sessions, got {}", cfg.sessions, speeds.len())));
    }
    let (train_ids, _) = split_dataset(cfg.sessions, cfg.n_train, derive_seed(cfg.seed, "split", 0))?;
    let plan = plan_sensors(cfg, net, speeds, &train_ids)?;
    let noise = cfg.noise()?;
    let regions = net.region_members();
    let mut samples = Vec::with_capacity(cfg.sessions * crate::dataset::WINDOWS_PER_SESSION);
    for (i, s) in speeds.iter().enumerate() {
        let obs = observe_session(s, &plan.layouts[i], &net.grid, &regions, cfg.mode, &noise, i as u64)?;
        let split = if train_ids.binary_search(&i).is_ok() { Split::Train } else { Split::Test };
        samples.extend(extract_samples(&obs, i, scales[i], split)?);
    }
    let mut ds = Dataset::new(cfg.seed, net.graph.len(), regions.len());
    ds.samples = samples;
    ds.normalizer = Some(Normalizer::fit(&ds.samples)?);
    ds.metadata = serde_json::json!({
        "config_hash": cfg.hash(),
        "seeds": cfg.seeds(),
        "mode": cfg.mode.to_string(),
        "coverage": cfg.coverage,
        "noise": noise,
        "ld_segments": plan.ld_segments,
        "train_sessions": train_ids,
    });
    Ok((ds, plan))
}

/// Normalized training samples of a dataset.
pub fn normalized_train(ds: &Dataset) -> Result<Vec<MSTSSample>> {
    let norm = ds.normalizer.ok_or_else(|| invalid("dataset has no normalizer"))?;
    Ok(ds.split(Split::Train).map(|s| norm.apply(s)).collect())
}

pub fn train_on(model_cfg: &ModelConfig, net: &Network, ds: &Dataset) -> Result<(Model, TrainReport)> {
    let ctx = net.context(model_cfg.hops)?;
    let mut model = Model::new(model_cfg.clone())?;
    let report = train(&mut model, &ctx, &normalized_train(ds)?)?;
    Ok((model, report))
}

pub fn test_samples(ds: &Dataset) -> Vec<MSTSSample> {
    ds.split(Split::Test).cloned().collect()
}

pub fn predict_all(model: &Model, ctx: &ModelContext, norm: &Normalizer, samples: &[MSTSSample]) -> Result<Vec<Prediction>> {
    map_indices(samples.len(), |i| predict(model, ctx, norm, &samples[i]))
}

/// Test-set report of a trained model, labeled with its variant name.
pub fn evaluate_model(model: &Model, net: &Network, ds: &Dataset) -> Result<(EvalReport, Vec<Prediction>)> {
    let ctx = net.context(model.config.hops)?;
    let norm = ds.normalizer.ok_or_else(|| invalid("dataset has no normalizer"))?;
    let test = test_samples(ds);
    let preds = predict_all(model, &ctx, &norm, &test)?;
    Ok((evaluate(&model.config.variant(), &test, &preds)?, preds))
}

/// 30-minute MAE at each coverage, rebuilding sensors and retraining per point.
///
/// Uses the configured mode (partial modes only make sense below full coverage). A failed
/// point is reported in its row and the sweep continues.
pub fn coverage_sweep(cfg: &RunConfig, net: &Network, speeds: &[SessionSpeeds], scales: &[f64], coverages: &[f64]) -> Vec<CoverageRow> {
    let mut rows: Vec<CoverageRow> = coverages
        .iter()
        .map(|&c| {
            let run = || -> Result<CoverageRow> {
                let point = RunConfig { coverage: c, ..cfg.clone() };
                point.validate()?;
                let (ds, _) = build_dataset(&point, net, speeds, scales)?;
                let (model, _) = train_on(&point.model, net, &ds)?;
                let (report, _) = evaluate_model(&model, net, &ds)?;
                let test = test_samples(&ds);
                let la = LabelAverage::fit(&test, LaStat::Mean, false)?;
                let la_preds: Vec<Prediction> = test.iter().map(|s| la.predict(s)).collect();
                let la_report = evaluate("LA", &test, &la_preds)?;
                let v = model.config.variant();
                Ok(CoverageRow {
                    coverage: c,
                    seg_mae: report.mae(&v, Task::Segment, 30),
                    reg_mae: report.mae(&v, Task::Regional, 30),
                    la_seg_mae: la_report.mae("LA", Task::Segment, 30),
                    la_reg_mae: la_report.mae("LA", Task::Regional, 30),
                    error: None,
                })
            };
            run().unwrap_or_else(|e| {
                warn!("coverage {c}: {e}");
                CoverageRow { coverage: c, seg_mae: None, reg_mae: None, la_seg_mae: None, la_reg_mae: None, error: Some(e.to_string()) }
            })
        })
        .collect();
    crate::evalkit::sort_coverage_rows(&mut rows);
    rows
}

/// MFD points of a session at the detector slot resolution.
pub fn session_mfd(graph: &RoadGraph, traj: &SessionTrajectories) -> Result<Vec<MfdPoint>> {
    let splits = session_splits(graph, traj)?;
    Ok(mfd_series(&splits, SLOT_SECONDS, traj.duration, graph.total_length()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MfdSummary {
    pub max_density: f64,
    pub min_speed: Option<f64>,
    /// Signed area enclosed by the density/flow path; non-zero indicates hysteresis.
    pub loop_area: f64,
}

/// Summary over the intervals inside `[t0, t1]` that carry traffic; the emptying tail after
/// demand ends is usually excluded because a handful of queued vehicles dominate its speed.
pub fn summarize_mfd(points: &[MfdPoint], t0: f64, t1: f64) -> MfdSummary {
    let active: Vec<&MfdPoint> = points.iter().filter(|p| p.k > 0.0 && p.t0 >= t0 && p.t1 <= t1).collect();
    let max_density = active.iter().map(|p| p.k).fold(0.0, f64::max);
    let min_speed = active.iter().filter_map(|p| p.v).reduce(f64::min);
    let mut area = 0.0;
    for i in 0..active.len() {
        let a = active[i];
        let b = active[(i + 1) % active.len()];
        area += a.k * b.q - b.k * a.q;
    }
    MfdSummary { max_density, min_speed, loop_area: area / 2.0 }
}

pub fn write_mfd_csv(rows: &[(usize, f64, Vec<MfdPoint>)], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["session", "demand_scale", "t0", "t1", "flow", "density", "speed"])?;
    for (session, scale, points) in rows {
        for p in points {
            w.write_record([
                session.to_string(),
                format!("{scale:.4}"),
                format!("{}", p.t0),
                format!("{}", p.t1),
                format!("{:.6e}", p.q),
                format!("{:.6e}", p.k),
                p.v.map(|v| format!("{v:.4}")).unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_travel_time_csv(rows: &[(usize, f64, TravelTimeStats)], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["session", "demand_scale", "bin_start_s", "bin_end_s", "vehicles"])?;
    for (session, scale, stats) in rows {
        for (b, &count) in stats.histogram.iter().enumerate() {
            let lo = b as f64 * stats.bin_width;
            w.write_record([
                session.to_string(),
                format!("{scale:.4}"),
                format!("{lo}"),
                format!("{}", lo + stats.bin_width),
                count.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn session_travel_times(runs: &[SessionRun]) -> Vec<(usize, f64, TravelTimeStats)> {
    runs.iter().map(|r| (r.index, r.demand_scale, travel_time_stats(&r.trajectories))).collect()
}
