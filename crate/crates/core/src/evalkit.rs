//! Forecast metrics, constant baselines and grouped error tables.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::{MSTSSample, COARSE_STEPS};
use crate::error::{invalid, Result};
use crate::himsnet::{Modality, Prediction};

/// Reported horizons as `(minutes, step index)`.
pub const HORIZONS: [(u32, usize); 2] = [(15, 4), (30, 9)];
/// MAPE* only counts labels above this speed (m/s).
pub const MAPE_MIN_SPEED: f64 = 1.0;
pub const SPEED_BIN_WIDTH: f64 = 2.0;
pub const SPEED_BIN_MAX: f64 = 14.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Segment,
    Regional,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Segment => "segment",
            Task::Regional => "regional",
        })
    }
}

/// `None` means no entry qualified; it is rendered as `n/a`, never as zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    /// Percent.
    pub mape: Option<f64>,
}

pub fn fmt_metric(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.4}"),
        None => "n/a".to_string(),
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct Acc {
    n: usize,
    abs: f64,
    sq: f64,
    n_pct: usize,
    pct: f64,
}

impl Acc {
    fn add(&mut self, pred: f64, label: f64) {
        let e = pred - label;
        self.n += 1;
        self.abs += e.abs();
        self.sq += e * e;
        if label > MAPE_MIN_SPEED {
            self.n_pct += 1;
            self.pct += (e / label).abs();
        }
    }

    fn metrics(&self) -> Metrics {
        let n = self.n as f64;
        Metrics {
            mae: (self.n > 0).then(|| self.abs / n),
            rmse: (self.n > 0).then(|| (self.sq / n).sqrt()),
            mape: (self.n_pct > 0).then(|| 100.0 * self.pct / self.n_pct as f64),
        }
    }
}

/// Errors collected per entity (segment or region), averaged across entities on read.
#[derive(Clone, Debug)]
pub struct ErrorTable {
    acc: Vec<Acc>,
}

impl ErrorTable {
    pub fn new(entities: usize) -> Self {
        ErrorTable { acc: vec![Acc::default(); entities] }
    }

    /// Records one pair; NaN labels are MISSING and skipped.
    pub fn add(&mut self, entity: usize, pred: f64, label: f32) {
        if !label.is_nan() {
            self.acc[entity].add(pred, label as f64);
        }
    }

    pub fn entity(&self, entity: usize) -> Metrics {
        self.acc[entity].metrics()
    }

    pub fn count(&self, entity: usize) -> usize {
        self.acc[entity].n
    }

    /// Each metric computed per entity, then averaged over the entities where it is defined.
    pub fn metrics(&self) -> Metrics {
        self.metrics_over(0..self.acc.len())
    }

    pub fn metrics_over(&self, entities: impl IntoIterator<Item = usize>) -> Metrics {
        let per: Vec<Metrics> = entities.into_iter().map(|e| self.acc[e].metrics()).collect();
        let avg = |f: fn(&Metrics) -> Option<f64>| {
            let v: Vec<f64> = per.iter().filter_map(f).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        Metrics { mae: avg(|m| m.mae), rmse: avg(|m| m.rmse), mape: avg(|m| m.mape) }
    }
}

/// Metrics of a single entity's aligned predictions and labels (NaN = MISSING).
pub fn metrics(pred: &[f64], label: &[f32]) -> Result<Metrics> {
    if pred.len() != label.len() {
        return Err(invalid(format!("{} predictions for {} labels", pred.len(), label.len())));
    }
    let mut t = ErrorTable::new(1);
    for (&p, &l) in pred.iter().zip(label) {
        t.add(0, p, l);
    }
    Ok(t.metrics())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: String,
    pub task: Task,
    pub horizon_min: u32,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

fn check_preds(samples: &[MSTSSample], preds: &[Prediction]) -> Result<()> {
    if samples.len() != preds.len() {
        return Err(invalid(format!("{} predictions for {} samples", preds.len(), samples.len())));
    }
    for (s, p) in samples.iter().zip(preds) {
        if p.seg.len() != s.seg.len() || p.reg.len() != s.reg.len() {
            return Err(invalid(format!("prediction shape does not match sample {}", s.id())));
        }
    }
    Ok(())
}

fn table(samples: &[MSTSSample], preds: &[Prediction], task: Task, step: usize) -> ErrorTable {
    let n = match task {
        Task::Segment => samples.first().map_or(0, |s| s.n_segments),
        Task::Regional => samples.first().map_or(0, |s| s.n_regions),
    };
    let mut t = ErrorTable::new(n);
    for (s, p) in samples.iter().zip(preds) {
        let (pv, lv) = match task {
            Task::Segment => (&p.seg, &s.seg),
            Task::Regional => (&p.reg, &s.reg),
        };
        for e in 0..n {
            let i = e * COARSE_STEPS + step;
            t.add(e, pv[i], lv[i]);
        }
    }
    t
}

/// Scores predictions against the labels stored in `samples` at the 15 and 30 minute horizons.
pub fn evaluate(method: &str, samples: &[MSTSSample], preds: &[Prediction]) -> Result<EvalReport> {
    check_preds(samples, preds)?;
    let mut rows = Vec::new();
    for task in [Task::Segment, Task::Regional] {
        for (minutes, step) in HORIZONS {
            rows.push(EvalRow {
                method: method.to_string(),
                task,
                horizon_min: minutes,
                metrics: table(samples, preds, task, step).metrics(),
            });
        }
    }
    Ok(EvalReport { rows })
}

impl EvalReport {
    pub fn extend(&mut self, other: EvalReport) {
        self.rows.extend(other.rows);
    }

    pub fn get(&self, method: &str, task: Task, horizon_min: u32) -> Option<&Metrics> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.task == task && r.horizon_min == horizon_min)
            .map(|r| &r.metrics)
    }

    pub fn mae(&self, method: &str, task: Task, horizon_min: u32) -> Option<f64> {
        self.get(method, task, horizon_min).and_then(|m| m.mae)
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["method", "task", "horizon_min", "mae", "rmse", "mape_pct"])?;
        for r in &self.rows {
            w.write_record([
                r.method.clone(),
                r.task.to_string(),
                r.horizon_min.to_string(),
                fmt_metric(r.metrics.mae),
                fmt_metric(r.metrics.rmse),
                fmt_metric(r.metrics.mape),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaStat {
    Mean,
    Median,
}

/// Label-average constants, the only baseline that reads labels (test labels only).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelAverage {
    pub stat: LaStat,
    pub per_entity: bool,
    /// One value, or one per segment when `per_entity`; `None` if nothing was present.
    pub seg: Vec<Option<f64>>,
    pub reg: Vec<Option<f64>>,
}

fn summarize(mut v: Vec<f64>, stat: LaStat) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    match stat {
        LaStat::Mean => Some(v.iter().sum::<f64>() / v.len() as f64),
        LaStat::Median => {
            v.sort_by(f64::total_cmp);
            crate::edie::percentile(&v, 0.5)
        }
    }
}

fn label_constants(samples: &[MSTSSample], entities: usize, pick: fn(&MSTSSample) -> &[f32], stat: LaStat, per_entity: bool) -> Vec<Option<f64>> {
    let groups = if per_entity { entities } else { 1 };
    let mut vals = vec![Vec::new(); groups];
    for s in samples {
        for (i, &v) in pick(s).iter().enumerate() {
            if !v.is_nan() {
                let g = if per_entity { i / COARSE_STEPS } else { 0 };
                vals[g].push(v as f64);
            }
        }
    }
    vals.into_iter().map(|v| summarize(v, stat)).collect()
}

impl LabelAverage {
    pub fn fit(test: &[MSTSSample], stat: LaStat, per_entity: bool) -> Result<LabelAverage> {
        let first = test.first().ok_or_else(|| invalid("label average needs test samples"))?;
        Ok(LabelAverage {
            stat,
            per_entity,
            seg: label_constants(test, first.n_segments, |s| &s.seg, stat, per_entity),
            reg: label_constants(test, first.n_regions, |s| &s.reg, stat, per_entity),
        })
    }

    /// Global segment-level constant used as the fallback for empty inputs.
    pub fn global_segment(&self) -> Option<f64> {
        let v: Vec<f64> = self.seg.iter().flatten().copied().collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn name(&self) -> String {
        match (self.stat, self.per_entity) {
            (LaStat::Mean, false) => "LA".into(),
            (LaStat::Median, false) => "LA(median)".into(),
            (LaStat::Mean, true) => "LA(per-segment)".into(),
            (LaStat::Median, true) => "LA(per-segment,median)".into(),
        }
    }

    pub fn predict(&self, sample: &MSTSSample) -> Prediction {
        let expand = |consts: &[Option<f64>], n: usize| -> Vec<f64> {
            (0..n * COARSE_STEPS)
                .map(|i| {
                    let c = if consts.len() == 1 { consts[0] } else { consts[i / COARSE_STEPS] };
                    c.unwrap_or(0.0)
                })
                .collect()
        };
        Prediction { seg: expand(&self.seg, sample.n_segments), reg: expand(&self.reg, sample.n_regions) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputBaseline {
    /// Last present input value.
    LastObservation,
    /// Mean of present input values.
    InputAverage,
}

impl InputBaseline {
    pub fn name(self, modality: Modality) -> String {
        let k = match self {
            InputBaseline::LastObservation => "LO",
            InputBaseline::InputAverage => "IA",
        };
        format!("{k}({})", modality.name())
    }
}

/// One constant per segment from its input row; `None` if the row is entirely MISSING.
pub fn input_constants(values: &[f32], steps: usize, kind: InputBaseline) -> Vec<Option<f64>> {
    values
        .chunks(steps)
        .map(|row| {
            let present = row.iter().filter(|v| !v.is_nan()).map(|&v| v as f64);
            match kind {
                InputBaseline::LastObservation => row.iter().rev().find(|v| !v.is_nan()).map(|&v| v as f64),
                InputBaseline::InputAverage => {
                    let (sum, n) = present.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
                    (n > 0).then(|| sum / n as f64)
                }
            }
        })
        .collect()
}

/// LO/IA forecast from the inputs of one modality. Reads no labels.
///
/// Segments without any present input fall back to `fallback` (the LA value). Regional
/// forecasts average the member segments' forecasts.
pub fn input_baseline(
    kind: InputBaseline,
    modality: Modality,
    sample: &MSTSSample,
    regions: &[Vec<usize>],
    fallback: f64,
) -> Prediction {
    let (values, steps) = match modality {
        Modality::Drone => (&sample.drone, sample.drone.len() / sample.n_segments.max(1)),
        Modality::Ld => (&sample.ld, COARSE_STEPS),
    };
    let per_seg: Vec<f64> = input_constants(values, steps.max(1), kind).into_iter().map(|c| c.unwrap_or(fallback)).collect();
    let reg: Vec<f64> = regions
        .iter()
        .map(|m| if m.is_empty() { fallback } else { m.iter().map(|&s| per_seg[s]).sum::<f64>() / m.len() as f64 })
        .collect();
    let rep = |v: &[f64]| v.iter().flat_map(|&c| std::iter::repeat_n(c, COARSE_STEPS)).collect();
    Prediction { seg: rep(&per_seg), reg: rep(&reg) }
}

/// All baselines on the test samples: LO and IA for both modalities, then the LA variants.
pub fn baseline_report(test: &[MSTSSample], regions: &[Vec<usize>]) -> Result<EvalReport> {
    let la = LabelAverage::fit(test, LaStat::Mean, false)?;
    let fallback = la.global_segment().unwrap_or(0.0);
    let mut report = EvalReport::default();
    for kind in [InputBaseline::LastObservation, InputBaseline::InputAverage] {
        for m in [Modality::Drone, Modality::Ld] {
            let preds: Vec<Prediction> = test.iter().map(|s| input_baseline(kind, m, s, regions, fallback)).collect();
            report.extend(evaluate(&kind.name(m), test, &preds)?);
        }
    }
    for (stat, per) in [(LaStat::Mean, false), (LaStat::Median, false), (LaStat::Mean, true)] {
        let la = LabelAverage::fit(test, stat, per)?;
        let preds: Vec<Prediction> = test.iter().map(|s| la.predict(s)).collect();
        report.extend(evaluate(&la.name(), test, &preds)?);
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    DemandScale,
    SpeedBin,
    Segment,
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grouping::DemandScale => "demand_scale",
            Grouping::SpeedBin => "speed_bin",
            Grouping::Segment => "segment",
        })
    }
}

/// One row of a grouped segment-level MAE table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub grouping: Grouping,
    pub group: String,
    pub horizon_min: u32,
    pub mae: Option<f64>,
    /// Segments contributing to the group.
    pub segments: usize,
    /// Midpoint, per-segment rows only.
    pub x: Option<f64>,
    pub y: Option<f64>,
}

/// Segment-level MAE per demand scale (rounded to 0.1).
pub fn group_by_demand(samples: &[MSTSSample], preds: &[Prediction]) -> Result<Vec<GroupRow>> {
    check_preds(samples, preds)?;
    let mut groups: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        groups.entry((s.demand_scale * 10.0).round() as i64).or_default().push(i);
    }
    let mut rows = Vec::new();
    for (key, idx) in groups {
        let ss: Vec<MSTSSample> = idx.iter().map(|&i| samples[i].clone()).collect();
        let ps: Vec<Prediction> = idx.iter().map(|&i| preds[i].clone()).collect();
        for (minutes, step) in HORIZONS {
            let t = table(&ss, &ps, Task::Segment, step);
            rows.push(GroupRow {
                grouping: Grouping::DemandScale,
                group: format!("{:.1}", key as f64 / 10.0),
                horizon_min: minutes,
                mae: t.metrics().mae,
                segments: (0..ss[0].n_segments).filter(|&e| t.count(e) > 0).count(),
                x: None,
                y: None,
            });
        }
    }
    Ok(rows)
}

/// Bin index of a segment's mean label speed: `[0,2), [2,4), ... [12,14]`, clamped.
pub fn speed_bin(v: f64) -> usize {
    let last = (SPEED_BIN_MAX / SPEED_BIN_WIDTH) as usize - 1;
    ((v / SPEED_BIN_WIDTH).floor().max(0.0) as usize).min(last)
}

fn mean_label_speeds(samples: &[MSTSSample]) -> Vec<Option<f64>> {
    let n = samples.first().map_or(0, |s| s.n_segments);
    (0..n)
        .map(|e| {
            let v: Vec<f64> = samples
                .iter()
                .flat_map(|s| s.seg[e * COARSE_STEPS..(e + 1) * COARSE_STEPS].iter())
                .filter(|v| !v.is_nan())
                .map(|&v| v as f64)
                .collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect()
}

/// Segment MAE averaged within bins of the segment's mean test-label speed.
pub fn group_by_speed(samples: &[MSTSSample], preds: &[Prediction]) -> Result<Vec<GroupRow>> {
    check_preds(samples, preds)?;
    let means = mean_label_speeds(samples);
    let n_bins = (SPEED_BIN_MAX / SPEED_BIN_WIDTH) as usize;
    let mut members = vec![Vec::new(); n_bins];
    for (e, m) in means.iter().enumerate() {
        if let Some(m) = m {
            members[speed_bin(*m)].push(e);
        }
    }
    let mut rows = Vec::new();
    for (minutes, step) in HORIZONS {
        let t = table(samples, preds, Task::Segment, step);
        for (b, m) in members.iter().enumerate() {
            let lo = b as f64 * SPEED_BIN_WIDTH;
            rows.push(GroupRow {
                grouping: Grouping::SpeedBin,
                group: format!("[{lo},{})", lo + SPEED_BIN_WIDTH),
                horizon_min: minutes,
                mae: t.metrics_over(m.iter().copied()).mae,
                segments: m.len(),
                x: None,
                y: None,
            });
        }
    }
    Ok(rows)
}

/// One row per segment with its midpoint, for map rendering.
pub fn group_by_segment(samples: &[MSTSSample], preds: &[Prediction], midpoints: &[[f64; 2]]) -> Result<Vec<GroupRow>> {
    check_preds(samples, preds)?;
    let n = samples.first().map_or(0, |s| s.n_segments);
    if midpoints.len() != n {
        return Err(invalid(format!("{} midpoints for {n} segments", midpoints.len())));
    }
    let mut rows = Vec::new();
    for (minutes, step) in HORIZONS {
        let t = table(samples, preds, Task::Segment, step);
        for (e, mid) in midpoints.iter().enumerate() {
            rows.push(GroupRow {
                grouping: Grouping::Segment,
                group: e.to_string(),
                horizon_min: minutes,
                mae: t.entity(e).mae,
                segments: 1,
                x: Some(mid[0]),
                y: Some(mid[1]),
            });
        }
    }
    Ok(rows)
}

pub fn write_group_csv(rows: &[GroupRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["grouping", "group", "horizon_min", "mae", "segments", "x", "y"])?;
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.3}")).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.grouping.to_string(),
            r.group.clone(),
            r.horizon_min.to_string(),
            fmt_metric(r.mae),
            r.segments.to_string(),
            opt(r.x),
            opt(r.y),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// 30-minute MAE of one coverage point; `error` is set when training failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub coverage: f64,
    pub seg_mae: Option<f64>,
    pub reg_mae: Option<f64>,
    pub la_seg_mae: Option<f64>,
    pub la_reg_mae: Option<f64>,
    pub error: Option<String>,
}

pub fn sort_coverage_rows(rows: &mut [CoverageRow]) {
    rows.sort_by(|a, b| a.coverage.total_cmp(&b.coverage));
}

pub fn write_coverage_csv(rows: &[CoverageRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["coverage", "seg_mae_30", "reg_mae_30", "la_seg_mae_30", "la_reg_mae_30", "error"])?;
    for r in rows {
        w.write_record([
            format!("{}", r.coverage),
            fmt_metric(r.seg_mae),
            fmt_metric(r.reg_mae),
            fmt_metric(r.la_seg_mae),
            fmt_metric(r.la_reg_mae),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
