//! Traffic variables from trajectories via Edie's generalized definitions.
//!
//! Every quantity here is computed from [`TrajectorySplit`]s: the movement of one vehicle
//! between two consecutive known positions, assumed to happen at constant speed. A split is
//! clipped to an aggregation interval proportionally, so sums of distance and time are additive
//! under any partition of the time axis.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::roadnet::{RoadGraph, RoadSegment};
use crate::simcore::SessionTrajectories;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySplit {
    pub vehicle: usize,
    pub segment: usize,
    pub t_s: f64,
    pub t_e: f64,
    pub x_s: f64,
    pub x_e: f64,
}

impl TrajectorySplit {
    pub fn dx(&self) -> f64 {
        self.x_e - self.x_s
    }

    pub fn dt(&self) -> f64 {
        self.t_e - self.t_s
    }

    pub fn speed(&self) -> f64 {
        self.dx() / self.dt()
    }

    /// Distance and time inside `[t0, t1)`, assuming constant speed over the split.
    pub fn clip(&self, t0: f64, t1: f64) -> Option<(f64, f64)> {
        let a = self.t_s.max(t0);
        let b = self.t_e.min(t1);
        if b <= a {
            return None;
        }
        let dt = b - a;
        Some((self.dx() * dt / self.dt(), dt))
    }
}

/// Splits one vehicle's pass over a segment.
///
/// Consecutive records become interior splits. The entry and exit positions are unknown, so
/// the leading split runs backwards from the first record at the first interior speed and the
/// trailing split forwards from the last record at the last interior speed, clamped to the
/// segment. With a single record the segment-average speed `length / (t_out - t_in)` is used
/// for both. A vehicle still on the segment (`t_out = None`) has no trailing split.
pub fn to_splits(
    vehicle: usize,
    segment: &RoadSegment,
    records: &[(f64, f64)],
    t_in: f64,
    t_out: Option<f64>,
) -> Result<Vec<TrajectorySplit>> {
    if records.windows(2).any(|w| !(w[1].0 > w[0].0) || w[1].1 < w[0].1) {
        return Err(invalid(format!("vehicle {vehicle}: records must be time-ordered with non-decreasing x")));
    }
    if let Some(&(t1, _)) = records.first() {
        if !(t_in < t1) {
            return Err(invalid(format!("vehicle {vehicle}: entry time {t_in} not before first record {t1}")));
        }
    }
    if let (Some(&(tn, _)), Some(out)) = (records.last(), t_out) {
        if !(tn < out) {
            return Err(invalid(format!("vehicle {vehicle}: exit time {out} not after last record {tn}")));
        }
    }
    let len = segment.length;
    let clamp = |x: f64| x.clamp(0.0, len);
    let mk = |t_s: f64, t_e: f64, x_s: f64, x_e: f64| TrajectorySplit {
        vehicle,
        segment: segment.id,
        t_s,
        t_e,
        x_s,
        x_e,
    };
    let mut splits = Vec::with_capacity(records.len() + 1);
    match records {
        [] => {
            if let Some(out) = t_out {
                splits.push(mk(t_in, out, 0.0, len));
            }
        }
        [(t1, x1)] => {
            let v = t_out.map(|out| len / (out - t_in)).unwrap_or(segment.free_flow_speed);
            splits.push(mk(t_in, *t1, clamp(x1 - v * (t1 - t_in)).min(*x1), *x1));
            if let Some(out) = t_out {
                splits.push(mk(*t1, out, *x1, clamp(x1 + v * (out - t1)).max(*x1)));
            }
        }
        _ => {
            let (t1, x1) = records[0];
            let (t2, x2) = records[1];
            let v_first = (x2 - x1) / (t2 - t1);
            splits.push(mk(t_in, t1, clamp(x1 - v_first * (t1 - t_in)).min(x1), x1));
            for w in records.windows(2) {
                splits.push(mk(w[0].0, w[1].0, w[0].1, w[1].1));
            }
            if let Some(out) = t_out {
                let (ta, xa) = records[records.len() - 2];
                let (tb, xb) = records[records.len() - 1];
                let v_last = (xb - xa) / (tb - ta);
                splits.push(mk(tb, out, xb, clamp(xb + v_last * (out - tb)).max(xb)));
            }
        }
    }
    splits.retain(|s| s.t_e > s.t_s);
    Ok(splits)
}

/// All splits of a session, grouped by vehicle then leg.
pub fn session_splits(graph: &RoadGraph, session: &SessionTrajectories) -> Result<Vec<TrajectorySplit>> {
    let mut out = Vec::new();
    for v in &session.vehicles {
        for leg in &v.legs {
            out.extend(to_splits(v.id, &graph.segments[leg.segment], &leg.records, leg.t_in, leg.t_out)?);
        }
    }
    Ok(out)
}

/// Total distance traveled and total time spent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowSums {
    pub distance: f64,
    pub time: f64,
}

impl FlowSums {
    /// Edie space-mean speed; `None` when no vehicle contributed.
    pub fn speed(&self) -> Option<f64> {
        (self.time > 0.0).then(|| self.distance / self.time)
    }

    pub fn add(&mut self, other: FlowSums) {
        self.distance += other.distance;
        self.time += other.time;
    }
}

pub fn accumulate<'a>(splits: impl IntoIterator<Item = &'a TrajectorySplit>, t0: f64, t1: f64) -> FlowSums {
    let mut acc = FlowSums::default();
    for s in splits {
        if let Some((dx, dt)) = s.clip(t0, t1) {
            acc.distance += dx;
            acc.time += dt;
        }
    }
    acc
}

/// Space-mean speed `sum(dx) / sum(dt)` of the splits overlapping `[t0, t1)`.
pub fn segment_speed<'a>(splits: impl IntoIterator<Item = &'a TrajectorySplit>, t0: f64, t1: f64) -> Option<f64> {
    accumulate(splits, t0, t1).speed()
}

/// Same formula as [`segment_speed`] over the pooled splits of a region.
pub fn regional_speed<'a>(splits: impl IntoIterator<Item = &'a TrajectorySplit>, t0: f64, t1: f64) -> Option<f64> {
    segment_speed(splits, t0, t1)
}

/// Whether a split triggers a detector at `d`: it must cross strictly.
pub fn detects(split: &TrajectorySplit, d: f64) -> bool {
    split.x_s < d && d < split.x_e
}

/// Loop-detector speed: arithmetic mean of `dx/dt` over splits crossing `d` whose start time
/// falls in `[t0, t1)`. Returns the mean and the number of detections.
pub fn point_speed<'a>(
    splits: impl IntoIterator<Item = &'a TrajectorySplit>,
    d: f64,
    segment_length: f64,
    t0: f64,
    t1: f64,
) -> Result<(Option<f64>, usize)> {
    if !(d > 0.0 && d < segment_length) {
        return Err(invalid(format!("detector at {d} m outside segment of length {segment_length} m")));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for s in splits {
        if detects(s, d) && s.t_s >= t0 && s.t_s < t1 {
            sum += s.speed();
            n += 1;
        }
    }
    Ok(((n > 0).then(|| sum / n as f64), n))
}

/// One point of the macroscopic fundamental diagram.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MfdPoint {
    pub t0: f64,
    pub t1: f64,
    /// Flow `D / (t L)`.
    pub q: f64,
    /// Density `T / (t L)`.
    pub k: f64,
    /// Network mean speed `q / k`.
    pub v: Option<f64>,
}

pub fn mfd_point<'a>(
    splits: impl IntoIterator<Item = &'a TrajectorySplit>,
    t0: f64,
    t1: f64,
    total_length: f64,
) -> MfdPoint {
    mfd_from_sums(accumulate(splits, t0, t1), t0, t1, total_length)
}

fn mfd_from_sums(sums: FlowSums, t0: f64, t1: f64, total_length: f64) -> MfdPoint {
    let norm = (t1 - t0) * total_length;
    let q = sums.distance / norm;
    let k = sums.time / norm;
    MfdPoint { t0, t1, q, k, v: (k > 0.0).then(|| q / k) }
}

/// MFD points for consecutive intervals of `resolution` seconds covering `[0, horizon)`.
pub fn mfd_series(splits: &[TrajectorySplit], resolution: f64, horizon: f64, total_length: f64) -> Vec<MfdPoint> {
    let n_bins = (horizon / resolution).ceil() as usize;
    let mut bins = BinnedSums::new(1, resolution, n_bins);
    for s in splits {
        bins.add(0, s);
    }
    (0..n_bins)
        .map(|b| {
            let t0 = b as f64 * resolution;
            mfd_from_sums(bins.get(0, b), t0, t0 + resolution, total_length)
        })
        .collect()
}

/// Per-entity distance/time sums on a regular time grid starting at 0.
#[derive(Clone, Debug, PartialEq)]
pub struct BinnedSums {
    pub resolution: f64,
    pub n_bins: usize,
    pub entities: usize,
    distance: Vec<f64>,
    time: Vec<f64>,
}

impl BinnedSums {
    pub fn new(entities: usize, resolution: f64, n_bins: usize) -> Self {
        BinnedSums {
            resolution,
            n_bins,
            entities,
            distance: vec![0.0; entities * n_bins],
            time: vec![0.0; entities * n_bins],
        }
    }

    pub fn from_splits(splits: &[TrajectorySplit], entities: usize, resolution: f64, n_bins: usize) -> Self {
        let mut b = Self::new(entities, resolution, n_bins);
        for s in splits {
            b.add(s.segment, s);
        }
        b
    }

    pub fn add(&mut self, entity: usize, split: &TrajectorySplit) {
        let first = (split.t_s / self.resolution).floor().max(0.0) as usize;
        let mut bin = first;
        while bin < self.n_bins {
            let t0 = bin as f64 * self.resolution;
            if t0 >= split.t_e {
                break;
            }
            if let Some((dx, dt)) = split.clip(t0, t0 + self.resolution) {
                let i = entity * self.n_bins + bin;
                self.distance[i] += dx;
                self.time[i] += dt;
            }
            bin += 1;
        }
    }

    pub fn get(&self, entity: usize, bin: usize) -> FlowSums {
        let i = entity * self.n_bins + bin;
        FlowSums { distance: self.distance[i], time: self.time[i] }
    }

    pub fn speed(&self, entity: usize, bin: usize) -> Option<f64> {
        self.get(entity, bin).speed()
    }

    pub fn series(&self, entity: usize) -> SpeedSeries {
        SpeedSeries {
            id: entity,
            resolution: self.resolution,
            start: 0.0,
            values: (0..self.n_bins).map(|b| self.speed(entity, b)).collect(),
        }
    }

    /// Sums pooled over groups of entities (e.g. regions).
    pub fn pooled(&self, groups: &[Vec<usize>]) -> BinnedSums {
        let mut out = BinnedSums::new(groups.len(), self.resolution, self.n_bins);
        for (g, members) in groups.iter().enumerate() {
            for &e in members {
                for b in 0..self.n_bins {
                    let src = e * self.n_bins + b;
                    let dst = g * self.n_bins + b;
                    out.distance[dst] += self.distance[src];
                    out.time[dst] += self.time[src];
                }
            }
        }
        out
    }
}

/// Per-segment loop-detector aggregates on a regular time grid starting at 0.
#[derive(Clone, Debug, PartialEq)]
pub struct PointBins {
    pub resolution: f64,
    pub n_bins: usize,
    speed_sum: Vec<f64>,
    count: Vec<u32>,
}

impl PointBins {
    pub fn from_splits(graph: &RoadGraph, splits: &[TrajectorySplit], resolution: f64, n_bins: usize) -> Self {
        let mut speed_sum = vec![0.0; graph.len() * n_bins];
        let mut count = vec![0u32; graph.len() * n_bins];
        for s in splits {
            let d = graph.segments[s.segment].detector_offset;
            if !detects(s, d) {
                continue;
            }
            let bin = (s.t_s / resolution).floor() as usize;
            if bin < n_bins {
                speed_sum[s.segment * n_bins + bin] += s.speed();
                count[s.segment * n_bins + bin] += 1;
            }
        }
        PointBins { resolution, n_bins, speed_sum, count }
    }

    pub fn speed(&self, segment: usize, bin: usize) -> Option<f64> {
        let i = segment * self.n_bins + bin;
        (self.count[i] > 0).then(|| self.speed_sum[i] / self.count[i] as f64)
    }

    pub fn count(&self, segment: usize, bin: usize) -> u32 {
        self.count[segment * self.n_bins + bin]
    }

    pub fn series(&self, segment: usize) -> SpeedSeries {
        SpeedSeries {
            id: segment,
            resolution: self.resolution,
            start: 0.0,
            values: (0..self.n_bins).map(|b| self.speed(segment, b)).collect(),
        }
    }
}

/// Regular speed series for one segment or region; `None` marks MISSING.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedSeries {
    pub id: usize,
    pub resolution: f64,
    pub start: f64,
    pub values: Vec<Option<f64>>,
}

impl SpeedSeries {
    pub fn missing_fraction(&self) -> f64 {
        if self.values.is_empty() {
            return 1.0;
        }
        self.values.iter().filter(|v| v.is_none()).count() as f64 / self.values.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TravelTimeStats {
    pub bin_width: f64,
    /// Vehicle counts per bin `[i * bin_width, (i + 1) * bin_width)`.
    pub histogram: Vec<usize>,
    pub count: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub p90: Option<f64>,
}

pub const TRAVEL_TIME_BIN: f64 = 30.0;

/// Origin-to-destination travel times of the vehicles that left the network.
pub fn travel_time_stats(session: &SessionTrajectories) -> TravelTimeStats {
    let mut times: Vec<f64> = session.vehicles.iter().filter_map(|v| v.arrive.map(|a| a - v.depart)).collect();
    times.sort_by(f64::total_cmp);
    let mut histogram = Vec::new();
    for &t in &times {
        let b = (t / TRAVEL_TIME_BIN).floor() as usize;
        if histogram.len() <= b {
            histogram.resize(b + 1, 0);
        }
        histogram[b] += 1;
    }
    let n = times.len();
    TravelTimeStats {
        bin_width: TRAVEL_TIME_BIN,
        histogram,
        count: n,
        mean: (n > 0).then(|| times.iter().sum::<f64>() / n as f64),
        median: percentile(&times, 0.5),
        p90: percentile(&times, 0.9),
    }
}

/// Linear-interpolation percentile of sorted data.
pub fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

pub fn write_splits_csv(path: &Path, splits: &[TrajectorySplit]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["vehicle_id", "segment_id", "t_s", "t_e", "x_s", "x_e"])?;
    for s in splits {
        w.write_record([
            s.vehicle.to_string(),
            s.segment.to_string(),
            s.t_s.to_string(),
            s.t_e.to_string(),
            s.x_s.to_string(),
            s.x_e.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per series: `id,resolution_s,t0,v0,v1,...`, MISSING as an empty field.
pub fn write_speed_series_csv(out: &mut impl Write, series: &[SpeedSeries]) -> Result<()> {
    for s in series {
        write!(out, "{},{},{}", s.id, s.resolution, s.start)?;
        for v in &s.values {
            match v {
                Some(v) => write!(out, ",{v}")?,
                None => write!(out, ",")?,
            }
        }
        writeln!(out)?;
    }
    Ok(())
}
