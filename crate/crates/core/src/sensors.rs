//! Which measurements exist: loop-detector placement, the drone relocation schedule, sensor
//! modes and multiplicative noise.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::edie::{BinnedSums, FlowSums, SpeedSeries};
use crate::error::{invalid, Result};
use crate::roadnet::GridMap;

/// Drones are relocated at this interval; label and loop-detector bins share it.
pub const SLOT_SECONDS: f64 = 180.0;
/// Candidate detector sites may have at most this fraction of MISSING intervals.
pub const MAX_INVALID_FRACTION: f64 = 0.1;

/// Regular per-entity series with NaN marking MISSING.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesMatrix {
    pub entities: usize,
    pub steps: usize,
    pub resolution: f64,
    pub values: Vec<f32>,
}

impl SeriesMatrix {
    pub fn missing(entities: usize, steps: usize, resolution: f64) -> Self {
        SeriesMatrix { entities, steps, resolution, values: vec![f32::NAN; entities * steps] }
    }

    pub fn from_sums(sums: &BinnedSums) -> Self {
        let mut m = SeriesMatrix::missing(sums.entities, sums.n_bins, sums.resolution);
        for e in 0..sums.entities {
            for b in 0..sums.n_bins {
                if let Some(v) = sums.speed(e, b) {
                    m.values[e * sums.n_bins + b] = v as f32;
                }
            }
        }
        m
    }

    pub fn from_series(series: &[SpeedSeries], steps: usize, resolution: f64) -> Self {
        let mut m = SeriesMatrix::missing(series.len(), steps, resolution);
        for (e, s) in series.iter().enumerate() {
            for (b, v) in s.values.iter().take(steps).enumerate() {
                if let Some(v) = v {
                    m.values[e * steps + b] = *v as f32;
                }
            }
        }
        m
    }

    pub fn get(&self, entity: usize, step: usize) -> Option<f64> {
        let v = self.values[entity * self.steps + step];
        (!v.is_nan()).then_some(v as f64)
    }

    pub fn row(&self, entity: usize) -> &[f32] {
        &self.values[entity * self.steps..(entity + 1) * self.steps]
    }

    pub fn missing_fraction(&self, entity: usize, steps: std::ops::Range<usize>) -> f64 {
        let n = steps.len().max(1) as f64;
        self.row(entity)[steps].iter().filter(|v| v.is_nan()).count() as f64 / n
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorMode {
    /// Every segment observed by both modalities, no noise.
    Full,
    /// Partial coverage and noisy inputs and training labels.
    Pn,
    /// As `Pn`, without drone input; training labels have coverage of the probe proxy and
    /// doubled noise.
    PnLdMinus,
}

impl fmt::Display for SensorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SensorMode::Full => "full",
            SensorMode::Pn => "pn",
            SensorMode::PnLdMinus => "pn_ld_minus",
        })
    }
}

impl FromStr for SensorMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(SensorMode::Full),
            "pn" => Ok(SensorMode::Pn),
            "pn_ld_minus" | "pn-ld-minus" | "ld-" => Ok(SensorMode::PnLdMinus),
            other => Err(invalid(format!("unknown sensor mode {other:?}"))),
        }
    }
}

/// Standard deviations of the multiplicative noise factors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma_ld: f64,
    pub sigma_drone: f64,
    pub sigma_label: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma_ld: f64, sigma_drone: f64, sigma_label: f64, seed: u64) -> Result<Self> {
        for s in [sigma_ld, sigma_drone, sigma_label] {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(invalid(format!("noise sigma must be finite and non-negative, got {s}")));
            }
        }
        Ok(NoiseSpec { sigma_ld, sigma_drone, sigma_label, seed })
    }

    pub fn none(seed: u64) -> Self {
        NoiseSpec { sigma_ld: 0.0, sigma_drone: 0.0, sigma_label: 0.0, seed }
    }
}

/// Loop-detector sites, shared by every session.
///
/// Candidates are segments whose series has at most [`MAX_INVALID_FRACTION`] MISSING values;
/// `max(1, round(coverage * segments))` of them are drawn without replacement.
pub fn place_loop_detectors(series: &[SpeedSeries], coverage: f64, seed: u64) -> Result<Vec<usize>> {
    check_coverage(coverage)?;
    let pool: Vec<usize> = series
        .iter()
        .filter(|s| s.missing_fraction() <= MAX_INVALID_FRACTION)
        .map(|s| s.id)
        .collect();
    let wanted = sensor_count(coverage, series.len());
    if pool.len() < wanted {
        warn!("only {} valid detector sites for {wanted} detectors; using all of them", pool.len());
        return Ok(pool);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = sample(&mut rng, pool.len(), wanted).into_iter().map(|i| pool[i]).collect();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Occupied cell indices for each slot, drawn independently per slot.
pub fn drone_schedule(grid: &GridMap, coverage: f64, n_slots: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    check_coverage(coverage)?;
    let cells = grid.cells.len();
    let n = sensor_count(coverage, cells);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_slots)
        .map(|_| {
            let mut s = sample(&mut rng, cells, n).into_vec();
            s.sort_unstable();
            s
        })
        .collect())
}

fn check_coverage(coverage: f64) -> Result<()> {
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(invalid(format!("coverage must be in (0, 1], got {coverage}")));
    }
    Ok(())
}

/// `round(coverage * total)`, but at least one sensor when anything can be observed.
pub fn sensor_count(coverage: f64, total: usize) -> usize {
    ((coverage * total as f64).round() as usize).clamp(total.min(1), total)
}

/// Sensor placement for one session.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorLayout {
    pub ld_segments: Vec<usize>,
    pub drone_slots: Vec<Vec<usize>>,
    pub coverage: f64,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct LayoutJson {
    ld_segments: Vec<usize>,
    drones: BTreeMap<String, Vec<usize>>,
    coverage: f64,
    seeds: BTreeMap<String, u64>,
}

impl SensorLayout {
    pub fn new(ld_segments: Vec<usize>, grid: &GridMap, coverage: f64, n_slots: usize, seed: u64) -> Result<Self> {
        let drone_slots = drone_schedule(grid, coverage, n_slots, seed)?;
        Ok(SensorLayout { ld_segments, drone_slots, coverage, seed })
    }

    /// Every segment and every cell observed in every slot.
    pub fn complete(n_segments: usize, grid: &GridMap, n_slots: usize) -> Self {
        SensorLayout {
            ld_segments: (0..n_segments).collect(),
            drone_slots: vec![(0..grid.cells.len()).collect(); n_slots],
            coverage: 1.0,
            seed: 0,
        }
    }

    /// Per-segment drone visibility for one slot.
    pub fn drone_observed(&self, grid: &GridMap, slot: usize) -> Vec<bool> {
        let mut occupied = vec![false; grid.cells.len()];
        if let Some(cells) = self.drone_slots.get(slot) {
            for &c in cells {
                occupied[c] = true;
            }
        }
        grid.assignment.iter().map(|&c| occupied[c]).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let j = LayoutJson {
            ld_segments: self.ld_segments.clone(),
            drones: self
                .drone_slots
                .iter()
                .enumerate()
                .map(|(i, c)| (format!("{}", (i as f64 * SLOT_SECONDS) as u64), c.clone()))
                .collect(),
            coverage: self.coverage,
            seeds: BTreeMap::from([("drone".to_string(), self.seed)]),
        };
        Ok(serde_json::to_string_pretty(&j)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let j: LayoutJson = serde_json::from_str(text)?;
        let mut slots: Vec<(u64, Vec<usize>)> = j
            .drones
            .into_iter()
            .map(|(k, v)| k.parse::<u64>().map(|k| (k, v)).map_err(|e| crate::Error::Format(e.to_string())))
            .collect::<Result<_>>()?;
        slots.sort_by_key(|s| s.0);
        Ok(SensorLayout {
            ld_segments: j.ld_segments,
            drone_slots: slots.into_iter().map(|s| s.1).collect(),
            coverage: j.coverage,
            seed: j.seeds.get("drone").copied().unwrap_or(0),
        })
    }
}

fn noise_factor(rng: &mut ChaCha8Rng, normal: Option<&Normal<f64>>) -> f64 {
    normal.map_or(1.0, |n| 1.0 + n.sample(rng))
}

fn normal(sigma: f64) -> Option<Normal<f64>> {
    (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("sigma validated"))
}

/// `v -> max(0, v (1 + e))` with `e ~ N(0, sigma^2)` for present values.
pub fn apply_multiplicative_noise(series: &SpeedSeries, sigma: f64, rng: &mut ChaCha8Rng) -> Result<SpeedSeries> {
    if !(sigma >= 0.0) {
        return Err(invalid(format!("noise sigma must be non-negative, got {sigma}")));
    }
    let dist = normal(sigma);
    let mut out = series.clone();
    for v in out.values.iter_mut().flatten() {
        *v = (*v * noise_factor(rng, dist.as_ref())).max(0.0);
    }
    Ok(out)
}

fn noise_matrix(m: &mut SeriesMatrix, sigma: f64, rng: &mut ChaCha8Rng) {
    let Some(dist) = normal(sigma) else { return };
    for v in m.values.iter_mut().filter(|v| !v.is_nan()) {
        *v = ((*v as f64) * (1.0 + dist.sample(rng))).max(0.0) as f32;
    }
}

/// Ground-truth speeds of one session, before any sensor model.
#[derive(Clone, Debug)]
pub struct SessionSpeeds {
    /// Segment speeds at the drone resolution.
    pub drone: SeriesMatrix,
    /// Point speeds at the detector sites, per slot.
    pub ld: SeriesMatrix,
    /// Per-segment distance/time sums per slot (label source).
    pub seg: BinnedSums,
}

/// What a model sees for one session, plus the labels it is trained and judged on.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedSession {
    pub drone: SeriesMatrix,
    pub ld: SeriesMatrix,
    pub train_seg: SeriesMatrix,
    pub train_reg: SeriesMatrix,
    pub eval_seg: SeriesMatrix,
    pub eval_reg: SeriesMatrix,
}

fn pooled_speeds(seg: &BinnedSums, regions: &[Vec<usize>], observed: impl Fn(usize, usize) -> bool) -> SeriesMatrix {
    let mut m = SeriesMatrix::missing(regions.len(), seg.n_bins, seg.resolution);
    for (r, members) in regions.iter().enumerate() {
        for b in 0..seg.n_bins {
            let mut sums = FlowSums::default();
            for &s in members.iter().filter(|&&s| observed(s, b)) {
                sums.add(seg.get(s, b));
            }
            if let Some(v) = sums.speed() {
                m.values[r * seg.n_bins + b] = v as f32;
            }
        }
    }
    m
}

/// Applies coverage and noise for `mode`. Evaluation labels never depend on the mode.
///
/// Label and detector bins must be [`SLOT_SECONDS`] wide so that slot `b` of the drone schedule
/// governs label bin `b`. Randomness comes from `noise.seed` on stream `session`.
pub fn observe_session(
    speeds: &SessionSpeeds,
    layout: &SensorLayout,
    grid: &GridMap,
    regions: &[Vec<usize>],
    mode: SensorMode,
    noise: &NoiseSpec,
    session: u64,
) -> Result<ObservedSession> {
    let n = speeds.seg.entities;
    if grid.assignment.len() != n || speeds.drone.entities != n || speeds.ld.entities != n {
        return Err(invalid("sensor grid and speed series disagree on the segment count"));
    }
    if (speeds.seg.resolution - SLOT_SECONDS).abs() > 1e-9 || (speeds.ld.resolution - SLOT_SECONDS).abs() > 1e-9 {
        return Err(invalid("label and detector series must use the drone slot resolution"));
    }
    let eval_seg = SeriesMatrix::from_sums(&speeds.seg);
    let eval_reg = SeriesMatrix::from_sums(&speeds.seg.pooled(regions));
    if mode == SensorMode::Full {
        return Ok(ObservedSession {
            drone: speeds.drone.clone(),
            ld: speeds.ld.clone(),
            train_seg: eval_seg.clone(),
            train_reg: eval_reg.clone(),
            eval_seg,
            eval_reg,
        });
    }

    let n_slots = speeds.seg.n_bins;
    let visible: Vec<Vec<bool>> = (0..n_slots).map(|s| layout.drone_observed(grid, s)).collect();
    let mut has_ld = vec![false; n];
    for &s in &layout.ld_segments {
        has_ld[s] = true;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    rng.set_stream(session);

    let mut drone = SeriesMatrix::missing(n, speeds.drone.steps, speeds.drone.resolution);
    if mode == SensorMode::Pn {
        let per_slot = SLOT_SECONDS / speeds.drone.resolution;
        for s in 0..n {
            for b in 0..speeds.drone.steps {
                let slot = (b as f64 / per_slot).floor() as usize;
                if visible.get(slot).is_some_and(|v| v[s]) {
                    drone.values[s * drone.steps + b] = speeds.drone.values[s * drone.steps + b];
                }
            }
        }
        noise_matrix(&mut drone, noise.sigma_drone, &mut rng);
    }

    let mut ld = SeriesMatrix::missing(n, speeds.ld.steps, speeds.ld.resolution);
    for &s in &layout.ld_segments {
        let span = s * ld.steps..(s + 1) * ld.steps;
        ld.values[span.clone()].copy_from_slice(&speeds.ld.values[span]);
    }
    noise_matrix(&mut ld, noise.sigma_ld, &mut rng);

    let observed = |s: usize, b: usize| has_ld[s] || visible.get(b).is_some_and(|v| v[s]);
    let mut train_seg = eval_seg.clone();
    for s in 0..n {
        for b in 0..n_slots {
            if !observed(s, b) {
                train_seg.values[s * n_slots + b] = f32::NAN;
            }
        }
    }
    noise_matrix(&mut train_seg, noise.sigma_label, &mut rng);
    let mut train_reg = pooled_speeds(&speeds.seg, regions, observed);
    noise_matrix(&mut train_reg, noise.sigma_label, &mut rng);

    Ok(ObservedSession { drone, ld, train_seg, train_reg, eval_seg, eval_reg })
}

/// Observed fraction of segments per slot, for coverage diagnostics.
pub fn drone_segment_coverage(layout: &SensorLayout, grid: &GridMap) -> Vec<f64> {
    let n = grid.assignment.len().max(1) as f64;
    (0..layout.drone_slots.len())
        .map(|s| layout.drone_observed(grid, s).iter().filter(|&&v| v).count() as f64 / n)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edie::TrajectorySplit;

    fn series(id: usize, values: Vec<Option<f64>>) -> SpeedSeries {
        SpeedSeries { id, resolution: SLOT_SECONDS, start: 0.0, values }
    }

    fn line_grid(cells_of: Vec<usize>, n_cells: usize) -> GridMap {
        GridMap {
            cell_size: 220.0,
            cells: (0..n_cells as i64).map(|c| (c, 0)).collect(),
            assignment: cells_of,
        }
    }

    fn split(segment: usize, t_s: f64, t_e: f64, x_s: f64, x_e: f64) -> TrajectorySplit {
        TrajectorySplit { vehicle: 0, segment, t_s, t_e, x_s, x_e }
    }

    /// 4 segments in 2 cells and 2 regions, 2 slots.
    fn toy_speeds() -> SessionSpeeds {
        let mut seg = BinnedSums::new(4, SLOT_SECONDS, 2);
        let moves = [(0, 10.0), (1, 6.0), (2, 3.0), (3, 12.0)];
        for (s, v) in moves {
            seg.add(s, &split(s, 0.0, 10.0, 0.0, v * 10.0));
            seg.add(s, &split(s, 200.0, 210.0, 0.0, v * 10.0));
        }
        let mut drone = SeriesMatrix::missing(4, 72, 5.0);
        for (i, v) in drone.values.iter_mut().enumerate() {
            *v = 5.0 + (i % 7) as f32;
        }
        let mut ld = SeriesMatrix::missing(4, 2, SLOT_SECONDS);
        ld.values = vec![8.0, 9.0, 7.0, 6.0, 11.0, 10.0, 4.0, 5.0];
        SessionSpeeds { drone, ld, seg }
    }

    #[test]
    fn full_coverage_selects_everything() {
        let s: Vec<_> = (0..5).map(|i| series(i, vec![Some(1.0); 10])).collect();
        assert_eq!(place_loop_detectors(&s, 1.0, 3).unwrap(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn ten_percent_of_1570() {
        let s: Vec<_> = (0..1570).map(|i| series(i, vec![Some(1.0); 4])).collect();
        let chosen = place_loop_detectors(&s, 0.1, 3).unwrap();
        assert_eq!(chosen.len(), 157);
        assert_eq!(chosen, place_loop_detectors(&s, 0.1, 3).unwrap());
        assert_ne!(chosen, place_loop_detectors(&s, 0.1, 4).unwrap());
    }

    #[test]
    fn invalid_sites_are_never_chosen() {
        let mut s: Vec<_> = (0..20).map(|i| series(i, vec![Some(1.0); 10])).collect();
        s[7].values = [None, Some(1.0)].repeat(5);
        for seed in 0..50 {
            assert!(!place_loop_detectors(&s, 0.5, seed).unwrap().contains(&7));
        }
    }

    #[test]
    fn small_pool_takes_what_exists() {
        let s: Vec<_> = (0..4).map(|i| series(i, if i == 0 { vec![Some(2.0)] } else { vec![None] })).collect();
        assert_eq!(place_loop_detectors(&s, 1.0, 0).unwrap(), vec![0]);
    }

    #[test]
    fn coverage_out_of_range() {
        let grid = line_grid(vec![0], 1);
        assert!(drone_schedule(&grid, 0.0, 3, 0).is_err());
        assert!(drone_schedule(&grid, 1.5, 3, 0).is_err());
    }

    #[test]
    fn full_drone_coverage() {
        let grid = line_grid(vec![0, 1, 2], 3);
        for slot in drone_schedule(&grid, 1.0, 5, 1).unwrap() {
            assert_eq!(slot, vec![0, 1, 2]);
        }
    }

    #[test]
    fn drone_count_and_relocation() {
        let grid = line_grid((0..212).collect(), 212);
        let slots = drone_schedule(&grid, 0.1, 10, 9).unwrap();
        for s in &slots {
            assert_eq!(s.len(), 21);
            let mut d = s.clone();
            d.dedup();
            assert_eq!(d.len(), 21);
        }
        assert_ne!(slots[0], slots[1]);
    }

    #[test]
    fn sensor_count_floor() {
        assert_eq!(sensor_count(0.01, 48), 1);
        assert_eq!(sensor_count(0.1, 212), 21);
        assert_eq!(sensor_count(0.5, 0), 0);
    }

    #[test]
    fn noise_degenerate_cases() {
        let s = series(0, vec![Some(3.0), None, Some(0.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(apply_multiplicative_noise(&s, 0.0, &mut rng).unwrap(), s);
        let noisy = apply_multiplicative_noise(&s, 0.5, &mut rng).unwrap();
        assert_eq!(noisy.values[1], None);
        assert_eq!(noisy.values[2], Some(0.0));
        assert_ne!(noisy.values[0], Some(3.0));
        assert!(apply_multiplicative_noise(&s, -0.1, &mut rng).is_err());
    }

    #[test]
    fn noise_clamps_at_zero() {
        let s = series(0, vec![Some(1.0); 2000]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let noisy = apply_multiplicative_noise(&s, 2.0, &mut rng).unwrap();
        assert!(noisy.values.iter().flatten().all(|v| *v >= 0.0));
        assert!(noisy.values.iter().flatten().any(|v| *v == 0.0));
    }

    #[test]
    fn full_mode_is_identity() {
        let speeds = toy_speeds();
        let grid = line_grid(vec![0, 0, 1, 1], 2);
        let regions = vec![vec![0, 2], vec![1, 3]];
        let layout = SensorLayout::new(vec![1], &grid, 0.5, 2, 0).unwrap();
        let obs = observe_session(&speeds, &layout, &grid, &regions, SensorMode::Full, &NoiseSpec::none(0), 0).unwrap();
        assert_eq!(obs.drone, speeds.drone);
        assert_eq!(obs.ld, speeds.ld);
        assert_eq!(obs.train_seg, obs.eval_seg);
        assert_eq!(obs.eval_seg.get(2, 1), Some(3.0));
        // Region 0 pools 100 m + 30 m over 20 s.
        assert!((obs.eval_reg.get(0, 0).unwrap() - 6.5).abs() < 1e-6);
    }

    #[test]
    fn pn_masks_unobserved_segments() {
        let speeds = toy_speeds();
        let grid = line_grid(vec![0, 0, 1, 1], 2);
        let regions = vec![vec![0, 2], vec![1, 3]];
        let layout = SensorLayout {
            ld_segments: vec![3],
            drone_slots: vec![vec![0], vec![1]],
            coverage: 0.5,
            seed: 0,
        };
        let obs = observe_session(&speeds, &layout, &grid, &regions, SensorMode::Pn, &NoiseSpec::none(1), 0).unwrap();
        // Slot 0 (drone steps 0..36): cell 0 holds segments 0 and 1.
        assert!(obs.drone.get(0, 0).is_some() && obs.drone.get(1, 35).is_some());
        assert!(obs.drone.get(2, 0).is_none() && obs.drone.get(0, 36).is_none());
        assert!(obs.drone.get(2, 36).is_some());
        assert_eq!(obs.ld.get(3, 0), Some(4.0));
        assert!(obs.ld.get(0, 0).is_none());
        // Segment 2 is seen only in slot 1; segment 3 always (detector).
        assert!(obs.train_seg.get(2, 0).is_none());
        assert_eq!(obs.train_seg.get(2, 1), Some(3.0));
        assert_eq!(obs.train_seg.get(3, 0), Some(12.0));
        // Region 0 in slot 0 sees only segment 0: the pooled label is that segment's speed.
        assert_eq!(obs.train_reg.get(0, 0), Some(10.0));
        assert_eq!(obs.train_reg.get(0, 0), obs.eval_seg.get(0, 0));
    }

    #[test]
    fn eval_labels_do_not_depend_on_mode() {
        let speeds = toy_speeds();
        let grid = line_grid(vec![0, 0, 1, 1], 2);
        let regions = vec![vec![0, 2], vec![1, 3]];
        let layout = SensorLayout::new(vec![1], &grid, 0.5, 2, 7).unwrap();
        let noise = NoiseSpec::new(0.05, 0.15, 0.3, 11).unwrap();
        let runs: Vec<_> = [SensorMode::Full, SensorMode::Pn, SensorMode::PnLdMinus]
            .into_iter()
            .map(|m| observe_session(&speeds, &layout, &grid, &regions, m, &noise, 3).unwrap())
            .collect();
        for r in &runs[1..] {
            assert_eq!(r.eval_seg.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                runs[0].eval_seg.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            assert_eq!(r.eval_reg.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                runs[0].eval_reg.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
        assert!(runs[2].drone.values.iter().all(|v| v.is_nan()));
    }

    #[test]
    fn observation_is_reproducible() {
        let speeds = toy_speeds();
        let grid = line_grid(vec![0, 0, 1, 1], 2);
        let regions = vec![vec![0, 1, 2, 3]];
        let layout = SensorLayout::new(vec![0, 2], &grid, 0.5, 2, 5).unwrap();
        let noise = NoiseSpec::new(0.05, 0.15, 0.15, 2).unwrap();
        let a = observe_session(&speeds, &layout, &grid, &regions, SensorMode::Pn, &noise, 1).unwrap();
        let b = observe_session(&speeds, &layout, &grid, &regions, SensorMode::Pn, &noise, 1).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        let c = observe_session(&speeds, &layout, &grid, &regions, SensorMode::Pn, &noise, 2).unwrap();
        assert_ne!(format!("{a:?}"), format!("{c:?}"));
    }

    #[test]
    fn layout_json_round_trip() {
        let grid = line_grid(vec![0, 1, 1, 2], 3);
        let layout = SensorLayout::new(vec![1, 3], &grid, 0.34, 4, 8).unwrap();
        let text = layout.to_json().unwrap();
        assert!(text.contains("\"540\""));
        assert_eq!(SensorLayout::from_json(&text).unwrap(), layout);
    }

    #[test]
    fn mode_names() {
        for m in [SensorMode::Full, SensorMode::Pn, SensorMode::PnLdMinus] {
            assert_eq!(m.to_string().parse::<SensorMode>().unwrap(), m);
        }
        assert!("partial".parse::<SensorMode>().is_err());
    }

    mod props {
        use proptest::prelude::*;

        use super::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn drone_segment_fraction_tracks_coverage(seed in 0u64..500, sizes in proptest::collection::vec(1usize..5, 20)) {
                // 20 cells of uneven size at 10% coverage: two cells per slot.
                let assignment: Vec<usize> = sizes.iter().enumerate().flat_map(|(c, &k)| std::iter::repeat_n(c, k)).collect();
                let grid = line_grid(assignment, 20);
                let layout = SensorLayout::new(vec![], &grid, 0.1, 400, seed).unwrap();
                let cov = drone_segment_coverage(&layout, &grid);
                let mean = cov.iter().sum::<f64>() / cov.len() as f64;
                prop_assert!((mean - 0.1).abs() < 0.005, "mean {}", mean);
            }

            #[test]
            fn noise_preserves_missing_and_sign(vals in proptest::collection::vec(proptest::option::of(0.0f64..20.0), 1..60), sigma in 0.0f64..1.0, seed in 0u64..100) {
                let s = SpeedSeries { id: 0, resolution: 5.0, start: 0.0, values: vals };
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let n = apply_multiplicative_noise(&s, sigma, &mut rng).unwrap();
                for (a, b) in s.values.iter().zip(&n.values) {
                    prop_assert_eq!(a.is_none(), b.is_none());
                    if let Some(b) = b { prop_assert!(*b >= 0.0); }
                }
            }
        }
    }
}
