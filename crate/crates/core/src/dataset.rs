//! Sliding-window samples, normalization, the train/test split and the on-disk dataset format.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::sensors::{ObservedSession, SLOT_SECONDS};

pub const DRONE_RESOLUTION: f64 = 5.0;
/// 30 minutes at the drone resolution.
pub const DRONE_STEPS: usize = 360;
/// 30 minutes of 3-minute steps, for detector inputs and both label sequences.
pub const COARSE_STEPS: usize = 10;
pub const WINDOWS_PER_SESSION: usize = 20;
pub const FIRST_WINDOW_START: f64 = 900.0;
pub const WINDOW_STRIDE: f64 = 180.0;
/// End of the last label window.
pub const SESSION_HORIZON: f64 =
    FIRST_WINDOW_START + (WINDOWS_PER_SESSION - 1) as f64 * WINDOW_STRIDE + 2.0 * COARSE_STEPS as f64 * SLOT_SECONDS;

pub const FORMAT_NAME: &str = "trafficlab-dataset";
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One input/target pair; NaN marks MISSING everywhere.
#[derive(Clone, Debug)]
pub struct MSTSSample {
    pub session: usize,
    /// Window index within the session.
    pub window: usize,
    /// Start of the input half, seconds from session start.
    pub window_start: f64,
    pub demand_scale: f64,
    pub split: Split,
    pub n_segments: usize,
    pub n_regions: usize,
    /// `[segments x 360]` segment speeds at 5 s.
    pub drone: Vec<f32>,
    /// `[segments x 10]` point speeds at 3 min.
    pub ld: Vec<f32>,
    /// `[segments x 10]` segment-speed targets.
    pub seg: Vec<f32>,
    /// `[regions x 10]` regional-speed targets.
    pub reg: Vec<f32>,
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

impl MSTSSample {
    pub fn id(&self) -> String {
        format!("s{:03}_w{:02}", self.session, self.window)
    }

    /// Equality including MISSING markers.
    pub fn bit_eq(&self, other: &MSTSSample) -> bool {
        self.session == other.session
            && self.window == other.window
            && self.window_start.to_bits() == other.window_start.to_bits()
            && self.demand_scale.to_bits() == other.demand_scale.to_bits()
            && self.split == other.split
            && self.n_segments == other.n_segments
            && self.n_regions == other.n_regions
            && bits(&self.drone) == bits(&other.drone)
            && bits(&self.ld) == bits(&other.ld)
            && bits(&self.seg) == bits(&other.seg)
            && bits(&self.reg) == bits(&other.reg)
    }

    /// Label window end in seconds.
    pub fn label_end(&self) -> f64 {
        self.window_start + 2.0 * COARSE_STEPS as f64 * SLOT_SECONDS
    }
}

fn window_rows(values: &[f32], steps: usize, entities: usize, start: usize, len: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(entities * len);
    for e in 0..entities {
        out.extend_from_slice(&values[e * steps + start..e * steps + start + len]);
    }
    out
}

/// Cuts the 20 one-hour windows of a session: starts at 15 min + 3k min, each split 30/30.
///
/// Train-split samples carry the training labels; test-split samples the evaluation labels.
pub fn extract_samples(obs: &ObservedSession, session: usize, demand_scale: f64, split: Split) -> Result<Vec<MSTSSample>> {
    if (obs.drone.resolution - DRONE_RESOLUTION).abs() > 1e-9
        || (obs.ld.resolution - SLOT_SECONDS).abs() > 1e-9
        || (obs.eval_seg.resolution - SLOT_SECONDS).abs() > 1e-9
    {
        return Err(invalid("series resolutions must be 5 s (drone) and 3 min (detector, labels)"));
    }
    let (seg, reg) = match split {
        Split::Train => (&obs.train_seg, &obs.train_reg),
        Split::Test => (&obs.eval_seg, &obs.eval_reg),
    };
    let need_fine = ((SESSION_HORIZON - COARSE_STEPS as f64 * SLOT_SECONDS) / DRONE_RESOLUTION).round() as usize;
    let need_coarse = (SESSION_HORIZON / SLOT_SECONDS).round() as usize;
    if obs.drone.steps < need_fine || obs.ld.steps < need_coarse || seg.steps < need_coarse || reg.steps < need_coarse {
        return Err(invalid(format!(
            "session series end before {:.0} min; windows need {need_fine} drone and {need_coarse} coarse steps",
            SESSION_HORIZON / 60.0
        )));
    }
    let n = obs.drone.entities;
    let k = reg.entities;
    Ok((0..WINDOWS_PER_SESSION)
        .map(|w| {
            let start = FIRST_WINDOW_START + w as f64 * WINDOW_STRIDE;
            let fine = (start / DRONE_RESOLUTION).round() as usize;
            let coarse = (start / SLOT_SECONDS).round() as usize;
            MSTSSample {
                session,
                window: w,
                window_start: start,
                demand_scale,
                split,
                n_segments: n,
                n_regions: k,
                drone: window_rows(&obs.drone.values, obs.drone.steps, n, fine, DRONE_STEPS),
                ld: window_rows(&obs.ld.values, obs.ld.steps, n, coarse, COARSE_STEPS),
                seg: window_rows(&seg.values, seg.steps, n, coarse + COARSE_STEPS, COARSE_STEPS),
                reg: window_rows(&reg.values, reg.steps, k, coarse + COARSE_STEPS, COARSE_STEPS),
            }
        })
        .collect())
}

/// Floor on the standard deviation, so constant data normalizes to zeros.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and population standard deviation of the present values.
    pub fn fit<'a>(values: impl IntoIterator<Item = &'a f32>) -> Result<Stat> {
        let (mut n, mut sum, mut sq) = (0usize, 0.0f64, 0.0f64);
        for &v in values {
            if !v.is_nan() {
                n += 1;
                sum += v as f64;
                sq += (v as f64) * (v as f64);
            }
        }
        if n == 0 {
            return Err(invalid("no present values to fit normalization statistics"));
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        Ok(Stat { mean, std: var.sqrt().max(STD_FLOOR) })
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Per-modality statistics; labels share the drone (segment-speed) statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub drone: Stat,
    pub ld: Stat,
    pub label: Stat,
}

impl Normalizer {
    /// Fits on training-split samples only; test samples in `samples` are ignored.
    ///
    /// When no drone input exists at all (drone-free sensor modes), the drone and label
    /// statistics come from the training segment labels instead.
    pub fn fit(samples: &[MSTSSample]) -> Result<Normalizer> {
        let train: Vec<&MSTSSample> = samples.iter().filter(|s| s.split == Split::Train).collect();
        if train.is_empty() {
            return Err(invalid("normalizer needs at least one training sample"));
        }
        let ld = Stat::fit(train.iter().flat_map(|s| s.ld.iter()))
            .map_err(|_| invalid("loop-detector modality has no present training values"))?;
        let drone = match Stat::fit(train.iter().flat_map(|s| s.drone.iter())) {
            Ok(s) => s,
            Err(_) => Stat::fit(train.iter().flat_map(|s| s.seg.iter()))
                .map_err(|_| invalid("neither drone inputs nor segment labels have present training values"))?,
        };
        Ok(Normalizer { drone, ld, label: drone })
    }

    /// Normalized copy of a sample; MISSING stays NaN.
    pub fn apply(&self, s: &MSTSSample) -> MSTSSample {
        let map = |v: &[f32], st: &Stat| v.iter().map(|&x| st.apply(x as f64) as f32).collect();
        MSTSSample {
            drone: map(&s.drone, &self.drone),
            ld: map(&s.ld, &self.ld),
            seg: map(&s.seg, &self.label),
            reg: map(&s.reg, &self.label),
            ..s.clone()
        }
    }

    pub fn invert_label(&self, z: f64) -> f64 {
        self.label.invert(z)
    }
}

/// Seeded random split of session ids into sorted, disjoint train and test sets.
pub fn split_dataset(sessions: usize, n_train: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_train >= sessions {
        return Err(invalid(format!("{n_train} training sessions leave none of {sessions} for testing")));
    }
    let mut ids: Vec<usize> = (0..sessions).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = ids[..n_train].to_vec();
    let mut test = ids[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Samples plus what is needed to reproduce and interpret them.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub seed: u64,
    pub n_segments: usize,
    pub n_regions: usize,
    /// Free-form provenance: sensor layout, noise spec, config hash.
    pub metadata: serde_json::Value,
    pub normalizer: Option<Normalizer>,
    pub samples: Vec<MSTSSample>,
}

impl Dataset {
    pub fn new(seed: u64, n_segments: usize, n_regions: usize) -> Self {
        Dataset { seed, n_segments, n_regions, metadata: serde_json::Value::Null, normalizer: None, samples: Vec::new() }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &MSTSSample> {
        self.samples.iter().filter(move |s| s.split == split)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Entry {
    id: String,
    session: usize,
    window: usize,
    window_start: f64,
    demand_scale: f64,
    split: Split,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    seed: u64,
    n_segments: usize,
    n_regions: usize,
    metadata: serde_json::Value,
    normalizer: Option<Normalizer>,
    samples: Vec<Entry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: [usize; 2],
    /// Byte offset of the values; the presence mask (one byte per value) follows all values.
    offset: usize,
    mask_offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Sidecar {
    id: String,
    dtype: String,
    tensors: Vec<TensorInfo>,
}

fn sample_shapes(n: usize, k: usize) -> [(&'static str, [usize; 2]); 4] {
    [("drone", [n, DRONE_STEPS]), ("ld", [n, COARSE_STEPS]), ("seg", [n, COARSE_STEPS]), ("reg", [k, COARSE_STEPS])]
}

fn layout(n: usize, k: usize) -> (Vec<TensorInfo>, usize) {
    let shapes = sample_shapes(n, k);
    let values: usize = shapes.iter().map(|(_, s)| s[0] * s[1]).sum();
    let mut off = 0;
    let mut mask_off = 4 * values;
    let infos = shapes
        .iter()
        .map(|(name, s)| {
            let info = TensorInfo { name: name.to_string(), shape: *s, offset: off, mask_offset: mask_off };
            off += 4 * s[0] * s[1];
            mask_off += s[0] * s[1];
            info
        })
        .collect();
    (infos, 5 * values)
}

fn sample_dir(dir: &Path) -> std::path::PathBuf {
    dir.join("samples")
}

fn write_sample(dir: &Path, s: &MSTSSample) -> Result<()> {
    let (tensors, size) = layout(s.n_segments, s.n_regions);
    let mut buf = Vec::with_capacity(size);
    let parts = [&s.drone, &s.ld, &s.seg, &s.reg];
    for (p, t) in parts.iter().zip(&tensors) {
        if p.len() != t.shape[0] * t.shape[1] {
            return Err(Error::Shape(format!("sample {} tensor {} has {} values", s.id(), t.name, p.len())));
        }
        for v in p.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    for p in parts {
        buf.extend(p.iter().map(|v| u8::from(!v.is_nan())));
    }
    let id = s.id();
    fs::write(sample_dir(dir).join(format!("{id}.bin")), &buf)?;
    let sidecar = Sidecar { id: id.clone(), dtype: "f32le".into(), tensors };
    fs::write(sample_dir(dir).join(format!("{id}.json")), serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(())
}

fn read_sample(dir: &Path, m: &Manifest, e: &Entry) -> Result<MSTSSample> {
    let bin = sample_dir(dir).join(format!("{}.bin", e.id));
    let side = sample_dir(dir).join(format!("{}.json", e.id));
    if !bin.exists() {
        return Err(Error::MissingArtifact(bin));
    }
    let sidecar: Sidecar = serde_json::from_slice(&fs::read(&side).map_err(|_| Error::MissingArtifact(side.clone()))?)?;
    let (expected, size) = layout(m.n_segments, m.n_regions);
    if sidecar.tensors != expected || sidecar.dtype != "f32le" {
        return Err(Error::Format(format!("sample {} does not match the manifest shapes", e.id)));
    }
    let data = fs::read(&bin)?;
    if data.len() != size {
        return Err(Error::Format(format!("sample {} has {} bytes, expected {size}", e.id, data.len())));
    }
    let mut parts = Vec::with_capacity(4);
    for t in &expected {
        let n = t.shape[0] * t.shape[1];
        let vals: Vec<f32> = data[t.offset..t.offset + 4 * n]
            .chunks_exact(4)
            .zip(&data[t.mask_offset..t.mask_offset + n])
            .map(|(b, &present)| {
                let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
                if present == 0 { f32::NAN } else { v }
            })
            .collect();
        parts.push(vals);
    }
    let reg = parts.pop().unwrap();
    let seg = parts.pop().unwrap();
    let ld = parts.pop().unwrap();
    let drone = parts.pop().unwrap();
    Ok(MSTSSample {
        session: e.session,
        window: e.window,
        window_start: e.window_start,
        demand_scale: e.demand_scale,
        split: e.split,
        n_segments: m.n_segments,
        n_regions: m.n_regions,
        drone,
        ld,
        seg,
        reg,
    })
}

fn entry(s: &MSTSSample) -> Entry {
    Entry {
        id: s.id(),
        session: s.session,
        window: s.window,
        window_start: s.window_start,
        demand_scale: s.demand_scale,
        split: s.split,
    }
}

fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    let m: Manifest = serde_json::from_slice(&fs::read(&path)?)?;
    if m.format != FORMAT_NAME || m.version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported dataset format {} v{}", m.format, m.version)));
    }
    Ok(m)
}

fn write_manifest(dir: &Path, m: &Manifest) -> Result<()> {
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(m)?)?;
    Ok(())
}

fn check_sample(ds_n: usize, ds_k: usize, s: &MSTSSample) -> Result<()> {
    if s.n_segments != ds_n || s.n_regions != ds_k {
        return Err(Error::Shape(format!(
            "sample {} has {} segments and {} regions, dataset has {ds_n} and {ds_k}",
            s.id(),
            s.n_segments,
            s.n_regions
        )));
    }
    Ok(())
}

/// Writes a fresh dataset directory (an existing manifest is replaced).
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(sample_dir(dir))?;
    for s in &ds.samples {
        check_sample(ds.n_segments, ds.n_regions, s)?;
        write_sample(dir, s)?;
    }
    let m = Manifest {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        seed: ds.seed,
        n_segments: ds.n_segments,
        n_regions: ds.n_regions,
        metadata: ds.metadata.clone(),
        normalizer: ds.normalizer,
        samples: ds.samples.iter().map(entry).collect(),
    };
    write_manifest(dir, &m)
}

/// Adds samples to an existing dataset written with the same seed.
pub fn append_samples(dir: &Path, seed: u64, samples: &[MSTSSample]) -> Result<()> {
    let mut m = read_manifest(dir)?;
    if m.seed != seed {
        return Err(invalid(format!("dataset was built with seed {}, refusing to append seed {seed}", m.seed)));
    }
    for s in samples {
        check_sample(m.n_segments, m.n_regions, s)?;
        if m.samples.iter().any(|e| e.id == s.id()) {
            return Err(invalid(format!("sample {} already exists", s.id())));
        }
    }
    for s in samples {
        write_sample(dir, s)?;
        m.samples.push(entry(s));
    }
    write_manifest(dir, &m)
}

/// Sets the normalizer and metadata of an existing dataset.
pub fn update_dataset_header(dir: &Path, normalizer: Option<Normalizer>, metadata: serde_json::Value) -> Result<()> {
    let mut m = read_manifest(dir)?;
    m.normalizer = normalizer;
    m.metadata = metadata;
    write_manifest(dir, &m)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let m = read_manifest(dir)?;
    let samples = m.samples.iter().map(|e| read_sample(dir, &m, e)).collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        seed: m.seed,
        n_segments: m.n_segments,
        n_regions: m.n_regions,
        metadata: m.metadata,
        normalizer: m.normalizer,
        samples,
    })
}

/// Long-format CSV mirror: `sample,split,tensor,entity,step,value`, empty value for MISSING.
pub fn export_csv(samples: &[MSTSSample], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sample", "split", "tensor", "entity", "step", "value"])?;
    for s in samples {
        let id = s.id();
        let split = match s.split {
            Split::Train => "train",
            Split::Test => "test",
        };
        let parts: [(&str, &[f32], usize); 4] =
            [("drone", &s.drone, DRONE_STEPS), ("ld", &s.ld, COARSE_STEPS), ("seg", &s.seg, COARSE_STEPS), ("reg", &s.reg, COARSE_STEPS)];
        for (name, vals, steps) in parts {
            for (i, v) in vals.iter().enumerate() {
                let value = if v.is_nan() { String::new() } else { v.to_string() };
                w.write_record([id.as_str(), split, name, &(i / steps).to_string(), &(i % steps).to_string(), &value])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
