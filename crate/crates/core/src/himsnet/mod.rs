//! Multi-source speed forecaster: per-modality recurrent encoders, graph message exchange
//! over the segment graph, and segment and regional decoders trained with a masked MAE.

mod train;

pub use train::{evaluate_loss, predict, train, Prediction, TrainLogRow, TrainReport};

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{MSTSSample, Normalizer, COARSE_STEPS, DRONE_STEPS};
use crate::error::{invalid, Error, Result};
use crate::roadnet::k_hop_adjacency;
use crate::tensor::{read_checkpoint, write_checkpoint, Graph, ParamStore, Sparse, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Drone,
    Ld,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Drone => "drone",
            Modality::Ld => "ld",
        }
    }
}

/// Parses `drone`, `ld` or `both`.
pub fn parse_modalities(s: &str) -> Result<Vec<Modality>> {
    match s {
        "drone" => Ok(vec![Modality::Drone]),
        "ld" => Ok(vec![Modality::Ld]),
        "both" | "drone,ld" | "ld,drone" => Ok(vec![Modality::Drone, Modality::Ld]),
        other => Err(invalid(format!("unknown modality set {other:?} (expected drone, ld or both)"))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub lstm_layers: usize,
    pub gcn_layers: usize,
    pub hops: usize,
    pub decoder_hidden: usize,
    pub horizon: usize,
    pub modalities: Vec<Modality>,
    pub use_gnn: bool,
    pub w_seg: f64,
    pub w_reg: f64,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 64,
            lstm_layers: 3,
            gcn_layers: 3,
            hops: 3,
            decoder_hidden: 128,
            horizon: COARSE_STEPS,
            modalities: vec![Modality::Drone, Modality::Ld],
            use_gnn: true,
            w_seg: 1.0,
            w_reg: 1.0,
            epochs: 30,
            batch: 8,
            lr: 1e-3,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.modalities.is_empty() {
            return Err(invalid("at least one input modality is required"));
        }
        if self.horizon != COARSE_STEPS {
            return Err(invalid(format!("horizon must be {COARSE_STEPS}")));
        }
        if self.hidden == 0 || self.decoder_hidden == 0 || self.lstm_layers == 0 || self.batch == 0 {
            return Err(invalid("hidden sizes, LSTM layers and batch size must be positive"));
        }
        let mut m = self.modalities.clone();
        m.sort();
        m.dedup();
        if m.len() != self.modalities.len() {
            return Err(invalid("modalities listed twice"));
        }
        Ok(())
    }

    /// Short variant label such as `both`, `ld/nognn`.
    pub fn variant(&self) -> String {
        let mut m: Vec<Modality> = self.modalities.clone();
        m.sort();
        let base = match m.as_slice() {
            [Modality::Drone, Modality::Ld] => "both".to_string(),
            [one] => one.name().to_string(),
            _ => "none".to_string(),
        };
        if self.use_gnn {
            base
        } else {
            format!("{base}/nognn")
        }
    }

    fn width(&self) -> usize {
        self.hidden * self.modalities.len()
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HiMSNet({}) hidden={} hops={}", self.variant(), self.hidden, self.hops)
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drone" => Ok(Modality::Drone),
            "ld" => Ok(Modality::Ld),
            other => Err(invalid(format!("unknown modality {other:?}"))),
        }
    }
}

/// Graph structure shared by every sample of a network.
#[derive(Clone, Debug)]
pub struct ModelContext {
    pub adjacency: Arc<Sparse>,
    pub region_mean: Arc<Sparse>,
    pub n_segments: usize,
    pub n_regions: usize,
}

impl ModelContext {
    /// `neighbors`: 1-hop segment adjacency; `regions`: member lists.
    pub fn new(neighbors: &[Vec<usize>], hops: usize, regions: &[Vec<usize>]) -> Result<Self> {
        let n = neighbors.len();
        if regions.iter().flatten().any(|&s| s >= n) {
            return Err(invalid("region member outside the segment range"));
        }
        let khop = k_hop_adjacency(neighbors, hops);
        Ok(ModelContext {
            adjacency: Arc::new(Sparse::gcn_normalized(&khop)?),
            region_mean: Arc::new(Sparse::group_mean(n, regions)?),
            n_segments: n,
            n_regions: regions.len(),
        })
    }
}

/// Positions of the named parameters inside the [`ParamStore`].
#[derive(Clone, Debug)]
struct LinearIx {
    w: usize,
    b: Option<usize>,
}

#[derive(Clone, Debug)]
struct LstmIx {
    w_ih: usize,
    w_hh: usize,
    b_ih: usize,
    b_hh: usize,
}

#[derive(Clone, Debug)]
struct EncoderIx {
    modality: Modality,
    embed: LinearIx,
    missing: usize,
    convs: Vec<LinearIx>,
    lstm: Vec<LstmIx>,
}

#[derive(Clone, Debug)]
struct GcnIx {
    w: usize,
    gain: usize,
    bias: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    encoders: Vec<EncoderIx>,
    r1: LinearIx,
    gme: Vec<GcnIx>,
    r2: LinearIx,
    seg_dec: [LinearIx; 2],
    reg_dec: [LinearIx; 2],
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Builder<'_> {
    fn uniform(&mut self, name: &str, rows: usize, cols: usize, bound: f64) -> Result<usize> {
        let t = Tensor::from_fn(rows, cols, |_, _| self.rng.random_range(-bound..=bound));
        self.store.add(name, t)
    }

    fn constant(&mut self, name: &str, rows: usize, cols: usize, v: f64) -> Result<usize> {
        self.store.add(name, Tensor::filled(rows, cols, v))
    }

    /// `fan_in`-scaled uniform init for weight `[out, fan_in]` and optional bias.
    fn linear(&mut self, name: &str, out: usize, fan_in: usize, bias: bool) -> Result<LinearIx> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = self.uniform(&format!("{name}.w"), out, fan_in, bound)?;
        let b = if bias { Some(self.uniform(&format!("{name}.b"), 1, out, bound)?) } else { None };
        Ok(LinearIx { w, b })
    }

    fn lstm(&mut self, name: &str, input: usize, hidden: usize) -> Result<LstmIx> {
        let bound = 1.0 / (hidden as f64).sqrt();
        Ok(LstmIx {
            w_ih: self.uniform(&format!("{name}.w_ih"), 4 * hidden, input, bound)?,
            w_hh: self.uniform(&format!("{name}.w_hh"), 4 * hidden, hidden, bound)?,
            b_ih: self.uniform(&format!("{name}.b_ih"), 1, 4 * hidden, bound)?,
            b_hh: self.uniform(&format!("{name}.b_hh"), 1, 4 * hidden, bound)?,
        })
    }
}

/// Parameters plus the configuration they were built for.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    layout: Layout,
}

/// Outputs of one forward pass.
pub struct Forward {
    pub seg: Var,
    pub reg: Var,
    pub params: Vec<Var>,
}

impl Model {
    /// Builds and initializes every parameter in a fixed order from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let h = config.hidden;
        let w = config.width();
        let d = config.decoder_hidden;
        let mut b = Builder { store: &mut store, rng: ChaCha8Rng::seed_from_u64(config.seed) };
        let mut modalities = config.modalities.clone();
        modalities.sort();
        let mut encoders = Vec::new();
        for m in modalities {
            let p = m.name();
            let embed = b.linear(&format!("{p}.embed"), h, 2, true)?;
            let missing = b.uniform(&format!("{p}.missing"), 1, h, 1.0 / (h as f64).sqrt())?;
            let convs = if m == Modality::Drone {
                vec![b.linear(&format!("{p}.conv1"), h, 3 * h, true)?, b.linear(&format!("{p}.conv2"), h, 3 * h, true)?]
            } else {
                Vec::new()
            };
            let lstm = (0..config.lstm_layers)
                .map(|l| b.lstm(&format!("{p}.lstm{l}"), h, h))
                .collect::<Result<Vec<_>>>()?;
            encoders.push(EncoderIx { modality: m, embed, missing, convs, lstm });
        }
        let r1 = b.linear("r1", w, w, true)?;
        let gme = (0..config.gcn_layers)
            .map(|l| {
                Ok(GcnIx {
                    w: b.linear(&format!("gme{l}"), w, w, false)?.w,
                    gain: b.constant(&format!("gme{l}.ln.gain"), 1, w, 1.0)?,
                    bias: b.constant(&format!("gme{l}.ln.bias"), 1, w, 0.0)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let r2 = b.linear("r2", w, w, true)?;
        let seg_dec = [b.linear("seg_dec.l1", d, 2 * w, true)?, b.linear("seg_dec.l2", config.horizon, d, true)?];
        let reg_dec = [b.linear("reg_dec.l1", d, 2 * w, true)?, b.linear("reg_dec.l2", config.horizon, d, true)?];
        let layout = Layout { encoders, r1, gme, r2, seg_dec, reg_dec };
        Ok(Model { config, store, layout })
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    /// Embeds one modality: `(value, time fraction)` through a linear layer, MISSING steps
    /// replaced by the learnable missing vector. Returns node-major `[n * steps, H]`.
    fn embed(&self, g: &mut Graph, p: &[Var], enc: &EncoderIx, values: &[f32], n: usize, steps: usize) -> Result<Var> {
        if values.len() != n * steps {
            return Err(Error::Shape(format!("{} input has {} values, expected {n}x{steps}", enc.modality.name(), values.len())));
        }
        let mut x = Vec::with_capacity(2 * n * steps);
        let mut present = Vec::with_capacity(n * steps);
        for (i, &v) in values.iter().enumerate() {
            let ok = !v.is_nan();
            present.push(ok);
            x.push(if ok { v as f64 } else { 0.0 });
            x.push((i % steps) as f64 / steps as f64);
        }
        let xv = g.constant(Tensor::new(n * steps, 2, x)?);
        let e = g.linear(xv, p[enc.embed.w], enc.embed.b.map(|b| p[b]))?;
        g.fill_missing(e, p[enc.missing], Arc::from(present))
    }

    /// Stacked LSTM over a node-major sequence; returns the last hidden state `[n, H]`.
    fn encode(&self, g: &mut Graph, p: &[Var], enc: &EncoderIx, seq: Var, n: usize, steps: usize) -> Result<Var> {
        let h = self.config.hidden;
        let index: Arc<[usize]> = (0..steps).flat_map(|t| (0..n).map(move |i| i * steps + t)).collect();
        let mut input = g.gather_rows(seq, index)?;
        let mut last = None;
        for (l, ix) in enc.lstm.iter().enumerate() {
            let gx = g.linear(input, p[ix.w_ih], Some(p[ix.b_ih]))?;
            let gx = g.add_row(gx, p[ix.b_hh])?;
            let mut state = None;
            let mut outputs = Vec::with_capacity(steps);
            for t in 0..steps {
                let gt = g.slice_rows(gx, t * n, n)?;
                let hc = g.lstm_step(gt, state, p[ix.w_hh])?;
                state = Some(hc);
                if l + 1 < enc.lstm.len() {
                    outputs.push(g.slice_cols(hc, 0, h)?);
                }
            }
            let hc = state.ok_or_else(|| invalid("empty input sequence"))?;
            last = Some(g.slice_cols(hc, 0, h)?);
            if l + 1 < enc.lstm.len() {
                input = g.concat_rows(&outputs)?;
            }
        }
        last.ok_or_else(|| invalid("no LSTM layers"))
    }

    fn mlp(g: &mut Graph, p: &[Var], layers: &[LinearIx; 2], x: Var) -> Result<Var> {
        let h = g.linear(x, p[layers[0].w], layers[0].b.map(|b| p[b]))?;
        let h = g.relu(h);
        g.linear(h, p[layers[1].w], layers[1].b.map(|b| p[b]))
    }

    /// Forward pass for a normalized sample. Modalities not in the config are ignored.
    pub fn forward(&self, g: &mut Graph, ctx: &ModelContext, sample: &MSTSSample) -> Result<Forward> {
        let n = ctx.n_segments;
        if sample.n_segments != n || sample.n_regions != ctx.n_regions {
            return Err(Error::Shape(format!(
                "sample has {} segments / {} regions, network has {n} / {}",
                sample.n_segments, sample.n_regions, ctx.n_regions
            )));
        }
        let p: Vec<Var> = self.store.values().iter().map(|t| g.param(t.clone())).collect();
        let mut z_parts = Vec::new();
        for enc in &self.layout.encoders {
            let z = match enc.modality {
                Modality::Drone => {
                    let e = self.embed(g, &p, enc, &sample.drone, n, DRONE_STEPS)?;
                    let c1 = &enc.convs[0];
                    let x = g.conv1d(e, DRONE_STEPS, p[c1.w], c1.b.map(|b| p[b]))?;
                    let x = g.relu(x);
                    let c2 = &enc.convs[1];
                    let x = g.conv1d(x, DRONE_STEPS / 3, p[c2.w], c2.b.map(|b| p[b]))?;
                    self.encode(g, &p, enc, x, n, DRONE_STEPS / 9)?
                }
                Modality::Ld => {
                    let e = self.embed(g, &p, enc, &sample.ld, n, COARSE_STEPS)?;
                    self.encode(g, &p, enc, e, n, COARSE_STEPS)?
                }
            };
            z_parts.push(z);
        }
        let z = if z_parts.len() == 1 { z_parts[0] } else { g.concat_cols(&z_parts)? };
        let q = if self.config.use_gnn {
            let l = &self.layout;
            let mut m = g.linear(z, p[l.r1.w], l.r1.b.map(|b| p[b]))?;
            for layer in &l.gme {
                m = g.gcn_conv(ctx.adjacency.clone(), m, p[layer.w])?;
                m = g.relu(m);
                m = g.layer_norm(m, p[layer.gain], p[layer.bias])?;
            }
            let m = g.linear(m, p[l.r2.w], l.r2.b.map(|b| p[b]))?;
            g.concat_cols(&[m, z])?
        } else {
            g.concat_cols(&[z, z])?
        };
        let seg = Self::mlp(g, &p, &self.layout.seg_dec, q)?;
        let q_reg = g.spmm(ctx.region_mean.clone(), q)?;
        let reg = Self::mlp(g, &p, &self.layout.reg_dec, q_reg)?;
        Ok(Forward { seg, reg, params: p })
    }

    /// `w_seg * l_seg + w_reg * l_reg`, each a mean absolute error over present labels.
    pub fn loss(&self, g: &mut Graph, f: &Forward, sample: &MSTSSample) -> Result<(Var, Var, Var)> {
        masked_mae_loss(g, f.seg, f.reg, sample, self.config.w_seg, self.config.w_reg)
    }

    pub fn save(&self, path: &Path, normalizer: Option<&Normalizer>, extra: serde_json::Value) -> Result<()> {
        let meta = serde_json::json!({
            "config": self.config,
            "normalizer": normalizer,
            "step": self.store.step(),
            "extra": extra,
        });
        write_checkpoint(path, &self.store, meta)
    }

    /// Loads a checkpoint, rebuilding the model from the configuration stored in it.
    pub fn load(path: &Path) -> Result<(Model, Option<Normalizer>, serde_json::Value)> {
        let ck = read_checkpoint(path)?;
        let config: ModelConfig = serde_json::from_value(ck.header["config"].clone())
            .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
        let normalizer: Option<Normalizer> = serde_json::from_value(ck.header["normalizer"].clone())
            .map_err(|e| Error::Format(format!("checkpoint normalizer: {e}")))?;
        let mut model = Model::new(config)?;
        model.store.load_values(&ck.tensors)?;
        Ok((model, normalizer, ck.header["extra"].clone()))
    }

    /// Loads a checkpoint that must have been trained with `expected`.
    pub fn load_expecting(path: &Path, expected: &ModelConfig) -> Result<(Model, Option<Normalizer>)> {
        let (model, normalizer, _) = Model::load(path)?;
        if &model.config != expected {
            return Err(invalid(format!(
                "checkpoint was trained as {} but {} was requested",
                model.config, expected
            )));
        }
        Ok((model, normalizer))
    }
}

/// Label tensors as loss targets (NaN = MISSING) in entity-major order.
pub fn masked_mae_loss(g: &mut Graph, seg: Var, reg: Var, sample: &MSTSSample, w_seg: f64, w_reg: f64) -> Result<(Var, Var, Var)> {
    let t_seg: Arc<[f64]> = sample.seg.iter().map(|&v| v as f64).collect();
    let t_reg: Arc<[f64]> = sample.reg.iter().map(|&v| v as f64).collect();
    let l_seg = g.masked_l1(seg, t_seg)?;
    let l_reg = g.masked_l1(reg, t_reg)?;
    let a = g.scale(l_seg, w_seg);
    let b = g.scale(l_reg, w_reg);
    let total = g.add(a, b)?;
    Ok((total, l_seg, l_reg))
}
