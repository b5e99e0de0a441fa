use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{invalid, Error, Result};

/// Named trainable tensors with Adam moment buffers.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    index: HashMap<String, usize>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(invalid(format!("duplicate parameter name {name}")));
        }
        let [r, c] = value.shape();
        self.index.insert(name.to_string(), self.values.len());
        self.names.push(name.to_string());
        self.values.push(value);
        self.m.push(Tensor::zeros(r, c));
        self.v.push(Tensor::zeros(r, c));
        Ok(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn value(&self, i: usize) -> &Tensor {
        &self.values[i]
    }

    pub fn value_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.values[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.values[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Replaces values by name; every stored name must be present with the same shape.
    pub fn load_values(&mut self, named: &[(String, Tensor)]) -> Result<()> {
        let found: HashMap<&str, &Tensor> = named.iter().map(|(n, t)| (n.as_str(), t)).collect();
        for (i, name) in self.names.iter().enumerate() {
            let t = found
                .get(name.as_str())
                .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {name}")))?;
            if t.shape() != self.values[i].shape() {
                return Err(Error::Shape(format!("parameter {name}: {:?} vs {:?}", t.shape(), self.values[i].shape())));
            }
            self.values[i] = (*t).clone();
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { weight_decay: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One Adam update with bias correction. Weight decay is decoupled: `θ ← θ − lr·wd·θ` first.
pub fn adam_step(store: &mut ParamStore, grads: &[Tensor], lr: f64, cfg: &AdamConfig) -> Result<()> {
    if grads.len() != store.values.len() {
        return Err(invalid(format!("{} gradients for {} parameters", grads.len(), store.values.len())));
    }
    for (i, g) in grads.iter().enumerate() {
        if g.shape() != store.values[i].shape() {
            return Err(Error::Shape(format!("gradient for {}: {:?}", store.names[i], g.shape())));
        }
        if let Some(k) = g.data().iter().position(|x| !x.is_finite()) {
            return Err(Error::Diverged(format!(
                "non-finite gradient in {} at element {k} (step {})",
                store.names[i],
                store.step + 1
            )));
        }
    }
    store.step += 1;
    let t = store.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, g) in grads.iter().enumerate() {
        let theta = store.values[i].data_mut();
        let m = store.m[i].data_mut();
        let v = store.v[i].data_mut();
        for k in 0..theta.len() {
            theta[k] -= lr * cfg.weight_decay * theta[k];
            let gk = g.data()[k];
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
            let mh = m[k] / bc1;
            let vh = v[k] / bc2;
            theta[k] -= lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Linear warmup from 0, then `base`, `0.1·base` from 70% and `0.01·base` from 85% of training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub total_steps: u64,
    pub warmup_steps: u64,
}

impl LrSchedule {
    pub fn lr(&self, step: u64) -> f64 {
        let total = self.total_steps.max(1) as f64;
        let frac = step as f64 / total;
        let plateau = if frac >= 0.85 {
            0.01 * self.base_lr
        } else if frac >= 0.7 {
            0.1 * self.base_lr
        } else {
            self.base_lr
        };
        if step < self.warmup_steps {
            plateau.min(self.base_lr * step as f64 / self.warmup_steps as f64)
        } else {
            plateau
        }
    }
}

const MAGIC: &[u8; 8] = b"TLCKPT01";

/// Named parameters plus an arbitrary JSON header (schedule state, seeds, config).
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: [usize; 2],
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<Entry>,
}

/// Layout: magic, u64 LE header length, JSON header, then each tensor as f32 LE in order.
pub fn write_checkpoint(path: &Path, store: &ParamStore, meta: serde_json::Value) -> Result<()> {
    let header = Header {
        meta,
        tensors: store
            .names
            .iter()
            .zip(&store.values)
            .map(|(n, t)| Entry { name: n.clone(), shape: t.shape() })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for t in &store.values {
        for &x in t.data() {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("{} is not a checkpoint", path.display())));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let n = e.shape[0] * e.shape[1];
        let mut buf = vec![0u8; 4 * n];
        r.read_exact(&mut buf).map_err(|_| Error::Format(format!("truncated tensor {}", e.name)))?;
        let data = buf.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
        tensors.push((e.name, Tensor::new(e.shape[0], e.shape[1], data)?));
    }
    Ok(Checkpoint { header: header.meta, tensors })
}
