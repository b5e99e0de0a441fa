use std::io::Write;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Model, ModelContext};
use crate::dataset::{MSTSSample, Normalizer};
use crate::error::{Error, Result};
use crate::tensor::{adam_step, AdamConfig, Graph, LrSchedule, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub l_seg: f64,
    pub l_reg: f64,
    pub l_total: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub log: Vec<TrainLogRow>,
}

impl TrainReport {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.log {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Mean total loss of the last epoch.
    pub fn final_epoch_loss(&self) -> Option<f64> {
        let last = self.log.last()?.epoch;
        let rows: Vec<f64> = self.log.iter().filter(|r| r.epoch == last).map(|r| r.l_total).collect();
        Some(rows.iter().sum::<f64>() / rows.len() as f64)
    }
}

struct SampleResult {
    l_total: f64,
    l_seg: f64,
    l_reg: f64,
    grads: Vec<Tensor>,
}

fn sample_grads(model: &Model, ctx: &ModelContext, s: &MSTSSample) -> Result<SampleResult> {
    let mut g = Graph::new();
    let f = model.forward(&mut g, ctx, s)?;
    let (total, l_seg, l_reg) = model.loss(&mut g, &f, s)?;
    let mut grads = g.backward(total)?;
    let grads = f
        .params
        .iter()
        .zip(model.store.values())
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols())))
        .collect();
    Ok(SampleResult {
        l_total: g.value(total).data()[0],
        l_seg: g.value(l_seg).data()[0],
        l_reg: g.value(l_reg).data()[0],
        grads,
    })
}

#[cfg(feature = "parallel")]
fn batch_grads(model: &Model, ctx: &ModelContext, batch: &[&MSTSSample]) -> Result<Vec<SampleResult>> {
    use rayon::prelude::*;
    batch.par_iter().map(|s| sample_grads(model, ctx, s)).collect()
}

#[cfg(not(feature = "parallel"))]
fn batch_grads(model: &Model, ctx: &ModelContext, batch: &[&MSTSSample]) -> Result<Vec<SampleResult>> {
    batch.iter().map(|s| sample_grads(model, ctx, s)).collect()
}

/// Mini-batch Adam over normalized training samples.
///
/// Per-sample gradients are summed in batch order, so results do not depend on thread count.
/// The sample order is reshuffled every epoch from `config.seed`. On a non-finite loss or
/// gradient the model keeps its last good parameters and an error is returned.
pub fn train(model: &mut Model, ctx: &ModelContext, samples: &[MSTSSample]) -> Result<TrainReport> {
    let cfg = model.config.clone();
    if samples.is_empty() {
        return Err(crate::error::invalid("no training samples"));
    }
    let steps_per_epoch = samples.len().div_ceil(cfg.batch) as u64;
    let schedule = LrSchedule {
        base_lr: cfg.lr,
        total_steps: steps_per_epoch * cfg.epochs as u64,
        warmup_steps: steps_per_epoch,
    };
    let adam = AdamConfig { weight_decay: cfg.weight_decay, ..AdamConfig::default() };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut report = TrainReport::default();
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.sort_unstable();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<&MSTSSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let results = batch_grads(model, ctx, &batch)?;
            let scale = 1.0 / results.len() as f64;
            let mut grads = results[0].grads.clone();
            for r in &results[1..] {
                for (a, b) in grads.iter_mut().zip(&r.grads) {
                    a.add_assign(b);
                }
            }
            grads.iter_mut().for_each(|g| g.scale(scale));
            let mean = |f: fn(&SampleResult) -> f64| results.iter().map(f).sum::<f64>() * scale;
            let (l_total, l_seg, l_reg) = (mean(|r| r.l_total), mean(|r| r.l_seg), mean(|r| r.l_reg));
            if !l_total.is_finite() {
                return Err(Error::Diverged(format!("loss became {l_total} at epoch {epoch}, step {step}")));
            }
            step += 1;
            let lr = schedule.lr(step);
            adam_step(&mut model.store, &grads, lr, &adam)?;
            report.log.push(TrainLogRow { epoch, step, lr, l_seg, l_reg, l_total });
        }
        if let Some(l) = report.final_epoch_loss() {
            info!("epoch {epoch}: mean loss {l:.4}");
        }
    }
    Ok(report)
}

/// Mean `(l_seg, l_reg)` of the model over normalized samples, without updating it.
pub fn evaluate_loss(model: &Model, ctx: &ModelContext, samples: &[MSTSSample]) -> Result<(f64, f64)> {
    let mut seg = 0.0;
    let mut reg = 0.0;
    for s in samples {
        let mut g = Graph::new();
        let f = model.forward(&mut g, ctx, s)?;
        let (_, l_seg, l_reg) = model.loss(&mut g, &f, s)?;
        seg += g.value(l_seg).data()[0];
        reg += g.value(l_reg).data()[0];
    }
    let n = samples.len().max(1) as f64;
    Ok((seg / n, reg / n))
}

/// Denormalized speed forecasts for one sample (m/s, clamped at zero).
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// `[segments x horizon]`.
    pub seg: Vec<f64>,
    /// `[regions x horizon]`.
    pub reg: Vec<f64>,
}

/// Forward pass on a raw (unnormalized) sample.
pub fn predict(model: &Model, ctx: &ModelContext, normalizer: &Normalizer, raw: &MSTSSample) -> Result<Prediction> {
    let s = normalizer.apply(raw);
    let mut g = Graph::new();
    let f = model.forward(&mut g, ctx, &s)?;
    let out = |v| g.value(v).data().iter().map(|&z| normalizer.invert_label(z).max(0.0)).collect();
    Ok(Prediction { seg: out(f.seg), reg: out(f.reg) })
}
