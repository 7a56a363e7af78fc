//! Two-stage training of the toy encoders: symmetric image-text pretraining,
//! then supervised contrastive training of pooled embeddings over mined
//! hard-negative batches.

use std::collections::HashMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adamw::{adamw_step, AdamWState};
use super::encoder::{Encoded, ModelGrads, ToyModel};
use super::features::SparseVec;
use super::schedule::{cosine_warm_restarts_lr, SchedulerConfig};
use crate::dataset::HyperParams;
use crate::linalg::{normalize_backward, Matrix};
use crate::metricspace::{clip_loss_and_grad, supcon_loss_and_grad, ContrastiveConfig, LossReport};
use crate::mining::{BatchPlan, BatchPlanner};
use crate::{derive_seed, Error, Result};

/// One (visual input, OCR text) realization of an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct View {
    pub visual: Vec<f64>,
    pub text: String,
}

/// Views grouped by class label.
#[derive(Debug, Clone, Default)]
pub struct LabeledViews {
    labels: Vec<String>,
    views: Vec<Vec<View>>,
    index: HashMap<String, usize>,
}

impl LabeledViews {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, label: impl Into<String>, view: View) {
        let label = label.into();
        let i = match self.index.get(&label) {
            Some(&i) => i,
            None => {
                self.labels.push(label.clone());
                self.views.push(Vec::new());
                self.index.insert(label, self.labels.len() - 1);
                self.labels.len() - 1
            }
        };
        self.views[i].push(view);
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn views(&self, label: usize) -> &[View] {
        &self.views[label]
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of views of every label, in label order.
    pub fn view_counts(&self) -> Vec<usize> {
        self.views.iter().map(Vec::len).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
}

impl TrainTrace {
    /// Mean batch loss of each epoch, in epoch order.
    pub fn epoch_means(&self) -> Vec<f64> {
        let mut sums: Vec<(f64, usize)> = Vec::new();
        for r in &self.rows {
            if sums.len() <= r.epoch {
                sums.resize(r.epoch + 1, (0.0, 0));
            }
            sums[r.epoch].0 += r.loss;
            sums[r.epoch].1 += 1;
        }
        sums.into_iter().filter(|(_, n)| *n > 0).map(|(s, n)| s / n as f64).collect()
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "epoch,step,lr,loss")?;
        for r in &self.rows {
            writeln!(w, "{},{},{:e},{:.17e}", r.epoch, r.step, r.lr, r.loss)?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Optimizer {
    states: Vec<AdamWState>,
    schedule: Option<SchedulerConfig>,
    weight_decay: f64,
    step: u64,
}

impl Optimizer {
    fn new(model: &ToyModel, hp: &HyperParams) -> Result<Self> {
        let schedule = if hp.lr_max > 0.0 {
            let s = SchedulerConfig::new(hp.lr_max);
            s.validate()?;
            Some(s)
        } else {
            None
        };
        let states = model.tensors().map(|t| AdamWState::new(t.as_slice().len())).collect();
        Ok(Self { states, schedule, weight_decay: hp.weight_decay, step: 0 })
    }

    fn lr(&self) -> f64 {
        self.schedule.as_ref().map_or(0.0, |s| cosine_warm_restarts_lr(self.step, s))
    }

    /// Applies one AdamW update and advances the schedule; returns the lr used.
    fn apply(&mut self, model: &mut ToyModel, grads: &ModelGrads) -> Result<f64> {
        let lr = self.lr();
        for ((param, grad), state) in model.tensors_mut().zip(grads.tensors()).zip(&mut self.states) {
            adamw_step(param.as_mut_slice(), grad.as_slice(), state, lr, self.weight_decay)?;
        }
        self.step += 1;
        Ok(lr)
    }
}

struct EncodedBatch {
    text_features: Vec<SparseVec>,
    text: Vec<Option<Encoded>>,
    visual: Vec<Option<Encoded>>,
}

fn encode_batch(model: &ToyModel, views: &[&View], need_text: bool, need_visual: bool) -> Result<EncodedBatch> {
    let mut out = EncodedBatch { text_features: Vec::new(), text: Vec::new(), visual: Vec::new() };
    for v in views {
        let features = if need_text { model.text.features(&v.text) } else { Vec::new() };
        out.text.push(if need_text { Some(model.text.encode_features(&features)?) } else { None });
        out.visual.push(if need_visual { Some(model.visual.encode(&v.visual)?) } else { None });
        out.text_features.push(features);
    }
    Ok(out)
}

/// Symmetric image-text loss of one minibatch with gradients for every
/// model weight.
pub fn clip_batch_loss_and_grad(model: &ToyModel, views: &[&View], cfg: &ContrastiveConfig) -> Result<(f64, ModelGrads)> {
    let enc = encode_batch(model, views, true, true)?;
    let rows = |e: &[Option<Encoded>]| {
        Matrix::from_rows(&e.iter().map(|x| x.as_ref().expect("encoded").unit.clone()).collect::<Vec<_>>())
    };
    let image = rows(&enc.visual)?;
    let text = rows(&enc.text)?;
    let (loss, d_image, d_text) = clip_loss_and_grad(&image, &text, cfg)?;
    let mut grads = model.zero_grads();
    for (i, v) in views.iter().enumerate() {
        let te = enc.text[i].as_ref().expect("encoded");
        model.text.backward(&enc.text_features[i], te, d_text.row(i), &mut grads.text);
        let ve = enc.visual[i].as_ref().expect("encoded");
        model.visual.backward(&v.visual, ve, d_image.row(i), &mut grads.visual);
    }
    Ok((loss, grads))
}

/// Pooled embedding of one view, with the same endpoint handling as
/// [`crate::metricspace::pool`].
pub fn embed_pooled(model: &ToyModel, view: &View, im_wt: f64) -> Result<Vec<f64>> {
    let enc = encode_batch(model, &[view], im_wt < 1.0, im_wt > 0.0)?;
    Ok(pool_rows(&enc, im_wt)?.0.row(0).to_vec())
}

fn pool_rows(enc: &EncodedBatch, im_wt: f64) -> Result<(Matrix, Vec<f64>)> {
    let b = enc.text.len();
    let mut rows = Vec::with_capacity(b);
    let mut norms = Vec::with_capacity(b);
    for i in 0..b {
        let (z, n) = if im_wt == 1.0 {
            (enc.visual[i].as_ref().expect("encoded").unit.clone(), 1.0)
        } else if im_wt == 0.0 {
            (enc.text[i].as_ref().expect("encoded").unit.clone(), 1.0)
        } else {
            let f = &enc.visual[i].as_ref().expect("encoded").unit;
            let g = &enc.text[i].as_ref().expect("encoded").unit;
            let mut p: Vec<f64> = f.iter().zip(g).map(|(a, b)| im_wt * a + (1.0 - im_wt) * b).collect();
            let n = crate::linalg::normalize_in_place(&mut p).map_err(|_| Error::DegeneratePool)?;
            (p, n)
        };
        rows.push(z);
        norms.push(n);
    }
    Ok((Matrix::from_rows(&rows)?, norms))
}

/// Supervised contrastive loss on pooled embeddings of `views`, with
/// gradients chained through pooling, normalization and both encoders.
pub fn supcon_batch_loss_and_grad(
    model: &ToyModel,
    views: &[&View],
    labels: &[usize],
    im_wt: f64,
    cfg: &ContrastiveConfig,
) -> Result<(LossReport, ModelGrads)> {
    let enc = encode_batch(model, views, im_wt < 1.0, im_wt > 0.0)?;
    let (pooled, norms) = pool_rows(&enc, im_wt)?;
    let (report, d_pooled) = supcon_loss_and_grad(&pooled, labels, cfg)?;
    let mut grads = model.zero_grads();
    for (i, v) in views.iter().enumerate() {
        let dz = d_pooled.row(i);
        let dp = if im_wt == 0.0 || im_wt == 1.0 { dz.to_vec() } else { normalize_backward(pooled.row(i), norms[i], dz) };
        if let Some(ve) = &enc.visual[i] {
            let df: Vec<f64> = dp.iter().map(|x| im_wt * x).collect();
            model.visual.backward(&v.visual, ve, &df, &mut grads.visual);
        }
        if let Some(te) = &enc.text[i] {
            let dg: Vec<f64> = dp.iter().map(|x| (1.0 - im_wt) * x).collect();
            model.text.backward(&enc.text_features[i], te, &dg, &mut grads.text);
        }
    }
    Ok((report, grads))
}

/// Self-supervised image-text pretraining over shuffled minibatches.
/// One scheduler step per batch; shuffles are seeded per epoch.
pub fn pretrain_toy(model: &mut ToyModel, pairs: &[View], hp: &HyperParams, seed: u64) -> Result<TrainTrace> {
    hp.validate()?;
    if hp.epochs > 0 && hp.batch_size > pairs.len() {
        return Err(Error::invalid(format!("batch size {} exceeds dataset size {}", hp.batch_size, pairs.len())));
    }
    let cfg = hp.contrastive();
    let mut opt = Optimizer::new(model, hp)?;
    let mut trace = TrainTrace::default();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for epoch in 0..hp.epochs {
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch as u64)));
        for chunk in order.chunks(hp.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<&View> = chunk.iter().map(|&i| &pairs[i]).collect();
            let (loss, grads) = clip_batch_loss_and_grad(model, &batch, &cfg)?;
            let step = opt.step;
            let lr = opt.apply(model, &grads)?;
            trace.rows.push(TraceRow { epoch, step, lr, loss });
        }
    }
    Ok(trace)
}

/// Where supervised batches come from.
#[derive(Debug, Clone)]
pub enum PlanSchedule {
    /// The same plan every epoch.
    Fixed(BatchPlan),
    /// A fresh plan (shuffle and view draws) per epoch.
    PerEpoch(BatchPlanner),
}

impl PlanSchedule {
    fn plan(&self, epoch: usize) -> Result<BatchPlan> {
        match self {
            PlanSchedule::Fixed(p) => Ok(p.clone()),
            PlanSchedule::PerEpoch(p) => p.plan_for_epoch(epoch),
        }
    }
}

/// Supervised contrastive training of pooled embeddings over planned batches.
pub fn train_supervised_toy(
    model: &mut ToyModel,
    data: &LabeledViews,
    plans: &PlanSchedule,
    hp: &HyperParams,
) -> Result<TrainTrace> {
    hp.validate()?;
    let cfg = hp.contrastive();
    let mut opt = Optimizer::new(model, hp)?;
    let mut trace = TrainTrace::default();
    for epoch in 0..hp.epochs {
        let plan = plans.plan(epoch)?;
        for batch in &plan.batches {
            let mut views = Vec::with_capacity(batch.slots.len());
            let mut labels = Vec::with_capacity(batch.slots.len());
            for slot in &batch.slots {
                let li = data
                    .label_index(&slot.label)
                    .ok_or_else(|| Error::invalid(format!("plan references unknown label {}", slot.label)))?;
                let v = data.views(li).get(slot.view).ok_or_else(|| {
                    Error::invalid(format!("plan references view {} of label {}", slot.view, slot.label))
                })?;
                views.push(v);
                labels.push(li);
            }
            let (report, grads) = supcon_batch_loss_and_grad(model, &views, &labels, hp.im_wt, &cfg)?;
            let step = opt.step;
            let lr = opt.apply(model, &grads)?;
            trace.rows.push(TraceRow { epoch, step, lr, loss: report.value });
        }
    }
    Ok(trace)
}
