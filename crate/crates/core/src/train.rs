//! Multi-source training: expert, global, meta-target and adversarial losses
//! with alternating discriminator / model updates.
//!
//! For a batch from source `j`:
//!
//! * `L1` is the cross entropy of expert `j` through its own head;
//! * `L2` the cross entropy of the global encoder through the global head;
//! * `L3` the cross entropy of the full model with expert `j` left out of the
//!   attention pool (source `j` plays the target);
//! * `L_D` the cross entropy of the discriminator predicting domain `j` from
//!   the global embedding, and `L4 = -L_D`.
//!
//! Each step first updates only the discriminator on `L_D` (the D-step), then
//! updates every other parameter on `λ1 L1 + λ2 L2 + λ3 L3 + λ4 L4` with the
//! freshly updated discriminator held fixed (the M-step).

use ndarray::Axis;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::{tensor_key, Graph, Mat, SlotMap, SparseGrads, Var};
use crate::data::{Batch, DomainRegistry};
use crate::encoder::{EncoderConfig, Mode};
use crate::error::{DameError, Result};
use crate::model::{expert_predict, global_predict, meta_forward, DameModel, ModelConfig, ParamGroup};
use crate::optim::{Optimizer, OptimizerKind};
use crate::seed::{derive_indexed, derive_seed};
use crate::vocab::{SerializedPair, Tokenizer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            l1: 1.0,
            l2: 1.0,
            l3: 1.0,
            l4: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("l1", self.l1), ("l2", self.l2), ("l3", self.l3), ("l4", self.l4)] {
            if !v.is_finite() || v < 0.0 {
                return Err(DameError::Config(format!(
                    "loss weight {name} must be finite and non-negative"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub loss_weights: LossWeights,
    pub seed: u64,
    pub use_target_in_adversarial: bool,
    /// Discriminator steps per model step.
    pub alternation_ratio: usize,
    /// Optional cap on the total number of steps.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            batch_size: 16,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            loss_weights: LossWeights::default(),
            seed: 0,
            use_target_in_adversarial: false,
            alternation_ratio: 1,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(DameError::Config("train.epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(DameError::Config("train.batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(DameError::Config("train.learning_rate must be > 0".into()));
        }
        if self.alternation_ratio == 0 {
            return Err(DameError::Config("train.alternation_ratio must be >= 1".into()));
        }
        self.loss_weights.validate()
    }
}

/// One line of the JSON-lines training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub domain: usize,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l_d: f64,
    pub total: f64,
}

/// Mean loss components over a batch. `l4` is `-l_d`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossComponents {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l_d: f64,
}

impl LossComponents {
    pub fn l4(&self) -> f64 {
        -self.l_d
    }

    pub fn as_tuple(&self) -> (f64, f64, f64, f64) {
        (self.l1, self.l2, self.l3, self.l4())
    }
}

pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    let p = probs.get(label).ok_or(DameError::LabelOutOfRange {
        label,
        classes: probs.len(),
    })?;
    Ok(-p.max(crate::autograd::PROB_FLOOR).ln())
}

/// `λ1 l1 + λ2 l2 + λ3 l3 + λ4 l4` where `l4` is already the negated
/// discriminator loss.
pub fn total_loss(components: (f64, f64, f64, f64), w: &LossWeights) -> f64 {
    let (l1, l2, l3, l4) = components;
    w.l1 * l1 + w.l2 * l2 + w.l3 * l3 + w.l4 * l4
}

fn mean(xs: impl Iterator<Item = Result<f64>>) -> Result<f64> {
    let v: Vec<f64> = xs.collect::<Result<_>>()?;
    Ok(v.iter().sum::<f64>() / v.len().max(1) as f64)
}

/// Mean expert-`j` cross entropy over the batch (eval mode).
pub fn loss_expert(model: &DameModel, batch: &Batch) -> Result<f64> {
    let j = batch.domain_index;
    mean(
        batch
            .pairs
            .iter()
            .zip(&batch.labels)
            .map(|(sp, &y)| cross_entropy(&expert_predict(model, j, sp, &mut Mode::Eval)?, y as usize)),
    )
}

pub fn loss_global(model: &DameModel, batch: &Batch) -> Result<f64> {
    mean(
        batch
            .pairs
            .iter()
            .zip(&batch.labels)
            .map(|(sp, &y)| cross_entropy(&global_predict(model, sp, &mut Mode::Eval)?, y as usize)),
    )
}

pub fn loss_meta(model: &DameModel, batch: &Batch) -> Result<f64> {
    let j = batch.domain_index;
    mean(
        batch
            .pairs
            .iter()
            .zip(&batch.labels)
            .map(|(sp, &y)| cross_entropy(&meta_forward(model, sp, j, &mut Mode::Eval)?, y as usize)),
    )
}

/// Mean discriminator cross entropy of `pairs` against `domain_label`.
pub fn loss_discriminator(model: &DameModel, pairs: &[SerializedPair], domain_label: usize) -> Result<f64> {
    let n = model.discriminator.num_domains();
    if domain_label >= n {
        return Err(DameError::LabelOutOfRange {
            label: domain_label,
            classes: n,
        });
    }
    mean(pairs.iter().map(|sp| {
        model.check_input(sp)?;
        let mut g = Graph::new();
        let e = model.global.forward(&mut g, sp, &mut Mode::Eval);
        let p = model.discriminator.apply(&mut g, e);
        cross_entropy(g.value(p).row(0).as_slice().expect("contiguous"), domain_label)
    }))
}

/// Slot index of every model tensor, by address.
pub fn slot_map(model: &DameModel) -> SlotMap {
    model
        .named_tensors()
        .iter()
        .enumerate()
        .map(|(i, (_, _, t))| (tensor_key(t), i))
        .collect()
}

pub fn zero_grads(model: &DameModel) -> Vec<Mat> {
    model
        .named_tensors()
        .iter()
        .map(|(_, _, t)| Mat::zeros(t.raw_dim()))
        .collect()
}

struct SampleLoss {
    l1: f64,
    l2: f64,
    l3: f64,
    l_d: f64,
    grads: SparseGrads,
}

/// Per-sample objective. `label` is `None` for target samples, which only
/// contribute to the discriminator term with domain label K.
#[allow(clippy::too_many_arguments)]
fn sample_objective(
    model: &DameModel,
    sp: &SerializedPair,
    label: Option<u8>,
    domain: usize,
    weights: &LossWeights,
    scale: (f64, f64),
    slots: &SlotMap,
    dropout_seed: Option<u64>,
) -> SampleLoss {
    let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
    let mut mode = match rng.as_mut() {
        Some(r) => Mode::Train(r),
        None => Mode::Eval,
    };
    let mut g = Graph::new();
    let (task_scale, disc_scale) = scale;
    let mut terms: Vec<Var> = Vec::new();
    let (mut l1, mut l2, mut l3) = (0.0, 0.0, 0.0);
    let global;
    if let Some(y) = label {
        let y = y as usize;
        let fv = model.features_graph(&mut g, sp, &mut mode, |_| true);
        global = fv.global;
        let e_j = fv.experts[domain].expect("expert evaluated");
        let p1 = model.expert_probs(&mut g, domain, e_j);
        let c1 = g.neg_log_pick(p1, y);
        let p2 = model.global_probs(&mut g, global);
        let c2 = g.neg_log_pick(p2, y);
        let rest: Vec<usize> = (0..model.num_experts()).filter(|&i| i != domain).collect();
        let (fused, _) = model.fused_graph(&mut g, &fv, &rest);
        let p3 = model.final_probs(&mut g, fused);
        let c3 = g.neg_log_pick(p3, y);
        l1 = g.scalar(c1);
        l2 = g.scalar(c2);
        l3 = g.scalar(c3);
        for (c, w) in [(c1, weights.l1), (c2, weights.l2), (c3, weights.l3)] {
            terms.push(g.scale(c, w * task_scale));
        }
    } else {
        global = model.global.forward(&mut g, sp, &mut mode);
    }
    let pd = model.discriminator.apply(&mut g, global);
    let cd = g.neg_log_pick(pd, domain);
    let l_d = g.scalar(cd);
    terms.push(g.scale(cd, -weights.l4 * disc_scale));
    let total = g.sum_scalars(&terms);
    let grads = g.backward(total, slots);
    SampleLoss { l1, l2, l3, l_d, grads }
}

/// Batch objective `λ1 L1 + λ2 L2 + λ3 L3 + λ4 L4` and its gradient with
/// respect to every model tensor (dense, in `named_tensors` order).
///
/// `L_D` averages over the source batch; when `target` is given its mean over
/// the target batch (domain label K) is added. With `dropout_seed` set the
/// encoders run in training mode, item `i` using stream `derive_indexed(seed, i)`.
pub fn batch_objective(
    model: &DameModel,
    batch: &Batch,
    target: Option<&[SerializedPair]>,
    weights: &LossWeights,
    dropout_seed: Option<u64>,
) -> Result<(LossComponents, Vec<Mat>)> {
    let k = model.num_experts();
    let j = batch.domain_index;
    if j >= k {
        return Err(DameError::DomainOutOfRange { index: j, count: k });
    }
    if batch.is_empty() {
        return Err(DameError::Config("empty batch".into()));
    }
    if target.is_some() && model.discriminator.num_domains() != k + 1 {
        return Err(DameError::Config(
            "target adversarial batch requires a discriminator with K+1 outputs".into(),
        ));
    }
    for sp in batch.pairs.iter().chain(target.unwrap_or_default()) {
        model.check_input(sp)?;
    }
    let slots = slot_map(model);
    let b = batch.len() as f64;
    let mut items: Vec<(&SerializedPair, Option<u8>, usize, (f64, f64))> = batch
        .pairs
        .iter()
        .zip(&batch.labels)
        .map(|(sp, &y)| (sp, Some(y), j, (1.0 / b, 1.0 / b)))
        .collect();
    if let Some(t) = target {
        let bt = t.len() as f64;
        items.extend(t.iter().map(|sp| (sp, None, k, (0.0, 1.0 / bt))));
    }
    let results: Vec<SampleLoss> = items
        .par_iter()
        .enumerate()
        .map(|(i, &(sp, y, dom, scale))| {
            let seed = dropout_seed.map(|s| derive_indexed(s, i as u64));
            sample_objective(model, sp, y, dom, weights, scale, &slots, seed)
        })
        .collect();
    let mut grads = zero_grads(model);
    let mut comps = LossComponents::default();
    let n_src = batch.len();
    for (i, r) in results.iter().enumerate() {
        r.grads.add_into(&mut grads, 1.0);
        if i < n_src {
            comps.l1 += r.l1 / b;
            comps.l2 += r.l2 / b;
            comps.l3 += r.l3 / b;
            comps.l_d += r.l_d / b;
        } else {
            comps.l_d += r.l_d / (results.len() - n_src) as f64;
        }
    }
    Ok((comps, grads))
}

/// Discriminator-only gradient of `L_D`. Global embeddings are computed
/// first and enter the discriminator as constants.
pub fn discriminator_objective(
    model: &DameModel,
    batch: &Batch,
    target: Option<&[SerializedPair]>,
    dropout_seed: Option<u64>,
) -> Result<(f64, Vec<Mat>)> {
    let k = model.num_experts();
    let mut items: Vec<(&SerializedPair, usize, f64)> = batch
        .pairs
        .iter()
        .map(|sp| (sp, batch.domain_index, 1.0 / batch.len() as f64))
        .collect();
    if let Some(t) = target {
        items.extend(t.iter().map(|sp| (sp, k, 1.0 / t.len() as f64)));
    }
    for &(sp, dom, _) in &items {
        model.check_input(sp)?;
        if dom >= model.discriminator.num_domains() {
            return Err(DameError::LabelOutOfRange {
                label: dom,
                classes: model.discriminator.num_domains(),
            });
        }
    }
    let slots = slot_map(model);
    let results: Vec<(f64, SparseGrads)> = items
        .par_iter()
        .enumerate()
        .map(|(i, &(sp, dom, w))| {
            let mut rng = dropout_seed.map(|s| ChaCha8Rng::seed_from_u64(derive_indexed(s, i as u64)));
            let mut mode = match rng.as_mut() {
                Some(r) => Mode::Train(r),
                None => Mode::Eval,
            };
            let emb = {
                let mut g = Graph::new();
                let e = model.global.forward(&mut g, sp, &mut mode);
                g.value(e).clone()
            };
            let mut g = Graph::new();
            let x = g.constant(emb);
            let p = model.discriminator.apply(&mut g, x);
            let c = g.neg_log_pick(p, dom);
            let l = g.scale(c, w);
            (g.scalar(c) * w, g.backward(l, &slots))
        })
        .collect();
    let mut grads = zero_grads(model);
    let mut loss = 0.0;
    for (l, gr) in &results {
        loss += l;
        gr.add_into(&mut grads, 1.0);
    }
    Ok((loss, grads))
}

/// Gradient of `L_D` with respect to every tensor, through the global
/// encoder as well as the discriminator (eval mode).
pub fn domain_loss_gradient(
    model: &DameModel,
    pairs: &[SerializedPair],
    domain_label: usize,
) -> Result<(f64, Vec<Mat>)> {
    let n = model.discriminator.num_domains();
    if domain_label >= n {
        return Err(DameError::LabelOutOfRange {
            label: domain_label,
            classes: n,
        });
    }
    pairs.iter().try_for_each(|sp| model.check_input(sp))?;
    let slots = slot_map(model);
    let w = 1.0 / pairs.len().max(1) as f64;
    let mut grads = zero_grads(model);
    let mut loss = 0.0;
    for sp in pairs {
        let mut g = Graph::new();
        let e = model.global.forward(&mut g, sp, &mut Mode::Eval);
        let p = model.discriminator.apply(&mut g, e);
        let c = g.neg_log_pick(p, domain_label);
        let l = g.scale(c, w);
        loss += g.scalar(l);
        g.backward(l, &slots).add_into(&mut grads, 1.0);
    }
    Ok((loss, grads))
}

/// Stateful training loop; [`train_da`] drives it to completion.
pub struct Trainer {
    pub model: DameModel,
    pub config: TrainConfig,
    d_opt: Optimizer,
    m_opt: Optimizer,
    sampling: ChaCha8Rng,
    dropout_seed: u64,
    step: usize,
}

impl Trainer {
    pub fn new(model: DameModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let groups = model.groups();
        let is_d: Vec<bool> = groups.iter().map(|g| *g == ParamGroup::Discriminator).collect();
        let not_d: Vec<bool> = is_d.iter().map(|b| !b).collect();
        Ok(Trainer {
            d_opt: Optimizer::new(config.optimizer, config.learning_rate, is_d),
            m_opt: Optimizer::new(config.optimizer, config.learning_rate, not_d),
            sampling: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "sampling")),
            dropout_seed: derive_seed(config.seed, "dropout"),
            model,
            config,
            step: 0,
        })
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Steps per epoch: enough round-robin cycles for the largest source to
    /// be seen once in expectation.
    pub fn steps_per_epoch(&self, reg: &DomainRegistry) -> usize {
        let b = self.config.batch_size;
        let largest = reg.sources().iter().map(|s| s.train.len()).max().unwrap_or(0);
        largest.div_ceil(b).max(1) * reg.num_sources()
    }

    pub fn total_steps(&self, reg: &DomainRegistry) -> usize {
        let n = self.steps_per_epoch(reg) * self.config.epochs;
        self.config.max_steps.map_or(n, |m| m.min(n))
    }

    pub fn step(&mut self, reg: &DomainRegistry, tok: &Tokenizer) -> Result<StepLog> {
        let k = reg.num_sources();
        if k != self.model.num_experts() {
            return Err(DameError::Config(format!(
                "registry has {k} sources but the model has {} experts",
                self.model.num_experts()
            )));
        }
        let j = self.step % k;
        let n = reg.source(j)?.train.len();
        if n == 0 {
            return Err(DameError::Config(format!("source {j} has an empty training split")));
        }
        let b = self.config.batch_size.min(n);
        let batch = reg.sample_batch(j, b, tok, &mut self.sampling)?;
        let target = if self.config.use_target_in_adversarial {
            let nt = reg.target().train.len();
            if nt == 0 {
                return Err(DameError::Config("target training split is empty".into()));
            }
            Some(reg.sample_target(self.config.batch_size.min(nt), tok, &mut self.sampling)?)
        } else {
            None
        };
        for r in 0..self.config.alternation_ratio {
            self.d_step(&batch, target.as_deref(), r)?;
        }
        let comps = self.m_step(&batch, target.as_deref())?;
        let log = StepLog {
            step: self.step,
            domain: j,
            l1: comps.l1,
            l2: comps.l2,
            l3: comps.l3,
            l_d: comps.l_d,
            total: total_loss(comps.as_tuple(), &self.config.loss_weights),
        };
        self.step += 1;
        Ok(log)
    }
}

impl Trainer {
    fn step_seed(&self) -> u64 {
        derive_indexed(self.dropout_seed, self.step as u64)
    }

    /// One discriminator update on `L_D`; nothing outside the discriminator
    /// changes. `round` numbers the D-steps within the current step.
    pub fn d_step(&mut self, batch: &Batch, target: Option<&[SerializedPair]>, round: usize) -> Result<f64> {
        let seed = derive_indexed(self.step_seed(), 1 + round as u64);
        let (loss, grads) = discriminator_objective(&self.model, batch, target, Some(seed))?;
        self.d_opt.step(self.model.tensors_mut(), &grads);
        Ok(loss)
    }

    /// One update of every non-discriminator tensor on the weighted
    /// objective, with the discriminator held fixed.
    pub fn m_step(&mut self, batch: &Batch, target: Option<&[SerializedPair]>) -> Result<LossComponents> {
        let seed = derive_indexed(self.step_seed(), 0);
        let (comps, grads) = batch_objective(&self.model, batch, target, &self.config.loss_weights, Some(seed))?;
        self.m_opt.step(self.model.tensors_mut(), &grads);
        Ok(comps)
    }
}

/// Model configuration implied by a tokenizer, encoder settings and registry.
pub fn model_config_for(
    reg: &DomainRegistry,
    tok: &Tokenizer,
    encoder: &EncoderConfig,
    use_target_in_adversarial: bool,
) -> ModelConfig {
    let k = reg.num_sources();
    ModelConfig {
        encoder: EncoderConfig {
            vocab_size: tok.vocab.len(),
            max_len: tok.max_len,
            ..*encoder
        },
        num_experts: k,
        num_domains: if use_target_in_adversarial { k + 1 } else { k },
    }
}

pub struct TrainOutcome {
    pub model: DameModel,
    pub log: Vec<StepLog>,
}

/// Trains a freshly initialized model on the registry's sources. The
/// encoder's vocabulary size and max length are taken from `tok`; batches
/// larger than a source's training split are clamped to the split size.
pub fn train_da(
    reg: &DomainRegistry,
    tok: &Tokenizer,
    encoder: &EncoderConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let mc = model_config_for(reg, tok, encoder, cfg.use_target_in_adversarial);
    let model = DameModel::new(mc, derive_seed(cfg.seed, "init"))?;
    let mut trainer = Trainer::new(model, cfg.clone())?;
    let total = trainer.total_steps(reg);
    let mut log = Vec::with_capacity(total);
    for _ in 0..total {
        log.push(trainer.step(reg, tok)?);
    }
    Ok(TrainOutcome {
        model: trainer.model,
        log,
    })
}

/// Mean of `l1` over the first and last `window` log entries.
pub fn l1_trend(log: &[StepLog], window: usize) -> (f64, f64) {
    let w = window.min(log.len()).max(1);
    let avg = |s: &[StepLog]| s.iter().map(|l| l.l1).sum::<f64>() / s.len().max(1) as f64;
    (avg(&log[..w.min(log.len())]), avg(&log[log.len().saturating_sub(w)..]))
}

/// Embeddings of the global encoder for inspection: rows follow `pairs`.
pub fn global_embeddings(model: &DameModel, pairs: &[SerializedPair]) -> Result<Mat> {
    let rows = pairs
        .iter()
        .map(|sp| {
            model.check_input(sp)?;
            let mut g = Graph::new();
            let e = model.global.forward(&mut g, sp, &mut Mode::Eval);
            Ok(g.value(e).clone())
        })
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    ndarray::concatenate(Axis(0), &views).map_err(|e| DameError::Config(e.to_string()))
}
