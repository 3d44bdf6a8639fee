//! The composed matcher: K expert encoders and a global encoder, attention
//! over expert embeddings with the global embedding as query, classification
//! heads and the domain discriminator.
//!
//! Attention: with global embedding `g` and expert embedding matrix `E`
//! (K×d), `α = gᵀQ`, `𝒦 = E·K_e`, `𝒱 = E·V` and the fused vector is
//! `softmax(α𝒦ᵀ/√d)·𝒱`. The fused vector alone feeds the final head.

use ndarray::{Array1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Mat, Var};
use crate::encoder::{init_encoder, linear, uniform, EncoderConfig, EncoderParams, Mode};
use crate::error::{DameError, Result};
use crate::seed::derive_seed;
use crate::vocab::SerializedPair;

/// Architecture description stored with checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub num_experts: usize,
    /// `num_experts`, or `num_experts + 1` when the target domain takes part
    /// in adversarial training.
    pub num_domains: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.num_experts == 0 {
            return Err(DameError::Config("model needs at least one expert".into()));
        }
        if self.num_domains != self.num_experts && self.num_domains != self.num_experts + 1 {
            return Err(DameError::Config(format!(
                "num_domains must be {} or {}, got {}",
                self.num_experts,
                self.num_experts + 1,
                self.num_domains
            )));
        }
        Ok(())
    }
}

/// Linear layer `x·W + b` with `W` of shape in×out.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Mat,
    pub b: Mat,
}

impl Linear {
    fn init(inp: usize, out: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            w: uniform(inp, out, inp, rng),
            b: Mat::zeros((1, out)),
        }
    }

    fn apply<'a>(&'a self, g: &mut Graph<'a>, x: Var) -> Var {
        linear(g, x, &self.w, &self.b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub q: Mat,
    pub k: Mat,
    pub v: Mat,
}

impl AttentionParams {
    pub fn identity(d: usize) -> Self {
        AttentionParams {
            q: Mat::eye(d),
            k: Mat::eye(d),
            v: Mat::eye(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    /// Records attention over `experts` (each 1×d) queried by `global` (1×d).
    /// Returns the fused 1×d vector and, when any experts are present, the
    /// 1×K weight row.
    pub fn apply<'a>(&'a self, g: &mut Graph<'a>, global: Var, experts: &[Var]) -> (Var, Option<Var>) {
        let v = g.param(&self.v);
        if experts.is_empty() {
            return (g.matmul(global, v), None);
        }
        let e = if experts.len() == 1 {
            experts[0]
        } else {
            g.concat_rows(experts)
        };
        let q = g.param(&self.q);
        let k = g.param(&self.k);
        let alpha = g.matmul(global, q);
        let keys = g.matmul(e, k);
        let values = g.matmul(e, v);
        let scores = g.matmul_t(alpha, keys);
        let scores = g.scale(scores, 1.0 / (self.dim() as f64).sqrt());
        let w = g.softmax(scores);
        (g.matmul(w, values), Some(w))
    }
}

/// Two-layer domain classifier: linear d→d, tanh, linear d→n_domains.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub hidden: Linear,
    pub out: Linear,
}

impl Discriminator {
    pub fn apply<'a>(&'a self, g: &mut Graph<'a>, x: Var) -> Var {
        let h = self.hidden.apply(g, x);
        let h = g.tanh(h);
        let logits = self.out.apply(g, h);
        g.softmax(logits)
    }

    pub fn num_domains(&self) -> usize {
        self.out.w.ncols()
    }
}

/// Which part of the model a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Expert(usize),
    ExpertHead(usize),
    Global,
    GlobalHead,
    Attention,
    FinalHead,
    Discriminator,
}

impl ParamGroup {
    pub fn is_expert(self) -> bool {
        matches!(self, ParamGroup::Expert(_) | ParamGroup::ExpertHead(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DameModel {
    pub config: ModelConfig,
    pub experts: Vec<EncoderParams>,
    pub global: EncoderParams,
    pub att: AttentionParams,
    pub expert_heads: Vec<Linear>,
    pub global_head: Linear,
    pub final_head: Linear,
    pub discriminator: Discriminator,
}

/// Expert embeddings (K×d, row i from expert i) and the global embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub expert_embs: Mat,
    pub global_emb: Array1<f64>,
}

/// Graph handles for one pass through the feature extractor.
pub struct FeatureVars {
    /// Indexed by expert; `None` for experts that were not evaluated.
    pub experts: Vec<Option<Var>>,
    pub global: Var,
}

impl DameModel {
    /// Randomly initialized model. Expert `i` is seeded from
    /// `derive_seed(seed, "expert{i}")`, the global encoder from
    /// `derive_seed(seed, "global")`, and so on.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.encoder.d;
        let experts = (0..config.num_experts)
            .map(|i| init_encoder(&config.encoder, derive_seed(seed, &format!("expert{i}"))))
            .collect::<Result<Vec<_>>>()?;
        let global = init_encoder(&config.encoder, derive_seed(seed, "global"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "heads"));
        let att = AttentionParams {
            q: uniform(d, d, d, &mut rng),
            k: uniform(d, d, d, &mut rng),
            v: uniform(d, d, d, &mut rng),
        };
        let expert_heads = (0..config.num_experts).map(|_| Linear::init(d, 2, &mut rng)).collect();
        let global_head = Linear::init(d, 2, &mut rng);
        let final_head = Linear::init(d, 2, &mut rng);
        let discriminator = Discriminator {
            hidden: Linear::init(d, d, &mut rng),
            out: Linear::init(d, config.num_domains, &mut rng),
        };
        Ok(DameModel {
            config,
            experts,
            global,
            att,
            expert_heads,
            global_head,
            final_head,
            discriminator,
        })
    }

    pub fn num_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn dim(&self) -> usize {
        self.config.encoder.d
    }

    /// Every tensor with its checkpoint name and group, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, ParamGroup, &Mat)> {
        let mut out = Vec::new();
        for (i, e) in self.experts.iter().enumerate() {
            for (n, t) in e.named_tensors() {
                out.push((format!("expert{i}.{n}"), ParamGroup::Expert(i), t));
            }
        }
        for (n, t) in self.global.named_tensors() {
            out.push((format!("global.{n}"), ParamGroup::Global, t));
        }
        out.push(("att.q".into(), ParamGroup::Attention, &self.att.q));
        out.push(("att.k".into(), ParamGroup::Attention, &self.att.k));
        out.push(("att.v".into(), ParamGroup::Attention, &self.att.v));
        for (i, h) in self.expert_heads.iter().enumerate() {
            out.push((format!("expert_head{i}.w"), ParamGroup::ExpertHead(i), &h.w));
            out.push((format!("expert_head{i}.b"), ParamGroup::ExpertHead(i), &h.b));
        }
        out.push(("global_head.w".into(), ParamGroup::GlobalHead, &self.global_head.w));
        out.push(("global_head.b".into(), ParamGroup::GlobalHead, &self.global_head.b));
        out.push(("final_head.w".into(), ParamGroup::FinalHead, &self.final_head.w));
        out.push(("final_head.b".into(), ParamGroup::FinalHead, &self.final_head.b));
        let dsc = &self.discriminator;
        out.push(("disc.hidden.w".into(), ParamGroup::Discriminator, &dsc.hidden.w));
        out.push(("disc.hidden.b".into(), ParamGroup::Discriminator, &dsc.hidden.b));
        out.push(("disc.out.w".into(), ParamGroup::Discriminator, &dsc.out.w));
        out.push(("disc.out.b".into(), ParamGroup::Discriminator, &dsc.out.b));
        out
    }

    /// Mutable tensors in the same order as [`DameModel::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = Vec::new();
        for e in &mut self.experts {
            out.extend(e.tensors_mut());
        }
        out.extend(self.global.tensors_mut());
        out.extend([&mut self.att.q, &mut self.att.k, &mut self.att.v]);
        for h in &mut self.expert_heads {
            out.extend([&mut h.w, &mut h.b]);
        }
        out.extend([&mut self.global_head.w, &mut self.global_head.b]);
        out.extend([&mut self.final_head.w, &mut self.final_head.b]);
        let dsc = &mut self.discriminator;
        out.extend([&mut dsc.hidden.w, &mut dsc.hidden.b, &mut dsc.out.w, &mut dsc.out.b]);
        out
    }

    pub fn groups(&self) -> Vec<ParamGroup> {
        self.named_tensors().into_iter().map(|(_, g, _)| g).collect()
    }

    pub fn check_input(&self, sp: &SerializedPair) -> Result<()> {
        self.global.check_input(sp)
    }

    /// Runs the global encoder and the experts selected by `include`.
    /// Encoders run in index order, global last, so dropout draws are
    /// reproducible for a given rng.
    pub fn features_graph<'a>(
        &'a self,
        g: &mut Graph<'a>,
        sp: &SerializedPair,
        mode: &mut Mode<'_>,
        include: impl Fn(usize) -> bool,
    ) -> FeatureVars {
        let experts = self
            .experts
            .iter()
            .enumerate()
            .map(|(i, e)| include(i).then(|| e.forward(g, sp, mode)))
            .collect();
        let global = self.global.forward(g, sp, mode);
        FeatureVars { experts, global }
    }

    /// Final-head match probabilities from experts in `subset` (ascending
    /// order of the expert indices as given).
    pub fn fused_graph<'a>(&'a self, g: &mut Graph<'a>, fv: &FeatureVars, subset: &[usize]) -> (Var, Option<Var>) {
        let rows: Vec<Var> = subset
            .iter()
            .map(|&i| fv.experts[i].expect("expert evaluated"))
            .collect();
        self.att.apply(g, fv.global, &rows)
    }

    pub fn final_probs<'a>(&'a self, g: &mut Graph<'a>, fused: Var) -> Var {
        let logits = self.final_head.apply(g, fused);
        g.softmax(logits)
    }

    pub fn expert_probs<'a>(&'a self, g: &mut Graph<'a>, i: usize, emb: Var) -> Var {
        let logits = self.expert_heads[i].apply(g, emb);
        g.softmax(logits)
    }

    pub fn global_probs<'a>(&'a self, g: &mut Graph<'a>, emb: Var) -> Var {
        let logits = self.global_head.apply(g, emb);
        g.softmax(logits)
    }

    fn check_expert(&self, i: usize) -> Result<()> {
        if i >= self.num_experts() {
            return Err(DameError::DomainOutOfRange {
                index: i,
                count: self.num_experts(),
            });
        }
        Ok(())
    }

    fn check_subset(&self, subset: &[usize]) -> Result<()> {
        for &i in subset {
            self.check_expert(i)?;
        }
        let mut s = subset.to_vec();
        s.sort_unstable();
        s.dedup();
        if s.len() != subset.len() {
            return Err(DameError::Config("expert subset has duplicates".into()));
        }
        Ok(())
    }

    /// Match probabilities and attention weights using only the experts in `subset`.
    pub fn forward_subset_detailed(
        &self,
        sp: &SerializedPair,
        subset: &[usize],
        mode: &mut Mode<'_>,
    ) -> Result<(Array1<f64>, Array1<f64>, Array1<f64>)> {
        self.check_input(sp)?;
        self.check_subset(subset)?;
        let mut g = Graph::new();
        let fv = self.features_graph(&mut g, sp, mode, |i| subset.contains(&i));
        let (fused, w) = self.fused_graph(&mut g, &fv, subset);
        let probs = self.final_probs(&mut g, fused);
        let weights = w
            .map(|w| g.value(w).row(0).to_owned())
            .unwrap_or_else(|| Array1::zeros(0));
        Ok((
            g.value(probs).row(0).to_owned(),
            weights,
            g.value(fused).row(0).to_owned(),
        ))
    }

    pub fn forward_subset(&self, sp: &SerializedPair, subset: &[usize], mode: &mut Mode<'_>) -> Result<[f64; 2]> {
        self.forward_subset_detailed(sp, subset, mode)
            .map(|(p, _, _)| [p[0], p[1]])
    }

    /// Fused (attention-pooled) embedding in eval mode.
    pub fn fused_embedding(&self, sp: &SerializedPair) -> Result<Array1<f64>> {
        let all: Vec<usize> = (0..self.num_experts()).collect();
        self.forward_subset_detailed(sp, &all, &mut Mode::Eval)
            .map(|(_, _, f)| f)
    }
}

pub fn extract_features(model: &DameModel, sp: &SerializedPair, mode: &mut Mode<'_>) -> Result<FeatureSet> {
    model.check_input(sp)?;
    let mut g = Graph::new();
    let fv = model.features_graph(&mut g, sp, mode, |_| true);
    let rows: Vec<_> = fv
        .experts
        .iter()
        .map(|v| g.value(v.expect("all experts")).view())
        .collect();
    let expert_embs = ndarray::concatenate(Axis(0), &rows).expect("equal widths");
    Ok(FeatureSet {
        expert_embs,
        global_emb: g.value(fv.global).row(0).to_owned(),
    })
}

/// Attention over a precomputed feature set: returns (fused, weights).
pub fn attend(att: &AttentionParams, fs: &FeatureSet) -> (Array1<f64>, Array1<f64>) {
    let mut g = Graph::new();
    let global = g.constant(fs.global_emb.clone().insert_axis(Axis(0)));
    let rows: Vec<Var> = fs
        .expert_embs
        .rows()
        .into_iter()
        .map(|r| g.constant(r.to_owned().insert_axis(Axis(0))))
        .collect();
    let (fused, w) = att.apply(&mut g, global, &rows);
    let weights = w
        .map(|w| g.value(w).row(0).to_owned())
        .unwrap_or_else(|| Array1::zeros(0));
    (g.value(fused).row(0).to_owned(), weights)
}

/// Match probabilities `[p(non-match), p(match)]` from the full model.
pub fn forward(model: &DameModel, sp: &SerializedPair, mode: &mut Mode<'_>) -> Result<[f64; 2]> {
    let all: Vec<usize> = (0..model.num_experts()).collect();
    model.forward_subset(sp, &all, mode)
}

/// Forward pass with expert `j` left out of the attention pool.
pub fn meta_forward(model: &DameModel, sp: &SerializedPair, j: usize, mode: &mut Mode<'_>) -> Result<[f64; 2]> {
    model.check_expert(j)?;
    let rest: Vec<usize> = (0..model.num_experts()).filter(|&i| i != j).collect();
    model.forward_subset(sp, &rest, mode)
}

pub fn discriminate(model: &DameModel, global_emb: &Array1<f64>) -> Array1<f64> {
    let mut g = Graph::new();
    let x = g.constant(global_emb.clone().insert_axis(Axis(0)));
    let p = model.discriminator.apply(&mut g, x);
    g.value(p).row(0).to_owned()
}

pub fn expert_predict(model: &DameModel, i: usize, sp: &SerializedPair, mode: &mut Mode<'_>) -> Result<[f64; 2]> {
    model.check_expert(i)?;
    model.check_input(sp)?;
    let mut g = Graph::new();
    let e = model.experts[i].forward(&mut g, sp, mode);
    let p = model.expert_probs(&mut g, i, e);
    let v = g.value(p);
    Ok([v[[0, 0]], v[[0, 1]]])
}

pub fn global_predict(model: &DameModel, sp: &SerializedPair, mode: &mut Mode<'_>) -> Result<[f64; 2]> {
    model.check_input(sp)?;
    let mut g = Graph::new();
    let e = model.global.forward(&mut g, sp, mode);
    let p = model.global_probs(&mut g, e);
    let v = g.value(p);
    Ok([v[[0, 0]], v[[0, 1]]])
}
