//! Target-domain fine-tuning with frozen experts, and active-learning
//! selection under a labeling budget.

use std::str::FromStr;

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Mat, SparseGrads};
use crate::data::{DomainDataset, Split};
use crate::encoder::Mode;
use crate::error::{DameError, Result};
use crate::model::{forward, DameModel, ParamGroup};
use crate::optim::{Optimizer, OptimizerKind};
use crate::seed::{derive_indexed, derive_seed};
use crate::train::{slot_map, zero_grads};
use crate::vocab::{SerializedPair, Tokenizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    /// Fraction of the target training split to label, drawn at random.
    /// Ignored when `indices` is set; `None` with no indices uses all of it.
    pub fraction: Option<f64>,
    /// Explicit positions in the target training split.
    pub indices: Option<Vec<usize>>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            epochs: 10,
            fraction: None,
            indices: None,
            batch_size: 16,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(DameError::Config("finetune.batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(DameError::Config("finetune.learning_rate must be > 0".into()));
        }
        if let Some(f) = self.fraction {
            if !(0.0..=1.0).contains(&f) {
                return Err(DameError::Config("finetune.fraction must be in [0, 1]".into()));
            }
        }
        Ok(())
    }

    /// Positions of the target training split used for fine-tuning, sorted.
    pub fn selection(&self, pool_size: usize) -> Result<Vec<usize>> {
        self.validate()?;
        if let Some(idx) = &self.indices {
            let mut v = idx.clone();
            v.sort_unstable();
            v.dedup();
            if let Some(&bad) = v.iter().find(|&&i| i >= pool_size) {
                return Err(DameError::Config(format!(
                    "finetune index {bad} outside the target training split of {pool_size}"
                )));
            }
            return Ok(v);
        }
        let Some(f) = self.fraction else {
            return Ok((0..pool_size).collect());
        };
        let k = (f * pool_size as f64).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, "fraction"));
        let mut v = rand::seq::index::sample(&mut rng, pool_size, k).into_vec();
        v.sort_unstable();
        Ok(v)
    }
}

/// Parameter groups updated by fine-tuning.
pub fn finetune_trainable(group: ParamGroup) -> bool {
    matches!(
        group,
        ParamGroup::Global | ParamGroup::Attention | ParamGroup::FinalHead
    )
}

/// Fine-tunes the global encoder, attention and final head on labeled
/// target training pairs; every other tensor is left bit-for-bit intact.
/// Expert embeddings are computed once in eval mode since experts are frozen.
/// Returns the mean loss of each epoch.
pub fn finetune(
    model: &mut DameModel,
    target: &DomainDataset,
    tok: &Tokenizer,
    cfg: &FinetuneConfig,
) -> Result<Vec<f64>> {
    let selection = cfg.selection(target.train.len())?;
    let refs = target.split(Split::Train);
    let mut items = Vec::with_capacity(selection.len());
    for &i in &selection {
        let label = refs[i].label.ok_or(DameError::Unlabeled(i))?;
        items.push((tok.encode_pair(&target.record_pair(&refs[i]))?, label));
    }
    finetune_pairs(model, &items, cfg)
}

/// [`finetune`] over already encoded `(pair, label)` items.
pub fn finetune_pairs(model: &mut DameModel, items: &[(SerializedPair, u8)], cfg: &FinetuneConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if items.is_empty() || cfg.epochs == 0 {
        return Ok(Vec::new());
    }
    for (sp, y) in items {
        model.check_input(sp)?;
        if *y > 1 {
            return Err(DameError::LabelOutOfRange {
                label: usize::from(*y),
                classes: 2,
            });
        }
    }
    let cached: Vec<Mat> = items
        .par_iter()
        .map(|(sp, _)| crate::model::extract_features(model, sp, &mut Mode::Eval).map(|fs| fs.expert_embs))
        .collect::<Result<_>>()?;
    let trainable: Vec<bool> = model.groups().into_iter().map(finetune_trainable).collect();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, trainable);
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "finetune"));
    let dropout = derive_seed(cfg.seed, "dropout");
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let slots = slot_map(model);
            let step_seed = derive_indexed(dropout, step);
            let scale = 1.0 / chunk.len() as f64;
            let m: &DameModel = model;
            let results: Vec<(f64, SparseGrads)> = chunk
                .par_iter()
                .map(|&i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_indexed(step_seed, i as u64));
                    let mut mode = Mode::Train(&mut rng);
                    let mut g = Graph::new();
                    let global = m.global.forward(&mut g, &items[i].0, &mut mode);
                    let experts: Vec<_> = cached[i]
                        .axis_iter(Axis(0))
                        .map(|row| g.constant(row.insert_axis(Axis(0)).to_owned()))
                        .collect();
                    let (fused, _) = m.att.apply(&mut g, global, &experts);
                    let p = m.final_probs(&mut g, fused);
                    let c = g.neg_log_pick(p, usize::from(items[i].1));
                    let l = g.scale(c, scale);
                    (g.scalar(c), g.backward(l, &slots))
                })
                .collect();
            let mut grads = zero_grads(model);
            for (l, gr) in &results {
                total += l;
                gr.add_into(&mut grads, 1.0);
            }
            opt.step(model.tensors_mut(), &grads);
            step += 1;
        }
        epoch_losses.push(total / items.len() as f64);
    }
    Ok(epoch_losses)
}

/// Eval-mode match probabilities for every pool item.
pub fn confidence_scores(model: &DameModel, pool: &[SerializedPair]) -> Result<Vec<[f64; 2]>> {
    pool.iter().try_for_each(|sp| model.check_input(sp))?;
    pool.par_iter().map(|sp| forward(model, sp, &mut Mode::Eval)).collect()
}

/// `T` train-mode passes over the pool; result is indexed `[pass][item]`.
/// Item `i` of pass `t` draws dropout from `derive_indexed(derive_indexed(seed, t), i)`.
pub fn mc_predictions(
    model: &DameModel,
    pool: &[SerializedPair],
    passes: usize,
    seed: u64,
) -> Result<Vec<Vec<[f64; 2]>>> {
    pool.iter().try_for_each(|sp| model.check_input(sp))?;
    (0..passes)
        .map(|t| {
            let pass_seed = derive_indexed(seed, t as u64);
            pool.par_iter()
                .enumerate()
                .map(|(i, sp)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_indexed(pass_seed, i as u64));
                    forward(model, sp, &mut Mode::Train(&mut rng))
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    LeastConfidence,
    Entropy,
    Usde,
    Bald,
    KCentersGreedy,
    KMeans,
    CoreSet,
}

impl Strategy {
    pub const ALL: [Strategy; 8] = [
        Strategy::Random,
        Strategy::LeastConfidence,
        Strategy::Entropy,
        Strategy::Usde,
        Strategy::Bald,
        Strategy::KCentersGreedy,
        Strategy::KMeans,
        Strategy::CoreSet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::LeastConfidence => "least_confidence",
            Strategy::Entropy => "entropy",
            Strategy::Usde => "usde",
            Strategy::Bald => "bald",
            Strategy::KCentersGreedy => "k_centers_greedy",
            Strategy::KMeans => "k_means",
            Strategy::CoreSet => "core_set",
        }
    }

    pub fn is_confidence_based(self) -> bool {
        matches!(
            self,
            Strategy::LeastConfidence | Strategy::Entropy | Strategy::Usde | Strategy::Bald
        )
    }

    pub fn needs_mc(self) -> bool {
        matches!(self, Strategy::Usde | Strategy::Bald)
    }
}

impl FromStr for Strategy {
    type Err = DameError;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| DameError::Config(format!("unknown strategy `{s}`")))
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlRequest {
    pub strategy: Strategy,
    pub budget: usize,
    pub mc_passes: usize,
    pub seed: u64,
}

impl Default for AlRequest {
    fn default() -> Self {
        AlRequest {
            strategy: Strategy::Random,
            budget: 0,
            mc_passes: 10,
            seed: 0,
        }
    }
}

impl AlRequest {
    pub fn validate(&self, pool_size: usize) -> Result<()> {
        if self.budget > pool_size {
            return Err(DameError::BudgetTooLarge {
                budget: self.budget,
                pool: pool_size,
            });
        }
        if self.strategy.needs_mc() && self.mc_passes < 2 {
            return Err(DameError::Config(format!(
                "{} needs at least 2 MC passes",
                self.strategy
            )));
        }
        Ok(())
    }
}

/// Result written by `select-al` and read by `finetune --indices`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub strategy: Strategy,
    pub budget: usize,
    pub indices: Vec<usize>,
}

/// Indices of the `b` largest scores, ties to the smaller index, sorted.
pub fn top_b(scores: &[f64], b: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    let mut out: Vec<usize> = order.into_iter().take(b).collect();
    out.sort_unstable();
    out
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// Negated max-class probability: larger means less confident.
pub fn least_confidence_scores(probs: &[[f64; 2]]) -> Vec<f64> {
    probs.iter().map(|p| -p[0].max(p[1])).collect()
}

pub fn entropy_scores(probs: &[[f64; 2]]) -> Vec<f64> {
    probs.iter().map(|p| entropy(p)).collect()
}

fn check_mc(mc: &[Vec<[f64; 2]>]) -> Result<usize> {
    let n = mc.first().map_or(0, Vec::len);
    if mc.len() < 2 {
        return Err(DameError::Config("MC scoring needs at least 2 passes".into()));
    }
    if let Some(p) = mc.iter().find(|p| p.len() != n) {
        return Err(DameError::LengthMismatch {
            left: n,
            right: p.len(),
        });
    }
    Ok(n)
}

/// Variance of the match probability across passes.
pub fn usde_scores(mc: &[Vec<[f64; 2]>]) -> Result<Vec<f64>> {
    let n = check_mc(mc)?;
    let t = mc.len() as f64;
    Ok((0..n)
        .map(|i| {
            let mean = mc.iter().map(|p| p[i][1]).sum::<f64>() / t;
            mc.iter().map(|p| (p[i][1] - mean).powi(2)).sum::<f64>() / t
        })
        .collect())
}

/// Entropy of the mean prediction minus the mean per-pass entropy.
pub fn bald_scores(mc: &[Vec<[f64; 2]>]) -> Result<Vec<f64>> {
    let n = check_mc(mc)?;
    let t = mc.len() as f64;
    Ok((0..n)
        .map(|i| {
            let m0 = mc.iter().map(|p| p[i][0]).sum::<f64>() / t;
            let m1 = mc.iter().map(|p| p[i][1]).sum::<f64>() / t;
            let mean_h = mc.iter().map(|p| entropy(&p[i])).sum::<f64>() / t;
            entropy(&[m0, m1]) - mean_h
        })
        .collect())
}

fn dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Greedy farthest-point selection of `b` centers starting from `start`.
/// Ties go to the smaller index.
pub fn greedy_k_center(points: &Mat, b: usize, start: usize) -> Vec<usize> {
    let n = points.nrows();
    if b == 0 || n == 0 {
        return Vec::new();
    }
    let mut centers = vec![start];
    let mut nearest: Vec<f64> = (0..n).map(|i| dist(points.row(i), points.row(start))).collect();
    while centers.len() < b.min(n) {
        let mut best = usize::MAX;
        for i in 0..n {
            if centers.contains(&i) {
                continue;
            }
            if best == usize::MAX || nearest[i] > nearest[best] {
                best = i;
            }
        }
        centers.push(best);
        for i in 0..n {
            nearest[i] = nearest[i].min(dist(points.row(i), points.row(best)));
        }
    }
    centers.sort_unstable();
    centers
}

/// Largest distance from any point to its nearest center.
pub fn covering_radius(points: &Mat, centers: &[usize]) -> f64 {
    points
        .axis_iter(Axis(0))
        .map(|p| {
            centers
                .iter()
                .map(|&c| dist(p, points.row(c)))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

fn nearest_to(points: &Mat, target: ndarray::ArrayView1<f64>, exclude: &[usize]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.axis_iter(Axis(0)).enumerate() {
        if exclude.contains(&i) {
            continue;
        }
        let d = dist(p, target);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

/// Greedy k-center started from a seeded random point.
pub fn k_centers_greedy(points: &Mat, b: usize, seed: u64) -> Vec<usize> {
    if b == 0 || points.nrows() == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rand::Rng::gen_range(&mut rng, 0..points.nrows());
    greedy_k_center(points, b, start)
}

/// Greedy k-center started from the point nearest the pool centroid.
pub fn core_set(points: &Mat, b: usize) -> Vec<usize> {
    let Some(centroid) = points.mean_axis(Axis(0)) else {
        return Vec::new();
    };
    match nearest_to(points, centroid.view(), &[]) {
        Some(start) if b > 0 => greedy_k_center(points, b, start),
        _ => Vec::new(),
    }
}

pub const KMEANS_MAX_ITERS: usize = 50;

/// Lloyd's k-means with `b` clusters initialized at distinct random points;
/// returns, for each centroid in turn, the nearest point not yet taken.
pub fn k_means(points: &Mat, b: usize, seed: u64) -> Vec<usize> {
    let n = points.nrows();
    if b == 0 || n == 0 {
        return Vec::new();
    }
    let b = b.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = rand::seq::index::sample(&mut rng, n, b).into_vec();
    let mut centroids: Mat = points.select(Axis(0), &init);
    let mut assign = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for (i, p) in points.axis_iter(Axis(0)).enumerate() {
            let c = nearest_to(&centroids, p, &[]).expect("non-empty centroids");
            if assign[i] != c {
                assign[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for c in 0..b {
            let members: Vec<usize> = (0..n).filter(|&i| assign[i] == c).collect();
            if !members.is_empty() {
                let mean = points.select(Axis(0), &members).mean_axis(Axis(0)).expect("non-empty");
                centroids.row_mut(c).assign(&mean);
            }
        }
    }
    let mut chosen = Vec::with_capacity(b);
    for c in centroids.axis_iter(Axis(0)) {
        if let Some(i) = nearest_to(points, c, &chosen) {
            chosen.push(i);
        }
    }
    chosen.sort_unstable();
    chosen
}

/// Eval-mode fused embeddings of the pool, one row per item.
pub fn pool_embeddings(model: &DameModel, pool: &[SerializedPair]) -> Result<Mat> {
    pool.iter().try_for_each(|sp| model.check_input(sp))?;
    let rows = pool
        .par_iter()
        .map(|sp| model.fused_embedding(sp))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Mat::zeros((rows.len(), model.dim()));
    for (i, r) in rows.iter().enumerate() {
        out.row_mut(i).assign(r);
    }
    Ok(out)
}

/// Picks `req.budget` pool items to label; the result is sorted.
pub fn select_al(model: &DameModel, pool: &[SerializedPair], req: &AlRequest) -> Result<Vec<usize>> {
    req.validate(pool.len())?;
    let b = req.budget;
    let seed = derive_seed(req.seed, "al");
    Ok(match req.strategy {
        Strategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut v = rand::seq::index::sample(&mut rng, pool.len(), b).into_vec();
            v.sort_unstable();
            v
        }
        Strategy::LeastConfidence => top_b(&least_confidence_scores(&confidence_scores(model, pool)?), b),
        Strategy::Entropy => top_b(&entropy_scores(&confidence_scores(model, pool)?), b),
        Strategy::Usde => top_b(&usde_scores(&mc_predictions(model, pool, req.mc_passes, seed)?)?, b),
        Strategy::Bald => top_b(&bald_scores(&mc_predictions(model, pool, req.mc_passes, seed)?)?, b),
        Strategy::KCentersGreedy => k_centers_greedy(&pool_embeddings(model, pool)?, b, seed),
        Strategy::KMeans => k_means(&pool_embeddings(model, pool)?, b, seed),
        Strategy::CoreSet => core_set(&pool_embeddings(model, pool)?, b),
    })
}
