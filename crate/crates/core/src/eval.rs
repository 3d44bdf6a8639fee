//! Prediction, match-class metrics, expert-subset ablation and embedding export.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::Mode;
use crate::error::{DameError, Result};
use crate::model::{global_predict, DameModel};
use crate::vocab::SerializedPair;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl MetricReport {
    /// Metrics for the match class; zero denominators give 0.
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
        MetricReport {
            precision,
            recall,
            f1,
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
            tp,
            fp,
            tn,
            fn_,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: u8,
    pub prob_match: f64,
}

impl Prediction {
    pub fn from_probs(p: [f64; 2]) -> Self {
        Prediction {
            label: u8::from(p[1] > p[0]),
            prob_match: p[1],
        }
    }
}

pub fn evaluate(preds: &[u8], gold: &[u8]) -> Result<MetricReport> {
    if preds.len() != gold.len() {
        return Err(DameError::LengthMismatch {
            left: preds.len(),
            right: gold.len(),
        });
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (i, (&p, &g)) in preds.iter().zip(gold).enumerate() {
        match (p, g) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 0) => tn += 1,
            (0, 1) => fn_ += 1,
            _ => {
                return Err(DameError::Config(format!(
                    "item {i}: labels must be 0 or 1, got prediction {p} and gold {g}"
                )))
            }
        }
    }
    Ok(MetricReport::from_counts(tp, fp, tn, fn_))
}

fn check_all(model: &DameModel, pairs: &[SerializedPair]) -> Result<()> {
    pairs.iter().try_for_each(|sp| model.check_input(sp))
}

/// Eval-mode predictions from the experts in `subset` (all experts when
/// `None`).
pub fn predict_subset(
    model: &DameModel,
    pairs: &[SerializedPair],
    subset: Option<&[usize]>,
) -> Result<Vec<Prediction>> {
    let all: Vec<usize> = (0..model.num_experts()).collect();
    let subset = subset.unwrap_or(&all);
    if let Some(&bad) = subset.iter().find(|&&i| i >= model.num_experts()) {
        return Err(DameError::DomainOutOfRange {
            index: bad,
            count: model.num_experts(),
        });
    }
    check_all(model, pairs)?;
    pairs
        .par_iter()
        .map(|sp| {
            Ok(Prediction::from_probs(model.forward_subset(
                sp,
                subset,
                &mut Mode::Eval,
            )?))
        })
        .collect()
}

pub fn predict(model: &DameModel, pairs: &[SerializedPair]) -> Result<Vec<Prediction>> {
    predict_subset(model, pairs, None)
}

pub fn labels_of(preds: &[Prediction]) -> Vec<u8> {
    preds.iter().map(|p| p.label).collect()
}

pub fn evaluate_model(model: &DameModel, pairs: &[SerializedPair], gold: &[u8]) -> Result<MetricReport> {
    evaluate(&labels_of(&predict(model, pairs)?), gold)
}

pub fn evaluate_expert_subset(
    model: &DameModel,
    pairs: &[SerializedPair],
    gold: &[u8],
    subset: &[usize],
) -> Result<MetricReport> {
    evaluate(&labels_of(&predict_subset(model, pairs, Some(subset))?), gold)
}

pub fn global_only_predict(model: &DameModel, pairs: &[SerializedPair]) -> Result<Vec<Prediction>> {
    check_all(model, pairs)?;
    pairs
        .par_iter()
        .map(|sp| Ok(Prediction::from_probs(global_predict(model, sp, &mut Mode::Eval)?)))
        .collect()
}

pub fn global_only_evaluate(model: &DameModel, pairs: &[SerializedPair], gold: &[u8]) -> Result<MetricReport> {
    evaluate(&labels_of(&global_only_predict(model, pairs)?), gold)
}

/// Writes `id,label,e0..e{d-1}` rows of eval-mode fused embeddings. Ids are
/// the pair positions; a withheld label is written as an empty cell.
pub fn export_embeddings(
    model: &DameModel,
    pairs: &[SerializedPair],
    labels: &[Option<u8>],
    path: &Path,
) -> Result<()> {
    if pairs.len() != labels.len() {
        return Err(DameError::LengthMismatch {
            left: pairs.len(),
            right: labels.len(),
        });
    }
    check_all(model, pairs)?;
    let embs = pairs
        .par_iter()
        .map(|sp| model.fused_embedding(sp))
        .collect::<Result<Vec<_>>>()?;
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..model.dim()).map(|k| format!("e{k}")));
    w.write_record(&header)?;
    for (i, (e, l)) in embs.iter().zip(labels).enumerate() {
        let mut row = vec![i.to_string(), l.map(|l| l.to_string()).unwrap_or_default()];
        row.extend(e.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
