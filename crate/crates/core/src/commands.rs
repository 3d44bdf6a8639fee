//! The operations behind the `dame` subcommands, usable without the binary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adapt::{finetune, select_al, AlRequest, FinetuneConfig, Selection};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::data::{load_domain, DomainDataset, DomainRegistry, Split};
use crate::error::{DameError, Result};
use crate::eval::{evaluate, export_embeddings, global_only_predict, predict_subset, MetricReport, Prediction};
use crate::train::{train_da, StepLog};
use crate::vocab::{build_vocab, Tokenizer};

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";

/// A labeling budget: an absolute count, or a fraction of the pool when
/// written with a decimal point (`0.25`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    Count(usize),
    Fraction(f64),
}

impl Budget {
    pub fn resolve(self, pool: usize) -> Result<usize> {
        let b = match self {
            Budget::Count(n) => n,
            Budget::Fraction(f) => (f * pool as f64).round() as usize,
        };
        if b > pool {
            return Err(DameError::BudgetTooLarge { budget: b, pool });
        }
        Ok(b)
    }
}

impl FromStr for Budget {
    type Err = DameError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || DameError::Config(format!("invalid budget `{s}`"));
        if s.contains('.') {
            let f: f64 = s.parse().map_err(|_| bad())?;
            if !(0.0..=1.0).contains(&f) {
                return Err(DameError::Config(format!("budget fraction {f} outside [0, 1]")));
            }
            Ok(Budget::Fraction(f))
        } else {
            Ok(Budget::Count(s.parse().map_err(|_| bad())?))
        }
    }
}

/// Where a command reads its pairs from: a domain directory, or the target
/// of a registry.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Dir(PathBuf),
    RegistryTarget(PathBuf),
}

impl DatasetSource {
    pub fn load(&self) -> Result<DomainDataset> {
        match self {
            DatasetSource::Dir(p) => load_domain(p),
            DatasetSource::RegistryTarget(p) => Ok(DomainRegistry::load(p)?.target().clone()),
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub struct TrainSummary {
    pub steps: usize,
    pub vocab_size: usize,
    pub log: Vec<StepLog>,
}

/// Trains from `cfg.registry` and writes the checkpoint, the JSON-lines log
/// and the resolved configuration into `out`.
pub fn train_da_command(cfg: &RunConfig, out: &Path) -> Result<TrainSummary> {
    cfg.validate()?;
    let registry = cfg
        .registry
        .as_ref()
        .ok_or_else(|| DameError::Config("no registry given".into()))?;
    let reg = DomainRegistry::load(registry)?;
    let vocab = build_vocab(&reg.corpus()?, cfg.vocab_min_count)?;
    let tok = Tokenizer::new(vocab, cfg.encoder.max_len);
    let outcome = train_da(&reg, &tok, &cfg.encoder, &cfg.train)?;
    fs::create_dir_all(out)?;
    save_checkpoint(out, &outcome.model, &cfg.train, outcome.log.len(), &tok.vocab)?;
    let mut log = fs::File::create(out.join(TRAIN_LOG_FILE))?;
    for entry in &outcome.log {
        writeln!(log, "{}", serde_json::to_string(entry)?)?;
    }
    let mut resolved = cfg.clone();
    resolved.encoder.vocab_size = tok.vocab.len();
    resolved.out = Some(out.to_path_buf());
    write_json(&out.join(RESOLVED_CONFIG_FILE), &resolved)?;
    Ok(TrainSummary {
        steps: outcome.log.len(),
        vocab_size: tok.vocab.len(),
        log: outcome.log,
    })
}

/// Fine-tunes a checkpoint on the target's training split and writes a new
/// checkpoint to `out`. An empty selection copies the input unchanged.
pub fn finetune_command(checkpoint: &Path, target: &DatasetSource, cfg: &RunConfig, out: &Path) -> Result<Vec<f64>> {
    let ck = load_checkpoint(checkpoint)?;
    let ds = target.load()?;
    let tok = ck.tokenizer();
    let mut model = ck.model;
    let losses = finetune(&mut model, &ds, &tok, &cfg.finetune)?;
    save_checkpoint(out, &model, &ck.train_config, ck.step, &ck.vocab)?;
    let mut resolved = cfg.clone();
    resolved.out = Some(out.to_path_buf());
    write_json(&out.join(RESOLVED_CONFIG_FILE), &resolved)?;
    write_json(&out.join("finetune_log.json"), &losses)?;
    Ok(losses)
}

/// One line of `predict` output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub index: usize,
    pub label: u8,
    pub prob_match: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum Predictor {
    #[default]
    Full,
    Experts(Vec<usize>),
    GlobalOnly,
}

pub fn predict_command(
    checkpoint: &Path,
    data: &DatasetSource,
    split: Split,
    how: &Predictor,
) -> Result<Vec<PredictionRecord>> {
    let ck = load_checkpoint(checkpoint)?;
    let ds = data.load()?;
    let pairs = ds.encode_split(split, &ck.tokenizer())?;
    let preds: Vec<Prediction> = match how {
        Predictor::Full => predict_subset(&ck.model, &pairs, None)?,
        Predictor::Experts(s) => predict_subset(&ck.model, &pairs, Some(s))?,
        Predictor::GlobalOnly => global_only_predict(&ck.model, &pairs)?,
    };
    Ok(preds
        .into_iter()
        .enumerate()
        .map(|(index, p)| PredictionRecord {
            index,
            label: p.label,
            prob_match: p.prob_match,
        })
        .collect())
}

pub fn write_predictions(path: &Path, preds: &[PredictionRecord]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for p in preds {
        writeln!(f, "{}", serde_json::to_string(p)?)?;
    }
    Ok(())
}

/// Reads JSON-lines predictions and orders them by index.
pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let text = fs::read_to_string(path)?;
    let mut out: Vec<PredictionRecord> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<std::result::Result<_, _>>()?;
    out.sort_by_key(|p| p.index);
    if out.iter().enumerate().any(|(i, p)| p.index != i) {
        return Err(DameError::Integrity(format!(
            "{} does not hold indices 0..{} exactly once",
            path.display(),
            out.len()
        )));
    }
    Ok(out)
}

pub fn evaluate_command(
    checkpoint: &Path,
    data: &DatasetSource,
    split: Split,
    how: &Predictor,
) -> Result<MetricReport> {
    let gold = data.load()?.labels(split)?;
    let preds = predict_command(checkpoint, data, split, how)?;
    evaluate(&preds.iter().map(|p| p.label).collect::<Vec<_>>(), &gold)
}

/// Scores a predictions file against the gold labels of a split.
pub fn evaluate_file(predictions: &Path, data: &DatasetSource, split: Split) -> Result<MetricReport> {
    let gold = data.load()?.labels(split)?;
    let preds = read_predictions(predictions)?;
    evaluate(&preds.iter().map(|p| p.label).collect::<Vec<_>>(), &gold)
}

/// Selects from the target's training split.
pub fn select_al_command(checkpoint: &Path, target: &DatasetSource, req: &AlRequest) -> Result<Selection> {
    let ck = load_checkpoint(checkpoint)?;
    let ds = target.load()?;
    let pool = ds.encode_split(Split::Train, &ck.tokenizer())?;
    let indices = select_al(&ck.model, &pool, req)?;
    Ok(Selection {
        strategy: req.strategy,
        budget: req.budget,
        indices,
    })
}

pub fn read_selection(path: &Path) -> Result<Selection> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn write_selection(path: &Path, sel: &Selection) -> Result<()> {
    write_json(path, sel)
}

pub fn export_embeddings_command(checkpoint: &Path, data: &DatasetSource, split: Split, out: &Path) -> Result<usize> {
    let ck = load_checkpoint(checkpoint)?;
    let ds = data.load()?;
    let pairs = ds.encode_split(split, &ck.tokenizer())?;
    let labels: Vec<Option<u8>> = ds.split(split).iter().map(|p| p.label).collect();
    export_embeddings(&ck.model, &pairs, &labels, out)?;
    Ok(pairs.len())
}

/// Fine-tuning settings with a selection file's indices in place of any
/// fraction.
pub fn with_indices(cfg: &FinetuneConfig, sel: &Selection) -> FinetuneConfig {
    FinetuneConfig {
        indices: Some(sel.indices.clone()),
        fraction: None,
        ..cfg.clone()
    }
}
