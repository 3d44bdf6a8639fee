//! Synthetic multi-domain matching data.
//!
//! Every domain draws record titles from a word pool shared by all domains
//! plus a pool of words private to that domain. A pair matches iff the
//! Jaccard similarity of the two titles' token sets is at least 0.5, so all
//! domains share one matching rule but differ in vocabulary.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{write_domain, DomainDataset, DomainRegistry, PairRef, RegistryIndex, Table};
use crate::error::{DameError, Result};
use crate::record::Record;
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_sources: usize,
    pub train_pairs: usize,
    pub valid_pairs: usize,
    pub test_pairs: usize,
    /// Size of the target's training split (the labeling pool); defaults to
    /// `train_pairs`.
    pub target_train_pairs: Option<usize>,
    /// Tokens per title.
    pub title_len: usize,
    pub shared_words: usize,
    pub domain_words: usize,
    /// Probability that a title token comes from the domain's private pool.
    pub domain_word_rate: f64,
    /// Fraction of pairs generated as near-duplicates.
    pub positive_rate: f64,
    /// Fraction of the remaining pairs generated as partial overlaps.
    pub hard_negative_rate: f64,
    /// Replacement counts skipped just past the match threshold when making
    /// partial overlaps; 0 puts hard negatives right at the boundary.
    pub hard_negative_gap: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_sources: 3,
            train_pairs: 3000,
            valid_pairs: 50,
            test_pairs: 400,
            target_train_pairs: Some(400),
            title_len: 4,
            shared_words: 20,
            domain_words: 10,
            domain_word_rate: 0.2,
            positive_rate: 0.4,
            hard_negative_rate: 0.5,
            hard_negative_gap: 1,
            seed: 7,
        }
    }
}

pub fn jaccard(a: &[String], b: &[String]) -> f64 {
    let a: HashSet<&String> = a.iter().collect();
    let b: HashSet<&String> = b.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

pub fn match_rule(a: &[String], b: &[String]) -> u8 {
    u8::from(jaccard(a, b) >= 0.5)
}

struct Pools {
    shared: Vec<String>,
    private: Vec<String>,
    rate: f64,
}

impl Pools {
    fn word(&self, rng: &mut ChaCha8Rng) -> &str {
        let pool = if rng.gen_bool(self.rate) {
            &self.private
        } else {
            &self.shared
        };
        &pool[rng.gen_range(0..pool.len())]
    }

    fn title(&self, len: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
        let mut out: Vec<String> = Vec::with_capacity(len);
        while out.len() < len {
            let w = self.word(rng);
            if !out.iter().any(|t| t == w) {
                out.push(w.to_string());
            }
        }
        out
    }

    /// Replaces `r` distinct positions with words not already present.
    fn perturb(&self, title: &[String], r: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
        let mut out = title.to_vec();
        let mut positions: Vec<usize> = (0..title.len()).collect();
        positions.shuffle(rng);
        for &p in positions.iter().take(r) {
            loop {
                let w = self.word(rng);
                if !out.iter().any(|t| t == w) && !title.iter().any(|t| t == w) {
                    out[p] = w.to_string();
                    break;
                }
            }
        }
        out
    }
}

fn title_record(tokens: &[String]) -> Record {
    Record::from_pairs([("title", tokens.join(" ").as_str())]).expect("non-empty record")
}

/// Largest replacement count that keeps Jaccard >= 0.5 for a title of
/// length `n`: (n - r) / (n + r) >= 0.5.
fn max_positive_replacements(n: usize) -> usize {
    n / 3
}

/// Generates one domain. Ids are `a{i}` / `b{i}` with one record per side
/// per pair; every pair is labeled by the Jaccard rule.
pub fn generate_domain(name: &str, cfg: &SynthConfig, domain_tag: &str, seed: u64) -> Result<DomainDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pools = Pools {
        shared: (0..cfg.shared_words).map(|i| format!("w{i}")).collect(),
        private: (0..cfg.domain_words).map(|i| format!("{domain_tag}x{i}")).collect(),
        rate: cfg.domain_word_rate,
    };
    let n = cfg.title_len;
    let max_pos = max_positive_replacements(n);
    let total = cfg.train_pairs + cfg.valid_pairs + cfg.test_pairs;
    let mut rows_a = Vec::with_capacity(total);
    let mut rows_b = Vec::with_capacity(total);
    let mut refs = Vec::with_capacity(total);
    for i in 0..total {
        let left = pools.title(n, &mut rng);
        let right = if rng.gen_bool(cfg.positive_rate) {
            let r = rng.gen_range(0..=max_pos);
            pools.perturb(&left, r, &mut rng)
        } else if rng.gen_bool(cfg.hard_negative_rate) {
            let lo = (max_pos + 1 + cfg.hard_negative_gap).min(n);
            let r = rng.gen_range(lo..=n.min(lo + 1));
            pools.perturb(&left, r, &mut rng)
        } else {
            pools.title(n, &mut rng)
        };
        let label = match_rule(&left, &right);
        let (a, b) = (format!("a{i}"), format!("b{i}"));
        rows_a.push((a.clone(), title_record(&left)));
        rows_b.push((b.clone(), title_record(&right)));
        refs.push(PairRef {
            left_id: a,
            right_id: b,
            label: Some(label),
        });
    }
    let test = refs.split_off(cfg.train_pairs + cfg.valid_pairs);
    let valid = refs.split_off(cfg.train_pairs);
    let attrs = vec!["title".to_string()];
    DomainDataset::new(
        name,
        Table::new(attrs.clone(), rows_a)?,
        Table::new(attrs, rows_b)?,
        refs,
        valid,
        test,
    )
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DameError::Config(format!("synth: {m}")));
        if self.num_sources == 0 {
            return bad("num_sources must be >= 1");
        }
        if self.title_len < 3 {
            return bad("title_len must be >= 3");
        }
        if self.train_pairs == 0 || self.test_pairs == 0 {
            return bad("train_pairs and test_pairs must be >= 1");
        }
        // perturbation needs fresh words beyond the title and its replacements
        if self.shared_words < 3 * self.title_len || self.domain_words == 0 {
            return bad("word pools too small for the title length");
        }
        for (name, p) in [
            ("domain_word_rate", self.domain_word_rate),
            ("positive_rate", self.positive_rate),
            ("hard_negative_rate", self.hard_negative_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} must be in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Sources `src0..` and target `tgt`, each with its own private word pool.
pub fn generate_registry(cfg: &SynthConfig) -> Result<DomainRegistry> {
    let sources = (0..cfg.num_sources)
        .map(|j| {
            let name = format!("src{j}");
            generate_domain(&name, cfg, &format!("s{j}"), derive_seed(cfg.seed, &name))
        })
        .collect::<Result<Vec<_>>>()?;
    let target_cfg = SynthConfig {
        train_pairs: cfg.target_train_pairs.unwrap_or(cfg.train_pairs),
        ..cfg.clone()
    };
    let target = generate_domain("tgt", &target_cfg, "t", derive_seed(cfg.seed, "tgt"))?;
    DomainRegistry::new(sources, target)
}

/// Writes every domain under `dir` plus a `domains.json` index with
/// relative paths. Returns the index path.
pub fn write_registry(reg: &DomainRegistry, dir: &Path) -> Result<std::path::PathBuf> {
    fs::create_dir_all(dir)?;
    for ds in reg.sources().iter().chain(std::iter::once(reg.target())) {
        write_domain(ds, &dir.join(&ds.name))?;
    }
    let index = RegistryIndex {
        sources: reg.sources().iter().map(|s| s.name.clone().into()).collect(),
        target: reg.target().name.clone().into(),
    };
    let path = dir.join("domains.json");
    fs::write(&path, serde_json::to_string_pretty(&index)?)?;
    Ok(path)
}
