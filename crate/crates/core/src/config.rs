//! Run configuration: one JSON document with a section per component.
//! Missing keys take their defaults; unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapt::{AlRequest, FinetuneConfig};
use crate::encoder::EncoderConfig;
use crate::error::Result;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// `domains.json` listing the sources and the target.
    pub registry: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Tokens seen fewer times than this map to `[UNK]`.
    pub vocab_min_count: usize,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub finetune: FinetuneConfig,
    pub al: AlRequest,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            registry: None,
            out: None,
            vocab_min_count: 1,
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            finetune: FinetuneConfig::default(),
            al: AlRequest::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.train.validate()?;
        self.finetune.validate()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn flatten(prefix: &str, v: &serde_json::Value, out: &mut Vec<(String, String)>) {
    match v {
        serde_json::Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, child, out);
            }
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// Every configuration key with its default, one `key = value` per line.
pub fn defaults_table() -> String {
    let v = serde_json::to_value(RunConfig::default()).expect("config serializes");
    let mut rows = Vec::new();
    flatten("", &v, &mut rows);
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    rows.iter()
        .map(|(k, v)| format!("  {k:<width$} = {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}
