//! Checkpoint directories.
//!
//! ```text
//! manifest.json   version, dtype, model config, step, tensor table
//! params.bin      little-endian f32 tensors concatenated in manifest order
//! config.json     training configuration snapshot
//! vocab.txt       tokenizer vocabulary, one token per line
//! ```
//!
//! Parameters are kept at f32 precision throughout training, so a
//! save / load round trip is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DameError, Result};
use crate::model::{DameModel, ModelConfig};
use crate::train::TrainConfig;
use crate::vocab::{Tokenizer, Vocabulary};

pub const CHECKPOINT_VERSION: u32 = 1;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";
pub const CONFIG_FILE: &str = "config.json";
pub const VOCAB_FILE: &str = "vocab.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub offset: usize,
    pub nbytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub dtype: String,
    pub model: ModelConfig,
    pub step: usize,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: DameModel,
    pub train_config: TrainConfig,
    pub step: usize,
    pub vocab: Vocabulary,
}

impl Checkpoint {
    pub fn tokenizer(&self) -> Tokenizer {
        Tokenizer::new(self.vocab.clone(), self.model.config.encoder.max_len)
    }
}

pub fn save_checkpoint(
    dir: &Path,
    model: &DameModel,
    train_config: &TrainConfig,
    step: usize,
    vocab: &Vocabulary,
) -> Result<()> {
    if vocab.len() != model.config.encoder.vocab_size {
        return Err(DameError::Checkpoint(format!(
            "vocabulary has {} tokens but the model expects {}",
            vocab.len(),
            model.config.encoder.vocab_size
        )));
    }
    fs::create_dir_all(dir)?;
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    for (name, _, t) in model.named_tensors() {
        let offset = blob.len();
        for &v in t.iter() {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
        tensors.push(TensorEntry {
            name,
            shape: [t.nrows(), t.ncols()],
            offset,
            nbytes: blob.len() - offset,
        });
    }
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        dtype: "f32".into(),
        model: model.config,
        step,
        tensors,
    };
    fs::write(dir.join(PARAMS_FILE), &blob)?;
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(train_config)?)?;
    vocab.save(&dir.join(VOCAB_FILE))?;
    Ok(())
}

fn read_file(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(DameError::MissingFile(path));
    }
    Ok(fs::read(path)?)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest: Manifest = serde_json::from_slice(&read_file(dir, MANIFEST_FILE)?)?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(DameError::Checkpoint(format!(
            "unsupported manifest version {} (expected {CHECKPOINT_VERSION})",
            manifest.version
        )));
    }
    if manifest.dtype != "f32" {
        return Err(DameError::Checkpoint(format!("unsupported dtype `{}`", manifest.dtype)));
    }
    let blob = read_file(dir, PARAMS_FILE)?;
    let mut model = DameModel::new(manifest.model, 0)?;
    let expected: Vec<(String, [usize; 2])> = model
        .named_tensors()
        .into_iter()
        .map(|(n, _, t)| (n, [t.nrows(), t.ncols()]))
        .collect();
    if expected.len() != manifest.tensors.len() {
        return Err(DameError::Checkpoint(format!(
            "manifest lists {} tensors, model has {}",
            manifest.tensors.len(),
            expected.len()
        )));
    }
    let mut end = 0;
    for ((name, shape), entry) in expected.iter().zip(&manifest.tensors) {
        if &entry.name != name {
            return Err(DameError::Checkpoint(format!(
                "expected tensor `{name}`, manifest has `{}`",
                entry.name
            )));
        }
        if &entry.shape != shape {
            return Err(DameError::Checkpoint(format!(
                "tensor `{name}` has shape {:?} in the manifest, model expects {:?}",
                entry.shape, shape
            )));
        }
        if entry.nbytes != shape[0] * shape[1] * 4 || entry.offset != end {
            return Err(DameError::Checkpoint(format!(
                "tensor `{name}` has inconsistent offset or size"
            )));
        }
        end += entry.nbytes;
    }
    if blob.len() != end {
        return Err(DameError::Checkpoint(format!(
            "{PARAMS_FILE} holds {} bytes, manifest describes {end}",
            blob.len()
        )));
    }
    for (t, entry) in model.tensors_mut().into_iter().zip(&manifest.tensors) {
        let bytes = &blob[entry.offset..entry.offset + entry.nbytes];
        for (v, chunk) in t.iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f64::from(f32::from_le_bytes(chunk.try_into().expect("4-byte chunk")));
        }
    }
    let train_config: TrainConfig = serde_json::from_slice(&read_file(dir, CONFIG_FILE)?)?;
    let vocab_path = dir.join(VOCAB_FILE);
    if !vocab_path.is_file() {
        return Err(DameError::MissingFile(vocab_path));
    }
    let vocab = Vocabulary::load(&vocab_path)?;
    if vocab.len() != manifest.model.encoder.vocab_size {
        return Err(DameError::Checkpoint(format!(
            "{VOCAB_FILE} has {} tokens, model expects {}",
            vocab.len(),
            manifest.model.encoder.vocab_size
        )));
    }
    Ok(Checkpoint {
        model,
        train_config,
        step: manifest.step,
        vocab,
    })
}
