//! Word-level vocabulary and fixed-length tokenization.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DameError, Result};
use crate::record::{CLS, COL, PAD, SEP, UNK, VAL};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const SEP_ID: usize = 3;
pub const COL_ID: usize = 4;
pub const VAL_ID: usize = 5;

const RESERVED: [&str; 6] = [PAD, UNK, CLS, SEP, COL, VAL];

pub const DEFAULT_MAX_LEN: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

/// Token ids plus attention mask, padded to a fixed length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerializedPair {
    pub token_ids: Vec<usize>,
    pub attention_mask: Vec<u8>,
}

impl SerializedPair {
    /// Number of real (non-padding) tokens.
    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }

    /// Token ids of the unpadded prefix.
    pub fn real_ids(&self) -> &[usize] {
        &self.token_ids[..self.real_len()]
    }

    pub fn max_len(&self) -> usize {
        self.token_ids.len()
    }
}

/// Splits text into lowercase word and punctuation tokens. Reserved marker
/// tokens such as `[COL]` are kept intact.
pub fn split_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        if RESERVED.contains(&chunk) {
            out.push(chunk.to_string());
            continue;
        }
        let mut word = String::new();
        for ch in chunk.chars() {
            if ch.is_alphanumeric() {
                word.extend(ch.to_lowercase());
            } else {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(ch.to_string());
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (i, r) in RESERVED.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*r) {
                return Err(DameError::Config(format!(
                    "vocabulary line {i} must be the reserved token {r}"
                )));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(DameError::Config(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn reserved_only() -> Self {
        Self::from_tokens(RESERVED.iter().map(|s| s.to_string()).collect()).expect("reserved tokens are distinct")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line; the line number is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}

/// Builds a vocabulary of tokens seen at least `min_count` times. Ids after the
/// reserved block are ordered by descending count, then lexicographically.
pub fn build_vocab<S: AsRef<str>>(corpora: &[S], min_count: usize) -> Result<Vocabulary> {
    if min_count == 0 {
        return Err(DameError::Config("min_count must be at least 1".into()));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for text in corpora {
        for tok in split_tokens(text.as_ref()) {
            if RESERVED.contains(&tok.as_str()) {
                continue;
            }
            *counts.entry(tok).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    tokens.extend(kept.into_iter().map(|(t, _)| t));
    Vocabulary::from_tokens(tokens)
}

/// Maps serialized text to a fixed-length id sequence. Sequences longer than
/// `max_len` are cut from the tail and end with a forced `[SEP]`.
pub fn tokenize(text: &str, vocab: &Vocabulary, max_len: usize) -> Result<SerializedPair> {
    if max_len < 8 {
        return Err(DameError::Config(format!("max_len must be >= 8, got {max_len}")));
    }
    let mut ids: Vec<usize> = split_tokens(text).iter().map(|t| vocab.id(t)).collect();
    if ids.len() > max_len {
        ids.truncate(max_len);
        ids[max_len - 1] = SEP_ID;
    }
    let real = ids.len();
    ids.resize(max_len, PAD_ID);
    let mut mask = vec![1u8; real];
    mask.resize(max_len, 0);
    Ok(SerializedPair {
        token_ids: ids,
        attention_mask: mask,
    })
}

/// Tokenizer settings carried alongside a model.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    pub vocab: Vocabulary,
    pub max_len: usize,
}

impl Tokenizer {
    pub fn new(vocab: Vocabulary, max_len: usize) -> Self {
        Tokenizer { vocab, max_len }
    }

    pub fn encode_pair(&self, pair: &crate::record::RecordPair) -> Result<SerializedPair> {
        tokenize(&crate::record::serialize_pair(pair)?, &self.vocab, self.max_len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::{serialize_pair, Record, RecordPair};
    use proptest::prelude::*;

    #[test]
    fn min_count_threshold() {
        let v = build_vocab(&["a a b"], 2).unwrap();
        assert!(v.contains("a"));
        assert!(!v.contains("b"));
    }

    #[test]
    fn empty_corpus_gives_reserved_tokens() {
        let v = build_vocab::<&str>(&[], 1).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("[PAD]"), 0);
        assert_eq!(v.id("[VAL]"), 5);
    }

    #[test]
    fn frequency_then_lexicographic_ids() {
        // counts by hand: y=2, x=1, z=1
        let v = build_vocab(&["x y", "y z"], 1).unwrap();
        assert_eq!(v.id("y"), 6);
        assert_eq!(v.id("x"), 7);
        assert_eq!(v.id("z"), 8);
    }

    #[test]
    fn splitting_rules() {
        assert_eq!(
            split_tokens("[COL] Title [VAL] Adobe-Photoshop 4.0"),
            vec!["[COL]", "title", "[VAL]", "adobe", "-", "photoshop", "4", ".", "0"]
        );
    }

    #[test]
    fn known_tokens_pad_and_mask() {
        let text = "[CLS] [COL] a [VAL] x [SEP] [COL] a [VAL] y [SEP]";
        let v = build_vocab(&[text], 1).unwrap();
        let sp = tokenize(text, &v, 16).unwrap();
        assert_eq!(sp.token_ids.len(), 16);
        assert!(!sp.token_ids.contains(&UNK_ID));
        assert_eq!(sp.attention_mask.iter().map(|&m| m as usize).sum::<usize>(), 11);
        assert!(sp.token_ids[11..].iter().all(|&t| t == PAD_ID));
    }

    #[test]
    fn unknown_maps_to_unk() {
        let v = build_vocab(&["a"], 1).unwrap();
        let sp = tokenize("[CLS] zebra [SEP]", &v, 8).unwrap();
        assert_eq!(sp.token_ids[1], 1);
    }

    #[test]
    fn truncation_forces_final_sep() {
        let max_len = 10;
        // 15 tokens: [CLS] t0..t12 [SEP]
        let words: Vec<String> = (0..13).map(|i| format!("t{i}")).collect();
        let text = format!("[CLS] {} [SEP]", words.join(" "));
        let v = build_vocab(&[text.as_str()], 1).unwrap();
        let sp = tokenize(&text, &v, max_len).unwrap();
        assert_eq!(sp.token_ids.len(), max_len);
        assert_eq!(sp.token_ids[0], CLS_ID);
        assert_eq!(sp.token_ids[max_len - 1], SEP_ID);
        // positions 1..9 keep the first eight words
        assert_eq!(sp.token_ids[8], v.id("t7"));
        assert!(sp.attention_mask.iter().all(|&m| m == 1));
    }

    #[test]
    fn rejects_short_max_len() {
        assert!(tokenize("[CLS]", &Vocabulary::reserved_only(), 7).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let v = build_vocab(&["b a c a"], 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("[PAD]\n[UNK]\n[CLS]\n[SEP]\n[COL]\n[VAL]\na\n"));
        assert_eq!(Vocabulary::load(&p).unwrap(), v);
    }

    fn arb_record() -> impl Strategy<Value = Record> {
        prop::collection::vec(("[a-z]{1,6}", "[a-z0-9 ]{0,12}"), 1..4).prop_map(|attrs| Record::new(attrs).unwrap())
    }

    proptest! {
        #[test]
        fn markers_and_mask_invariants(l in arb_record(), r in arb_record()) {
            let pair = RecordPair::new(l.clone(), r.clone(), None).unwrap();
            let text = serialize_pair(&pair).unwrap();
            let vocab = build_vocab(&[text.as_str()], 1).unwrap();
            let a = tokenize(&text, &vocab, 512).unwrap();
            let b = tokenize(&text, &vocab, 512).unwrap();
            prop_assert_eq!(&a, &b);
            let cols = a.token_ids.iter().filter(|&&t| t == COL_ID).count();
            let vals = a.token_ids.iter().filter(|&&t| t == VAL_ID).count();
            prop_assert_eq!(cols, l.num_attributes() + r.num_attributes());
            prop_assert_eq!(vals, cols);
            let n = a.real_len();
            prop_assert!(a.attention_mask[..n].iter().all(|&m| m == 1));
            for i in n..a.token_ids.len() {
                prop_assert_eq!(a.attention_mask[i], 0);
                prop_assert_eq!(a.token_ids[i], PAD_ID);
            }
        }
    }
}
