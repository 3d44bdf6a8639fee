//! Records, record pairs and their text serialization.
//!
//! A record is serialized as `[COL] attr [VAL] value ...` and a pair as
//! `[CLS] left [SEP] right [SEP]`, so attribute names travel with the values
//! and datasets with different schemas can share one encoder.

use serde::{Deserialize, Serialize};

use crate::error::{DameError, Result};

/// An ordered list of attribute/value entries. Order is the ingestion order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    attributes: Vec<(String, String)>,
}

impl Record {
    pub fn new(attributes: Vec<(String, String)>) -> Result<Self> {
        if attributes.is_empty() {
            return Err(DameError::EmptyRecord);
        }
        if let Some(pos) = attributes.iter().position(|(name, _)| name.is_empty()) {
            return Err(DameError::EmptyAttributeName(pos));
        }
        Ok(Record { attributes })
    }

    /// Convenience constructor from string slices.
    pub fn from_pairs<'a, I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        Record::new(pairs.into_iter().map(|(a, v)| (a.to_string(), v.to_string())).collect())
    }

    pub fn attributes(&self) -> &[(String, String)] {
        &self.attributes
    }

    pub fn num_attributes(&self) -> usize {
        self.attributes.len()
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.attributes.iter().find(|(a, _)| a == name).map(|(_, v)| v.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordPair {
    pub left: Record,
    pub right: Record,
    /// 1 = match, 0 = non-match, `None` when the label is withheld.
    pub label: Option<u8>,
}

impl RecordPair {
    pub fn new(left: Record, right: Record, label: Option<u8>) -> Result<Self> {
        if let Some(l) = label {
            if l > 1 {
                return Err(DameError::LabelOutOfRange {
                    label: l as usize,
                    classes: 2,
                });
            }
        }
        Ok(RecordPair { left, right, label })
    }
}

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const COL: &str = "[COL]";
pub const VAL: &str = "[VAL]";

pub fn serialize_record(record: &Record) -> Result<String> {
    if record.attributes.is_empty() {
        return Err(DameError::EmptyRecord);
    }
    let mut parts: Vec<&str> = Vec::with_capacity(record.attributes.len() * 4);
    for (name, value) in &record.attributes {
        parts.push(COL);
        parts.push(name);
        parts.push(VAL);
        // missing values leave nothing after the marker
        let value = value.trim();
        if !value.is_empty() {
            parts.push(value);
        }
    }
    Ok(parts.join(" "))
}

pub fn serialize_pair(pair: &RecordPair) -> Result<String> {
    Ok(format!(
        "{CLS} {} {SEP} {} {SEP}",
        serialize_record(&pair.left)?,
        serialize_record(&pair.right)?
    ))
}
