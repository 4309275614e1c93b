//! JSONL corpus and detection-output files.
//!
//! Every file is one JSON object per line. The first line may be a meta
//! object `{"meta": {...}}` recording the seed and config digest that
//! produced the file; readers return it separately from the records, so
//! tooling can verify provenance before trusting the data.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::lm::TokenId;
use crate::watermark::Scheme;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
}

/// Where a file came from: the command kind, the effective top-level seed,
/// and digests of the config files that shaped it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub kind: String,
    pub seed: u64,
    pub config_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_sha256: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct MetaLine {
    meta: Provenance,
}

/// One prompt/response pair; attack outputs add the pivot and attacked
/// texts plus the attack name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub prompt: Vec<TokenId>,
    pub response: Vec<TokenId>,
    pub language: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pivot_response: Option<Vec<TokenId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attacked_response: Option<Vec<TokenId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<String>,
}

/// One detector score for one text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutput {
    pub id: String,
    pub score: f64,
    pub scheme: Scheme,
    pub token_count: usize,
}

/// Serialize records to JSONL, meta line first when given. Records are
/// written in the order handed in; callers own the ordering contract.
pub fn to_jsonl_string<T: Serialize>(
    meta: Option<&Provenance>,
    records: &[T],
) -> Result<String, serde_json::Error> {
    let mut out = String::new();
    if let Some(p) = meta {
        out.push_str(&serde_json::to_string(&MetaLine { meta: p.clone() })?);
        out.push('\n');
    }
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(
    path: &Path,
    meta: Option<&Provenance>,
    records: &[T],
) -> Result<(), CorpusError> {
    let text = to_jsonl_string(meta, records).map_err(|source| CorpusError::Json {
        line: 0,
        source,
    })?;
    fs::write(path, text)?;
    Ok(())
}

/// Parse JSONL, splitting off a leading meta line when present.
pub fn from_jsonl_str<T: DeserializeOwned>(
    text: &str,
) -> Result<(Option<Provenance>, Vec<T>), CorpusError> {
    let mut meta = None;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 {
            // Only the first line may carry provenance.
            let v: Value =
                serde_json::from_str(line).map_err(|source| CorpusError::Json { line: 1, source })?;
            if v.as_object().is_some_and(|o| o.contains_key("meta")) {
                let m: MetaLine = serde_json::from_value(v)
                    .map_err(|source| CorpusError::Json { line: 1, source })?;
                meta = Some(m.meta);
                continue;
            }
        }
        let record: T = serde_json::from_str(line).map_err(|source| CorpusError::Json {
            line: i + 1,
            source,
        })?;
        records.push(record);
    }
    Ok((meta, records))
}

pub fn read_jsonl<T: DeserializeOwned>(
    path: &Path,
) -> Result<(Option<Provenance>, Vec<T>), CorpusError> {
    let text = fs::read_to_string(path)?;
    from_jsonl_str(&text)
}

pub fn read_corpus(path: &Path) -> Result<(Option<Provenance>, Vec<CorpusRecord>), CorpusError> {
    let (meta, records) = read_jsonl::<CorpusRecord>(path)?;
    ensure_unique(records.iter().map(|r| r.id.as_str()))?;
    Ok((meta, records))
}

pub fn read_detections(
    path: &Path,
) -> Result<(Option<Provenance>, Vec<DetectionOutput>), CorpusError> {
    let (meta, records) = read_jsonl::<DetectionOutput>(path)?;
    ensure_unique(records.iter().map(|r| r.id.as_str()))?;
    Ok((meta, records))
}

fn ensure_unique<'a>(ids: impl Iterator<Item = &'a str>) -> Result<(), CorpusError> {
    let mut seen = std::collections::HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(CorpusError::DuplicateId(id.to_string()));
        }
    }
    Ok(())
}
