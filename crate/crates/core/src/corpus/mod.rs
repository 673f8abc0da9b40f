//! Sample data model and JSONL corpus I/O.
//!
//! One sample per line, ShareGPT-style `conversations`. Records are written
//! with sorted keys so identical pools serialize to identical bytes.

mod embeddings;
mod manifest;
mod stats;

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use embeddings::{write_embeddings, EmbeddingRecord, EmbeddingStore, Embeddings};
pub use manifest::{load_manifests, DataSourceManifest, EmbeddingPaths, Stage};
pub use stats::{pool_stats, CountPair, HistogramBucket, ModalityCounts, PoolStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    CaptioningKnowledge,
    Mathematics,
    Science,
    ChartTable,
    #[serde(rename = "naive_ocr")]
    NaiveOcr,
    #[serde(rename = "ocr_qa")]
    OcrQa,
    GroundingCounting,
    #[serde(rename = "general_vqa")]
    GeneralVqa,
    TextOnly,
}

impl Category {
    pub const ALL: [Category; 9] = [
        Category::CaptioningKnowledge,
        Category::Mathematics,
        Category::Science,
        Category::ChartTable,
        Category::NaiveOcr,
        Category::OcrQa,
        Category::GroundingCounting,
        Category::GeneralVqa,
        Category::TextOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::CaptioningKnowledge => "captioning_knowledge",
            Category::Mathematics => "mathematics",
            Category::Science => "science",
            Category::ChartTable => "chart_table",
            Category::NaiveOcr => "naive_ocr",
            Category::OcrQa => "ocr_qa",
            Category::GroundingCounting => "grounding_counting",
            Category::GeneralVqa => "general_vqa",
            Category::TextOnly => "text_only",
        }
    }
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown category {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "text")]
    TextOnly,
    #[serde(rename = "image_text")]
    ImageText,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "human")]
    User,
    #[serde(rename = "gpt")]
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationTurn {
    #[serde(rename = "from")]
    pub role: Role,
    #[serde(rename = "value")]
    pub text: String,
}

impl ConversationTurn {
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            text: text.into(),
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            text: text.into(),
        }
    }
}

/// Image reference. Pixel dimensions, when known, let the packer pick a tile
/// grid without decoding the image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
}

/// Original answer kept when augmentation rewrites an assistant turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub kind: String,
    pub original: String,
}

fn default_repeat() -> u32 {
    1
}

/// One conversation record.
///
/// Fields are declared in key order so that the serialized form is canonical.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub category: Category,
    #[serde(rename = "conversations")]
    pub turns: Vec<ConversationTurn>,
    pub id: String,
    #[serde(default)]
    pub images: Vec<ImageRef>,
    pub modality: Modality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    #[serde(default = "default_repeat")]
    pub repeat_factor: u32,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_length: Option<u64>,
}

impl Sample {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Error::InvalidSample {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.id.is_empty() {
            return Err(bad("empty id"));
        }
        if self.turns.len() < 2 {
            return Err(bad("fewer than 2 turns"));
        }
        for (i, turn) in self.turns.iter().enumerate() {
            let expected = if i % 2 == 0 {
                Role::User
            } else {
                Role::Assistant
            };
            if turn.role != expected {
                return Err(bad(&format!("turn {i} out of user/assistant order")));
            }
            if turn.role == Role::User && turn.text.is_empty() {
                return Err(bad(&format!("turn {i} is an empty user turn")));
            }
        }
        match self.modality {
            Modality::TextOnly if !self.images.is_empty() => {
                return Err(bad("text modality with images"));
            }
            Modality::ImageText if self.images.is_empty() => {
                return Err(bad("image_text modality without images"));
            }
            _ => {}
        }
        if self.category == Category::TextOnly && self.modality != Modality::TextOnly {
            return Err(bad("text_only category requires text modality"));
        }
        if self.repeat_factor == 0 {
            return Err(bad("repeat_factor must be positive"));
        }
        Ok(())
    }

    /// Index of the last assistant turn.
    pub fn final_answer_index(&self) -> Option<usize> {
        self.turns.iter().rposition(|t| t.role == Role::Assistant)
    }

    /// The last (question, answer) pair.
    pub fn final_exchange(&self) -> Option<(&str, &str)> {
        let a = self.final_answer_index()?;
        let q = self.turns[..a].iter().rposition(|t| t.role == Role::User)?;
        Some((&self.turns[q].text, &self.turns[a].text))
    }

    pub fn assistant_texts(&self) -> impl Iterator<Item = &str> {
        self.turns
            .iter()
            .filter(|t| t.role == Role::Assistant)
            .map(|t| t.text.as_str())
    }

    pub fn user_texts(&self) -> impl Iterator<Item = &str> {
        self.turns
            .iter()
            .filter(|t| t.role == Role::User)
            .map(|t| t.text.as_str())
    }

    /// Count after applying the repeat factor.
    pub fn effective_count(&self) -> u64 {
        u64::from(self.repeat_factor)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("sample serialization is infallible")
    }
}

fn parse_reason(err: &serde_json::Error) -> String {
    let msg = err.to_string();
    if let Some(rest) = msg.strip_prefix("missing field `") {
        if let Some(end) = rest.find('`') {
            return format!("missing {}", &rest[..end]);
        }
    }
    match msg.rfind(" at line ") {
        Some(pos) => msg[..pos].to_string(),
        None => msg,
    }
}

/// Parse one JSONL record. `line` is 1-based and only used for error messages.
pub fn parse_sample(text: &str, line: usize) -> Result<Sample> {
    let sample: Sample = serde_json::from_str(text).map_err(|e| Error::Parse {
        line,
        reason: parse_reason(&e),
    })?;
    sample.validate().map_err(|e| Error::Parse {
        line,
        reason: e.to_string(),
    })?;
    Ok(sample)
}

/// Parse a whole JSONL document; blank lines are skipped.
pub fn parse_corpus(text: &str) -> Result<Vec<Sample>> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l))
        .collect();
    let parsed: Vec<Result<Sample>> = lines
        .par_iter()
        .map(|&(line, l)| parse_sample(l, line))
        .collect();
    let pool = parsed.into_iter().collect::<Result<Vec<_>>>()?;
    check_unique_ids(&pool)?;
    Ok(pool)
}

pub fn check_unique_ids(pool: &[Sample]) -> Result<()> {
    let mut seen = HashSet::with_capacity(pool.len());
    for s in pool {
        if !seen.insert(s.id.as_str()) {
            return Err(Error::DuplicateId(s.id.clone()));
        }
    }
    Ok(())
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text)
}

pub fn serialize_corpus(pool: &[Sample]) -> String {
    let mut out = String::new();
    for s in pool {
        out.push_str(&s.to_json_line());
        out.push('\n');
    }
    out
}

pub fn write_corpus(pool: &[Sample], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    for s in pool {
        s.validate()?;
    }
    check_unique_ids(pool)?;
    write_bytes(path, serialize_corpus(pool).as_bytes())
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Read any JSONL file of records; blank lines are skipped.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                reason: parse_reason(&e),
            })
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(records: &[T], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    write_bytes(path.as_ref(), out.as_bytes())
}
