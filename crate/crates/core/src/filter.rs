//! Rule-based quality filters.
//!
//! Rules: repeated text, overly precise numeric answers, short refusals, and
//! (opt-in) a cross-modal similarity floor for mismatched image/text pairs.
//! Any rule can be disabled or marked advisory, in which case its hits are
//! reported but never drop a sample.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Embeddings, Sample};
use crate::numbers;
use crate::similarity::cosine_sim;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleId {
    Repetition,
    Precision,
    Refusal,
    Mismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RepetitionConfig {
    pub enabled: bool,
    pub ngram_min: usize,
    pub min_repeats: usize,
    pub tail_fraction: f64,
}

impl Default for RepetitionConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            ngram_min: 4,
            min_repeats: 3,
            tail_fraction: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrecisionConfig {
    pub enabled: bool,
    pub max_decimals: usize,
}

impl Default for PrecisionConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            max_decimals: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefusalConfig {
    pub enabled: bool,
    pub keywords: Vec<String>,
}

impl Default for RefusalConfig {
    fn default() -> Self {
        let keywords = [
            "sorry, i cannot",
            "sorry, i can't",
            "i cannot answer",
            "i can't answer",
            "i cannot help",
            "i can't help",
            "i am unable to",
            "i'm unable to",
            "as an ai",
        ];
        Self {
            enabled: true,
            keywords: keywords.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MismatchConfig {
    pub enabled: bool,
    pub min_cross_sim: f64,
}

impl Default for MismatchConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            min_cross_sim: 0.05,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub repetition: RepetitionConfig,
    pub precision: PrecisionConfig,
    pub refusal: RefusalConfig,
    pub mismatch: MismatchConfig,
    /// Rules whose hits are reported but do not drop samples.
    pub advisory: Vec<RuleId>,
}

impl FilterConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let r = &self.repetition;
        let ok = r.ngram_min > 0
            && r.min_repeats > 1
            && r.tail_fraction > 0.0
            && r.tail_fraction <= 1.0
            && self.mismatch.min_cross_sim > 0.0;
        if ok {
            Ok(())
        } else {
            Err(crate::Error::invalid("filter thresholds out of range"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepetitionKind {
    Consecutive,
    Tail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepetitionHit {
    pub kind: RepetitionKind,
    /// The repeated block, tokens joined by single spaces.
    pub block: String,
    pub block_tokens: usize,
    pub repeats: usize,
    /// Token index where the repeated run starts.
    pub start_token: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrecisionHit {
    pub number: String,
    pub decimals: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefusalHit {
    pub keyword: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchHit {
    pub cross_sim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleHit {
    pub rule: RuleId,
    /// Turn index the hit was found in, when it is turn-local.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub turn: Option<usize>,
    pub detail: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Keep,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub sample_id: String,
    pub hits: Vec<RuleHit>,
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

fn intern(tokens: &[&str]) -> Vec<u32> {
    let mut ids: HashMap<&str, u32> = HashMap::new();
    tokens
        .iter()
        .map(|t| {
            let next = ids.len() as u32;
            *ids.entry(t).or_insert(next)
        })
        .collect()
}

fn tail_repetition(toks: &[u32], cfg: &RepetitionConfig) -> Option<(usize, usize)> {
    let total = toks.len();
    let needed = cfg.tail_fraction * total as f64;
    for n in cfg.ngram_min..=total / 2 {
        let last = &toks[total - n..];
        let mut repeats = 1;
        while (repeats + 1) * n <= total {
            let from = total - (repeats + 1) * n;
            if &toks[from..from + n] != last {
                break;
            }
            repeats += 1;
        }
        if repeats >= 2 && (repeats * n) as f64 >= needed {
            return Some((n, repeats));
        }
    }
    None
}

fn consecutive_repetition(toks: &[u32], cfg: &RepetitionConfig) -> Option<(usize, usize, usize)> {
    let total = toks.len();
    let repeats = cfg.min_repeats.max(2);
    for n in cfg.ngram_min..=total / repeats {
        let needed = (repeats - 1) * n;
        let mut run = 0;
        for k in 0..total - n {
            if toks[k] == toks[k + n] {
                run += 1;
                if run >= needed {
                    let start = k + 1 - run;
                    // Extend to count the full number of repeats.
                    let mut end = k + 1;
                    while end + n < total && toks[end] == toks[end + n] {
                        end += 1;
                    }
                    return Some((n, (end - start) / n + 1, start));
                }
            } else {
                run = 0;
            }
        }
    }
    None
}

/// Whitespace-token repetition: a block of at least `ngram_min` tokens
/// repeated `min_repeats` times in a row, or a trailing repeated block that
/// covers at least `tail_fraction` of the text. The tail rule is checked
/// first.
pub fn detect_repetition(text: &str, cfg: &RepetitionConfig) -> Option<RepetitionHit> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if cfg.ngram_min == 0 || tokens.len() < cfg.ngram_min * 2 {
        return None;
    }
    let ids = intern(&tokens);
    let hit = |kind, n: usize, repeats, start: usize| RepetitionHit {
        kind,
        block: tokens[start..start + n].join(" "),
        block_tokens: n,
        repeats,
        start_token: start,
    };
    if let Some((n, repeats)) = tail_repetition(&ids, cfg) {
        return Some(hit(RepetitionKind::Tail, n, repeats, tokens.len() - n * repeats));
    }
    consecutive_repetition(&ids, cfg)
        .map(|(n, repeats, start)| hit(RepetitionKind::Consecutive, n, repeats, start))
}

/// An answer number with more than `max_decimals` decimals, unless a user
/// turn already carries at least as many decimals.
pub fn detect_numeric_precision(sample: &Sample, cfg: &PrecisionConfig) -> Option<(usize, PrecisionHit)> {
    let licensed = numbers::max_decimals(sample.user_texts());
    sample
        .turns
        .iter()
        .enumerate()
        .filter(|(_, t)| t.role == crate::corpus::Role::Assistant)
        .find_map(|(i, t)| {
            numbers::decimal_literals(&t.text)
                .into_iter()
                .find(|d| d.decimals() > cfg.max_decimals && d.decimals() > licensed)
                .map(|d| {
                    (
                        i,
                        PrecisionHit {
                            number: t.text[d.start..d.end].to_string(),
                            decimals: d.decimals(),
                        },
                    )
                })
        })
}

/// A configured phrase inside a short assistant turn. Long answers that merely
/// contain the phrase are left alone.
pub fn detect_refusal(text: &str, cfg: &RefusalConfig) -> Option<RefusalHit> {
    if text.trim().is_empty() {
        return None;
    }
    let lower = text.to_lowercase();
    let len = text.chars().count();
    cfg.keywords.iter().find_map(|k| {
        let k = k.to_lowercase();
        let guard = 2 * k.chars().count() + 32;
        (len < guard && lower.contains(&k)).then_some(RefusalHit { keyword: k })
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum MismatchOutcome {
    Hit(MismatchHit),
    Pass(f64),
    Skipped(String),
}

/// Image/text cross similarity below the floor. Needs both vectors in one
/// joint space; otherwise the rule is skipped.
pub fn detect_mismatch(sample: &Sample, embeddings: Option<&Embeddings>, cfg: &MismatchConfig) -> MismatchOutcome {
    let Some(emb) = embeddings else {
        return MismatchOutcome::Skipped("mismatch: no embeddings".into());
    };
    let (Some(image), Some(text)) = (emb.image_vec(&sample.id), emb.text_vec(&sample.id)) else {
        return MismatchOutcome::Skipped("mismatch: sample lacks embeddings".into());
    };
    if image.len() != text.len() {
        return MismatchOutcome::Skipped("mismatch: image and text vectors are not in a joint space".into());
    }
    match cosine_sim(image, text) {
        Ok(sim) if sim < cfg.min_cross_sim => MismatchOutcome::Hit(MismatchHit { cross_sim: sim }),
        Ok(sim) => MismatchOutcome::Pass(sim),
        Err(e) => MismatchOutcome::Skipped(format!("mismatch: {e}")),
    }
}

fn json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("hit details serialize")
}

pub fn evaluate(sample: &Sample, embeddings: Option<&Embeddings>, cfg: &FilterConfig) -> FilterVerdict {
    let mut hits = Vec::new();
    let mut notes = Vec::new();
    let assistant_turns = || {
        sample
            .turns
            .iter()
            .enumerate()
            .filter(|(_, t)| t.role == crate::corpus::Role::Assistant)
    };
    if cfg.repetition.enabled {
        if let Some((i, h)) = assistant_turns().find_map(|(i, t)| detect_repetition(&t.text, &cfg.repetition).map(|h| (i, h))) {
            hits.push(RuleHit {
                rule: RuleId::Repetition,
                turn: Some(i),
                detail: json(&h),
            });
        }
    }
    if cfg.precision.enabled {
        if let Some((i, h)) = detect_numeric_precision(sample, &cfg.precision) {
            hits.push(RuleHit {
                rule: RuleId::Precision,
                turn: Some(i),
                detail: json(&h),
            });
        }
    }
    if cfg.refusal.enabled {
        if let Some((i, h)) = assistant_turns().find_map(|(i, t)| detect_refusal(&t.text, &cfg.refusal).map(|h| (i, h))) {
            hits.push(RuleHit {
                rule: RuleId::Refusal,
                turn: Some(i),
                detail: json(&h),
            });
        }
    }
    if cfg.mismatch.enabled {
        match detect_mismatch(sample, embeddings, &cfg.mismatch) {
            MismatchOutcome::Hit(h) => hits.push(RuleHit {
                rule: RuleId::Mismatch,
                turn: None,
                detail: json(&h),
            }),
            MismatchOutcome::Pass(_) => {}
            MismatchOutcome::Skipped(note) => notes.push(note),
        }
    }
    let drop = hits.iter().any(|h| !cfg.advisory.contains(&h.rule));
    FilterVerdict {
        sample_id: sample.id.clone(),
        hits,
        decision: if drop { Decision::Drop } else { Decision::Keep },
        notes,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub total: usize,
    pub kept: usize,
    pub dropped: usize,
    /// Samples hit per rule, advisory hits included.
    pub per_rule: BTreeMap<RuleId, usize>,
    pub mismatch_skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub kept: Vec<Sample>,
    pub verdicts: Vec<FilterVerdict>,
    pub summary: FilterSummary,
}

pub fn run_filters(pool: &[Sample], embeddings: Option<&Embeddings>, cfg: &FilterConfig) -> FilterOutcome {
    let verdicts: Vec<FilterVerdict> = pool
        .par_iter()
        .map(|s| evaluate(s, embeddings, cfg))
        .collect();
    let mut summary = FilterSummary {
        total: pool.len(),
        ..Default::default()
    };
    let mut kept = Vec::new();
    for (sample, verdict) in pool.iter().zip(&verdicts) {
        for h in &verdict.hits {
            *summary.per_rule.entry(h.rule).or_default() += 1;
        }
        if !verdict.notes.is_empty() {
            summary.mismatch_skipped += 1;
        }
        match verdict.decision {
            Decision::Keep => kept.push(sample.clone()),
            Decision::Drop => summary.dropped += 1,
        }
    }
    summary.kept = kept.len();
    FilterOutcome {
        kept,
        verdicts,
        summary,
    }
}
