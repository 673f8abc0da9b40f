//! Prompt-templated augmentation.
//!
//! Offline protocol: `emit` writes one request per selected sample, an
//! external model answers them, and `apply` folds the responses back in.
//! CoT rewrites only land when a judge response says "True"; expansions are
//! applied directly unless the gate is turned on for them.

mod client;
mod ocr;
mod prompts;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Provenance, Sample};
use crate::error::{Error, Result};

pub use client::{run_online, InferenceClient, ENV_KEY, ENV_URL};
pub use ocr::{existence_question, position_question, relative_position, rule_based_ocr_qa, OcrQaConfig, WordBox};
pub use prompts::{parse_judge, render_cot_prompt, render_expand_prompt, render_judge_prompt, JudgeVerdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentKind {
    Cot,
    Judge,
    Expand,
}

impl AugmentKind {
    pub fn prefix(self) -> &'static str {
        match self {
            AugmentKind::Cot => "cot",
            AugmentKind::Judge => "judge",
            AugmentKind::Expand => "expand",
        }
    }

    pub fn request_id(self, sample_id: &str) -> String {
        format!("{}:{sample_id}", self.prefix())
    }

    /// Split `kind:sample_id`.
    pub fn parse_request_id(id: &str) -> Option<(AugmentKind, &str)> {
        let (prefix, sample) = id.split_once(':')?;
        let kind = match prefix {
            "cot" => AugmentKind::Cot,
            "judge" => AugmentKind::Judge,
            "expand" => AugmentKind::Expand,
            _ => return None,
        };
        Some((kind, sample))
    }
}

impl std::str::FromStr for AugmentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cot" => Ok(AugmentKind::Cot),
            "judge" => Ok(AugmentKind::Judge),
            "expand" => Ok(AugmentKind::Expand),
            _ => Err(Error::invalid(format!("unknown augmentation kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestMetadata {
    pub question: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_answer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationRequest {
    pub request_id: String,
    pub sample_id: String,
    pub kind: AugmentKind,
    pub prompt: String,
    pub metadata: RequestMetadata,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationResponse {
    pub request_id: String,
    pub text: String,
}

/// One CoT or Expand request per selected sample, built from its final
/// question/answer pair.
pub fn emit_requests(pool: &[Sample], kind: AugmentKind, select: impl Fn(&Sample) -> bool) -> Result<Vec<AugmentationRequest>> {
    crate::corpus::check_unique_ids(pool)?;
    let render = match kind {
        AugmentKind::Cot => render_cot_prompt,
        AugmentKind::Expand => render_expand_prompt,
        AugmentKind::Judge => {
            return Err(Error::invalid("judge requests are built from CoT responses"));
        }
    };
    pool.iter()
        .filter(|s| select(s))
        .map(|s| {
            let (q, a) = s.final_exchange().ok_or_else(|| Error::InvalidSample {
                id: s.id.clone(),
                reason: "no question/answer pair".into(),
            })?;
            let prompt = render(q, a).map_err(|e| Error::InvalidSample {
                id: s.id.clone(),
                reason: e.to_string(),
            })?;
            Ok(AugmentationRequest {
                request_id: kind.request_id(&s.id),
                sample_id: s.id.clone(),
                kind,
                prompt,
                metadata: RequestMetadata {
                    question: q.to_string(),
                    answer: a.to_string(),
                    new_answer: None,
                },
            })
        })
        .collect()
}

/// Judge requests comparing each generated answer with the original.
pub fn emit_judge_requests(pool: &[Sample], responses: &[AugmentationResponse]) -> Result<Vec<AugmentationRequest>> {
    let by_id: HashMap<&str, &Sample> = pool.iter().map(|s| (s.id.as_str(), s)).collect();
    responses
        .iter()
        .filter(|r| r.request_id.starts_with("cot:") || r.request_id.starts_with("expand:"))
        .map(|r| {
            let (_, sid) = AugmentKind::parse_request_id(&r.request_id)
                .ok_or_else(|| Error::DanglingRequest(r.request_id.clone()))?;
            let sample = by_id.get(sid).ok_or_else(|| Error::DanglingRequest(r.request_id.clone()))?;
            let (q, a) = sample
                .final_exchange()
                .ok_or_else(|| Error::DanglingRequest(r.request_id.clone()))?;
            Ok(AugmentationRequest {
                request_id: AugmentKind::Judge.request_id(sid),
                sample_id: sid.to_string(),
                kind: AugmentKind::Judge,
                prompt: render_judge_prompt(q, a, &r.text)?,
                metadata: RequestMetadata {
                    question: q.to_string(),
                    answer: a.to_string(),
                    new_answer: Some(r.text.clone()),
                },
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct JudgeGate {
    pub cot: bool,
    pub expand: bool,
}

impl Default for JudgeGate {
    fn default() -> Self {
        Self { cot: true, expand: false }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentStats {
    pub responses: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub unparseable: usize,
    /// Gated responses without a verdict yet.
    pub pending: usize,
    /// Responses applied without a judge.
    pub applied_ungated: usize,
}

/// Fold responses back into the pool. Gated kinds are applied only on an
/// Accept verdict; the replaced answer is kept in `provenance`.
pub fn apply_responses(
    pool: &[Sample],
    responses: &[AugmentationResponse],
    verdicts: &[AugmentationResponse],
    gate: JudgeGate,
) -> Result<(Vec<Sample>, AugmentStats)> {
    let index: HashMap<&str, usize> = pool.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();

    let mut seen = HashSet::new();
    let mut parsed = Vec::with_capacity(responses.len());
    for r in responses {
        let (kind, sid) = AugmentKind::parse_request_id(&r.request_id)
            .filter(|(k, _)| *k != AugmentKind::Judge)
            .ok_or_else(|| Error::DanglingRequest(r.request_id.clone()))?;
        let &i = index.get(sid).ok_or_else(|| Error::DanglingRequest(r.request_id.clone()))?;
        if !seen.insert(r.request_id.as_str()) {
            return Err(Error::invalid(format!("duplicate response {}", r.request_id)));
        }
        parsed.push((kind, i, r));
    }

    let mut judged: HashMap<&str, JudgeVerdict> = HashMap::new();
    for v in verdicts {
        let sid = v
            .request_id
            .strip_prefix("judge:")
            .ok_or_else(|| Error::DanglingRequest(v.request_id.clone()))?;
        let references = parsed
            .iter()
            .any(|(k, i, _)| pool[*i].id == sid && (*k == AugmentKind::Cot || gate.expand));
        if !references {
            return Err(Error::DanglingRequest(v.request_id.clone()));
        }
        judged.insert(sid, parse_judge(&v.text));
    }

    let mut out = pool.to_vec();
    let mut stats = AugmentStats {
        responses: parsed.len(),
        ..Default::default()
    };
    for (kind, i, r) in parsed {
        let gated = match kind {
            AugmentKind::Cot => gate.cot,
            AugmentKind::Expand => gate.expand,
            AugmentKind::Judge => unreachable!(),
        };
        let apply = if gated {
            match judged.get(pool[i].id.as_str()) {
                Some(JudgeVerdict::Accept) => {
                    stats.accepted += 1;
                    true
                }
                Some(JudgeVerdict::Reject) => {
                    stats.rejected += 1;
                    false
                }
                Some(JudgeVerdict::Unparseable) => {
                    stats.unparseable += 1;
                    false
                }
                None => {
                    stats.pending += 1;
                    false
                }
            }
        } else {
            stats.applied_ungated += 1;
            true
        };
        if apply {
            let sample = &mut out[i];
            let a = sample.final_answer_index().expect("validated sample has an answer");
            let original = std::mem::replace(&mut sample.turns[a].text, r.text.clone());
            sample.provenance = Some(Provenance {
                kind: kind.prefix().to_string(),
                original,
            });
        }
    }
    Ok((out, stats))
}
