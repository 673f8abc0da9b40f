//! Answer-format transforms: wrapper stripping, short-answer instructions,
//! numeric rounding, and classification-to-multiple-choice conversion.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ConversationTurn, Role, Sample};
use crate::error::{Error, Result};
use crate::numbers;
use crate::rng;

pub const SHORT_ANSWER_SUFFIX: &str = " Provide a short answer.";
pub const YES_NO_SUFFIX: &str = " Please answer yes or no.";
pub const MCQ_INSTRUCTION: &str = "Answer with the option's letter from the given choices directly.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FormatPolicy {
    /// (open, close) markers removed when they wrap an entire answer.
    pub strip_patterns: Vec<(String, String)>,
    pub short_answer_token_max: usize,
    pub append_rate: f64,
    pub yes_no_append_rate: f64,
    pub seed: u64,
    pub decimal_places: Option<usize>,
}

impl Default for FormatPolicy {
    fn default() -> Self {
        let pairs = [
            ("\\begin{align*}", "\\end{align*}"),
            ("\\begin{align}", "\\end{align}"),
            ("\\begin{equation*}", "\\end{equation*}"),
            ("\\begin{equation}", "\\end{equation}"),
            ("\\begin{gather*}", "\\end{gather*}"),
            ("$$", "$$"),
            ("\\[", "\\]"),
        ];
        Self {
            strip_patterns: pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
            short_answer_token_max: 5,
            append_rate: 0.5,
            yes_no_append_rate: 0.3,
            seed: 0,
            decimal_places: None,
        }
    }
}

impl FormatPolicy {
    pub fn validate(&self) -> Result<()> {
        let rate_ok = |r: f64| (0.0..=1.0).contains(&r);
        if !rate_ok(self.append_rate) || !rate_ok(self.yes_no_append_rate) {
            return Err(Error::invalid("append rates must be in [0, 1]"));
        }
        if self.strip_patterns.iter().any(|(a, b)| a.is_empty() || b.is_empty()) {
            return Err(Error::invalid("strip markers must be nonempty"));
        }
        Ok(())
    }
}

fn strip_once<'a>(text: &'a str, patterns: &[(String, String)]) -> Option<&'a str> {
    let trimmed = text.trim();
    patterns.iter().find_map(|(open, close)| {
        let inner = trimmed.strip_prefix(open.as_str())?.strip_suffix(close.as_str())?;
        // Only a single wrapper around the whole answer counts.
        let nested = patterns
            .iter()
            .any(|(o, c)| inner.contains(o.as_str()) || inner.contains(c.as_str()));
        (!nested).then(|| inner.trim())
    })
}

/// Remove a configured wrapper enclosing the whole text. Inner or partial
/// occurrences are left alone.
pub fn strip_decorations(text: &str, policy: &FormatPolicy) -> String {
    let mut current = text;
    while let Some(inner) = strip_once(current, &policy.strip_patterns) {
        current = inner;
    }
    if std::ptr::eq(current, text) {
        text.to_string()
    } else {
        current.to_string()
    }
}

fn is_yes_no(answer: &str) -> bool {
    let a = answer.trim().trim_end_matches('.').to_lowercase();
    a == "yes" || a == "no"
}

/// Possibly suffix the final question with a short-answer instruction.
/// The decision is a Bernoulli draw keyed on (seed, sample id).
pub fn append_instruction(sample: &Sample, policy: &FormatPolicy) -> Sample {
    let mut out = sample.clone();
    let Some(a) = sample.final_answer_index() else {
        return out;
    };
    let Some(q) = sample.turns[..a].iter().rposition(|t| t.role == Role::User) else {
        return out;
    };
    let answer = &sample.turns[a].text;
    if answer.split_whitespace().count() > policy.short_answer_token_max {
        return out;
    }
    let question = &sample.turns[q].text;
    if question.ends_with(SHORT_ANSWER_SUFFIX) || question.ends_with(YES_NO_SUFFIX) {
        return out;
    }
    let (suffix, rate) = if is_yes_no(answer) {
        (YES_NO_SUFFIX, policy.yes_no_append_rate)
    } else {
        (SHORT_ANSWER_SUFFIX, policy.append_rate)
    };
    let draw: f64 = rng::keyed(policy.seed, &format!("append:{}", sample.id)).random();
    if draw < rate {
        out.turns[q].text.push_str(suffix);
    }
    out
}

fn round_half_even(int: &str, frac: &str, places: usize) -> String {
    let kept = &frac[..places];
    let next = frac.as_bytes()[places];
    let rest_nonzero = frac[places + 1..].bytes().any(|b| b != b'0');
    let last_odd = kept
        .bytes()
        .last()
        .or_else(|| int.bytes().last())
        .is_some_and(|d| (d - b'0') % 2 == 1);
    let round_up = next > b'5' || (next == b'5' && (rest_nonzero || last_odd));

    let mut digits: Vec<u8> = int.bytes().chain(kept.bytes()).collect();
    if round_up {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, b'1');
                break;
            }
            i -= 1;
            if digits[i] == b'9' {
                digits[i] = b'0';
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let split = digits.len() - places;
    let mut out = String::from_utf8(digits[..split].to_vec()).expect("ascii digits");
    if places > 0 {
        out.push('.');
        out.push_str(std::str::from_utf8(&digits[split..]).expect("ascii digits"));
    }
    out
}

/// Round every decimal literal with more than `places` fractional digits,
/// half to even. Integers and other text are untouched.
pub fn normalize_numeric(text: &str, places: usize) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for lit in numbers::decimal_literals(text) {
        if lit.decimals() <= places {
            continue;
        }
        out.push_str(&text[last..lit.start]);
        out.push_str(&round_half_even(
            &text[lit.start..lit.dot],
            &text[lit.dot + 1..lit.end],
            places,
        ));
        last = lit.end;
    }
    out.push_str(&text[last..]);
    out
}

/// Build a lettered multiple-choice exchange from a classification label.
pub fn classification_to_mcq(
    label: &str,
    label_set: &[String],
    stem: &str,
    n_choices: usize,
    seed: u64,
) -> Result<Vec<ConversationTurn>> {
    let mut labels: Vec<&str> = Vec::new();
    for l in label_set {
        if !labels.contains(&l.as_str()) {
            labels.push(l);
        }
    }
    if !labels.contains(&label) {
        return Err(Error::invalid(format!("label {label:?} not in label set")));
    }
    if n_choices < 2 || n_choices > labels.len() || n_choices > 26 {
        return Err(Error::invalid(format!(
            "n_choices {n_choices} outside [2, {}]",
            labels.len().min(26)
        )));
    }
    let distractors: Vec<&str> = labels.iter().copied().filter(|&l| l != label).collect();
    let mut r = rng::keyed(seed, &format!("mcq:{label}"));
    let mut options: Vec<&str> = index::sample(&mut r, distractors.len(), n_choices - 1)
        .into_iter()
        .map(|i| distractors[i])
        .collect();
    options.push(label);
    options.shuffle(&mut r);

    let mut question = stem.to_string();
    let mut answer = String::new();
    for (i, opt) in options.iter().enumerate() {
        let letter = (b'A' + i as u8) as char;
        question.push_str(&format!("\n{letter}. {opt}"));
        if *opt == label {
            answer = letter.to_string();
        }
    }
    question.push('\n');
    question.push_str(MCQ_INSTRUCTION);
    Ok(vec![ConversationTurn::user(question), ConversationTurn::assistant(answer)])
}

/// Apply the policy to every sample: strip wrappers and round numbers in
/// assistant turns, then maybe append a short-answer instruction.
pub fn apply_policy(pool: &[Sample], policy: &FormatPolicy) -> Vec<Sample> {
    pool.par_iter()
        .map(|s| {
            let mut s = s.clone();
            for t in s.turns.iter_mut().filter(|t| t.role == Role::Assistant) {
                t.text = strip_decorations(&t.text, policy);
                if let Some(places) = policy.decimal_places {
                    t.text = normalize_numeric(&t.text, places);
                }
            }
            append_instruction(&s, policy)
        })
        .collect()
}
