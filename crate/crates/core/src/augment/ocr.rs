//! Rule-based QA generation from OCR word boxes.

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::corpus::{Category, ConversationTurn, ImageRef, Modality, Sample};
use crate::error::{Error, Result};
use crate::rng;

/// One recognized word with its box as `[x0, y0, x1, y1]` in pixels,
/// y growing downwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordBox {
    pub text: String,
    pub bbox: [f64; 4],
}

impl WordBox {
    pub fn center(&self) -> (f64, f64) {
        ((self.bbox[0] + self.bbox[2]) / 2.0, (self.bbox[1] + self.bbox[3]) / 2.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcrQaConfig {
    /// Candidate words for "No" existence questions.
    pub lexicon: Vec<String>,
    pub max_existence: usize,
    pub max_pairs: usize,
    pub id_prefix: String,
    pub source: String,
}

impl Default for OcrQaConfig {
    fn default() -> Self {
        let lexicon = [
            "EXIT", "OPEN", "SALE", "PARKING", "HOTEL", "CAFE", "BANK", "SCHOOL", "POLICE", "TAXI", "PHARMACY",
            "MUSEUM",
        ];
        Self {
            lexicon: lexicon.iter().map(|s| s.to_string()).collect(),
            max_existence: 4,
            max_pairs: 4,
            id_prefix: "ocrqa".into(),
            source: "rule_based_ocr".into(),
        }
    }
}

/// Where `a` sits relative to `b`, by the dominant axis between centers.
pub fn relative_position(a: &WordBox, b: &WordBox) -> Option<&'static str> {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    let (dx, dy) = (bx - ax, by - ay);
    if dx == 0.0 && dy == 0.0 {
        return None;
    }
    Some(if dx.abs() >= dy.abs() {
        if dx > 0.0 {
            "left of"
        } else {
            "right of"
        }
    } else if dy > 0.0 {
        "above"
    } else {
        "below"
    })
}

pub fn existence_question(word: &str) -> String {
    format!("Does the word \"{word}\" appear in the image?")
}

pub fn position_question(a: &str, b: &str) -> String {
    format!(
        "Where is the word \"{a}\" relative to the word \"{b}\"? Answer with left of, right of, above, or below."
    )
}

/// Existence questions (present words answer "Yes", absent lexicon words
/// "No") and relative-position questions between word pairs.
pub fn rule_based_ocr_qa(words: &[WordBox], image: &ImageRef, cfg: &OcrQaConfig, seed: u64) -> Result<Vec<Sample>> {
    if words.is_empty() {
        return Err(Error::invalid("no OCR word records"));
    }
    for w in words {
        let [x0, y0, x1, y1] = w.bbox;
        let out_of_bounds = x0 < 0.0
            || y0 < 0.0
            || x0 > x1
            || y0 > y1
            || image.width.is_some_and(|wd| x1 > f64::from(wd))
            || image.height.is_some_and(|h| y1 > f64::from(h));
        if out_of_bounds {
            return Err(Error::invalid(format!("bbox of {:?} outside image bounds", w.text)));
        }
    }
    let key = |what: &str| format!("{}:{}:{what}", cfg.id_prefix, image.path);

    let mut present: Vec<&WordBox> = Vec::new();
    for w in words {
        if !w.text.trim().is_empty() && !present.iter().any(|p| p.text == w.text) {
            present.push(w);
        }
    }

    let make = |id: String, q: String, a: &str| Sample {
        category: Category::OcrQa,
        turns: vec![ConversationTurn::user(q), ConversationTurn::assistant(a)],
        id,
        images: vec![image.clone()],
        modality: Modality::ImageText,
        provenance: None,
        repeat_factor: 1,
        source: cfg.source.clone(),
        token_length: None,
    };
    let mut out = Vec::new();

    let mut r = rng::keyed(seed, &key("exist"));
    let n_yes = present.len().min(cfg.max_existence);
    let mut yes: Vec<usize> = index::sample(&mut r, present.len(), n_yes).into_vec();
    yes.sort_unstable();
    for (k, &i) in yes.iter().enumerate() {
        out.push(make(
            format!("{}-exist-yes-{k}", cfg.id_prefix),
            existence_question(&present[i].text),
            "Yes",
        ));
    }
    let absent: Vec<&String> = cfg
        .lexicon
        .iter()
        .filter(|l| !words.iter().any(|w| w.text.eq_ignore_ascii_case(l)))
        .collect();
    let n_no = absent.len().min(n_yes.max(1));
    let mut no: Vec<usize> = index::sample(&mut r, absent.len(), n_no).into_vec();
    no.sort_unstable();
    for (k, &i) in no.iter().enumerate() {
        out.push(make(
            format!("{}-exist-no-{k}", cfg.id_prefix),
            existence_question(absent[i]),
            "No",
        ));
    }

    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for i in 0..present.len() {
        for j in i + 1..present.len() {
            if relative_position(present[i], present[j]).is_some() {
                pairs.push((i, j));
            }
        }
    }
    let mut r = rng::keyed(seed, &key("pairs"));
    pairs.shuffle(&mut r);
    pairs.truncate(cfg.max_pairs);
    for (k, (i, j)) in pairs.into_iter().enumerate() {
        let (a, b) = (present[i], present[j]);
        let answer = relative_position(a, b).expect("filtered above");
        out.push(make(
            format!("{}-pos-{k}", cfg.id_prefix),
            position_question(&a.text, &b.text),
            answer,
        ));
    }
    Ok(out)
}
