use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Category, Modality, Sample};
use crate::pack::{estimate_sample_length, CharTokenizer};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountPair {
    pub count: u64,
    /// Count with repeat factors applied.
    pub effective: u64,
}

impl CountPair {
    fn add(&mut self, s: &Sample) {
        self.count += 1;
        self.effective += s.effective_count();
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityCounts {
    pub text_only: u64,
    pub image_text: u64,
}

/// Half-open token-length bucket `[lo, hi)`; `hi` is `None` for the last one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBucket {
    pub lo: u64,
    pub hi: Option<u64>,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolStats {
    pub total: u64,
    pub effective_total: u64,
    pub per_category: BTreeMap<Category, CountPair>,
    pub per_source: BTreeMap<String, CountPair>,
    pub modality: ModalityCounts,
    /// Text-only samples over all samples; `None` for an empty pool.
    pub text_only_fraction: Option<f64>,
    pub token_histogram: Vec<HistogramBucket>,
}

const BUCKET_EDGES: [u64; 8] = [256, 512, 1024, 2048, 4096, 8192, 16384, 32768];

pub fn pool_stats(pool: &[Sample]) -> PoolStats {
    let mut per_category: BTreeMap<Category, CountPair> = BTreeMap::new();
    let mut per_source: BTreeMap<String, CountPair> = BTreeMap::new();
    let mut modality = ModalityCounts::default();
    let mut effective_total = 0;

    let mut histogram: Vec<HistogramBucket> = std::iter::once(0)
        .chain(BUCKET_EDGES)
        .zip(BUCKET_EDGES.iter().map(|&e| Some(e)).chain(std::iter::once(None)))
        .map(|(lo, hi)| HistogramBucket { lo, hi, count: 0 })
        .collect();

    for s in pool {
        per_category.entry(s.category).or_default().add(s);
        per_source.entry(s.source.clone()).or_default().add(s);
        effective_total += s.effective_count();
        match s.modality {
            Modality::TextOnly => modality.text_only += 1,
            Modality::ImageText => modality.image_text += 1,
        }
        let len = estimate_sample_length(s, &CharTokenizer);
        let bucket = BUCKET_EDGES.iter().position(|&e| len < e).unwrap_or(BUCKET_EDGES.len());
        histogram[bucket].count += 1;
    }

    let total = pool.len() as u64;
    PoolStats {
        total,
        effective_total,
        per_category,
        per_source,
        modality,
        text_only_fraction: (total > 0).then(|| modality.text_only as f64 / total as f64),
        token_histogram: histogram,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::*;

    #[test]
    fn text_only_fraction() {
        let mut pool = Vec::new();
        for i in 0..7 {
            pool.push(image_sample(&format!("i{i}"), Category::GeneralVqa, "q", "a"));
        }
        for i in 0..3 {
            pool.push(text_sample(&format!("t{i}"), "q", "a"));
        }
        let st = pool_stats(&pool);
        assert_eq!(st.total, 10);
        assert_eq!(st.text_only_fraction, Some(0.3));
        assert_eq!(st.modality.text_only + st.modality.image_text, st.total);
        let hist: u64 = st.token_histogram.iter().map(|b| b.count).sum();
        assert_eq!(hist, 10);
        let cat: u64 = st.per_category.values().map(|c| c.count).sum();
        assert_eq!(cat, 10);
    }

    #[test]
    fn empty_pool() {
        let st = pool_stats(&[]);
        assert_eq!(st.total, 0);
        assert_eq!(st.text_only_fraction, None);
        assert!(st.token_histogram.iter().all(|b| b.count == 0));
    }

    #[test]
    fn repeat_counts_effective() {
        let mut a = text_sample("a", "q", "a");
        a.repeat_factor = 4;
        let b = text_sample("b", "q", "a");
        let st = pool_stats(&[a, b]);
        assert_eq!(st.total, 2);
        assert_eq!(st.effective_total, 5);
        assert_eq!(st.per_category[&Category::TextOnly].effective, 5);
    }
}
