//! Source-vs-pool similarity scoring and duplicate removal.
//!
//! A new source scores the mean, over its samples, of the best product of
//! image and text cosine similarity against any pool sample of the same
//! category. Cosines are clamped at zero so every product lies in [0, 1].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Category, Embeddings, Sample};
use crate::error::{Error, Result};

pub const DEFAULT_DEDUP_THRESHOLD: f64 = 0.9;
pub const DEFAULT_SOURCE_THRESHOLD: f64 = 0.3;
pub const SIMILARITY_KIND: &str = "cosine_clamped_at_zero";

const POOL_BLOCK: usize = 256;
const ROW_BLOCK: usize = 32;

/// Cosine similarity clamped to [0, 1].
pub fn cosine_sim(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() || u.is_empty() {
        return Err(Error::invalid(format!(
            "cosine of vectors with lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (mut dot, mut nu, mut nv) = (0f64, 0f64, 0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (f64::from(a), f64::from(b));
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::invalid("cosine of a zero-norm vector"));
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(0.0, 1.0))
}

/// Borrowed image/text vectors for one sample.
#[derive(Debug, Clone, Copy)]
pub struct SimInput<'a> {
    pub id: &'a str,
    pub image: &'a [f32],
    pub text: &'a [f32],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSimilarity {
    pub sample_id: String,
    pub best_pool_id: String,
    pub image_sim: f64,
    pub text_sim: f64,
    pub product: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub similarity: String,
    pub source_name: String,
    pub category: Category,
    pub score: f64,
    pub max_term: f64,
    pub dedup_threshold: f64,
    pub per_sample: Vec<SampleSimilarity>,
    pub duplicates: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Admission {
    Distinct,
    Review,
}

/// Row-major matrix of unit vectors in f64.
struct UnitRows {
    dim: usize,
    data: Vec<f64>,
}

impl UnitRows {
    fn build<'a>(rows: impl Iterator<Item = (&'a str, &'a [f32])>, what: &str) -> Result<Self> {
        let mut dim = None;
        let mut data = Vec::new();
        for (id, v) in rows {
            let d = *dim.get_or_insert(v.len());
            if v.len() != d || d == 0 {
                return Err(Error::invalid(format!(
                    "{what} vector of {id} has length {}, expected {d}",
                    v.len()
                )));
            }
            let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::invalid(format!("{what} vector of {id} has zero norm")));
            }
            data.extend(v.iter().map(|&x| f64::from(x) / norm));
        }
        Ok(Self {
            dim: dim.unwrap_or(0),
            data,
        })
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pairwise summation over a fixed index order.
fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

#[derive(Clone, Copy)]
struct Best {
    pool: usize,
    image: f64,
    text: f64,
    product: f64,
}

pub fn similarity_score(
    source_name: &str,
    category: Category,
    new_source: &[SimInput<'_>],
    pool: &[SimInput<'_>],
    dedup_threshold: f64,
) -> Result<SimilarityReport> {
    if new_source.is_empty() {
        return Err(Error::invalid("new source is empty"));
    }
    if pool.is_empty() {
        return Err(Error::invalid("pool is empty"));
    }
    let missing: Vec<String> = new_source
        .iter()
        .chain(pool)
        .filter(|s| s.image.is_empty() || s.text.is_empty())
        .map(|s| s.id.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingVector(missing));
    }

    let new_img = UnitRows::build(new_source.iter().map(|s| (s.id, s.image)), "image")?;
    let new_txt = UnitRows::build(new_source.iter().map(|s| (s.id, s.text)), "text")?;
    let pool_img = UnitRows::build(pool.iter().map(|s| (s.id, s.image)), "image")?;
    let pool_txt = UnitRows::build(pool.iter().map(|s| (s.id, s.text)), "text")?;
    if new_img.dim != pool_img.dim || new_txt.dim != pool_txt.dim {
        return Err(Error::invalid("new source and pool embedding dimensions differ"));
    }

    let row_blocks: Vec<usize> = (0..new_source.len()).step_by(ROW_BLOCK).collect();
    let best: Vec<Best> = row_blocks
        .par_iter()
        .flat_map_iter(|&start| {
            let end = (start + ROW_BLOCK).min(new_source.len());
            let mut best = vec![
                Best {
                    pool: 0,
                    image: 0.0,
                    text: 0.0,
                    product: -1.0,
                };
                end - start
            ];
            for block in (0..pool.len()).step_by(POOL_BLOCK) {
                let block_end = (block + POOL_BLOCK).min(pool.len());
                for (i, b) in (start..end).zip(best.iter_mut()) {
                    let (ni, nt) = (new_img.row(i), new_txt.row(i));
                    for j in block..block_end {
                        let image = dot(ni, pool_img.row(j)).clamp(0.0, 1.0);
                        let text = dot(nt, pool_txt.row(j)).clamp(0.0, 1.0);
                        let product = image * text;
                        if product > b.product {
                            *b = Best {
                                pool: j,
                                image,
                                text,
                                product,
                            };
                        }
                    }
                }
            }
            best
        })
        .collect();

    let products: Vec<f64> = best.iter().map(|b| b.product).collect();
    let score = pairwise_sum(&products) / products.len() as f64;
    let max_term = products.iter().copied().fold(0.0, f64::max);
    let per_sample: Vec<SampleSimilarity> = new_source
        .iter()
        .zip(&best)
        .map(|(s, b)| SampleSimilarity {
            sample_id: s.id.to_string(),
            best_pool_id: pool[b.pool].id.to_string(),
            image_sim: b.image,
            text_sim: b.text,
            product: b.product,
        })
        .collect();
    let duplicates = per_sample
        .iter()
        .filter(|p| p.product >= dedup_threshold)
        .map(|p| p.sample_id.clone())
        .collect();

    Ok(SimilarityReport {
        similarity: SIMILARITY_KIND.to_string(),
        source_name: source_name.to_string(),
        category,
        score,
        max_term,
        dedup_threshold,
        per_sample,
        duplicates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupResult {
    pub kept: Vec<String>,
    pub removed: Vec<String>,
    pub report: SimilarityReport,
}

/// Remove new-source samples whose best product reaches `threshold`.
pub fn dedup(
    source_name: &str,
    category: Category,
    new_source: &[SimInput<'_>],
    pool: &[SimInput<'_>],
    threshold: f64,
) -> Result<DedupResult> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid(format!("dedup threshold {threshold} outside (0, 1]")));
    }
    let report = similarity_score(source_name, category, new_source, pool, threshold)?;
    let (removed, kept): (Vec<_>, Vec<_>) = report
        .per_sample
        .iter()
        .partition(|p| p.product >= threshold);
    Ok(DedupResult {
        kept: kept.into_iter().map(|p| p.sample_id.clone()).collect(),
        removed: removed.into_iter().map(|p| p.sample_id.clone()).collect(),
        report,
    })
}

/// Sources scoring below the threshold are distinct from the pool; anything
/// else goes to a human for review.
pub fn source_admission(report: &SimilarityReport, source_threshold: f64) -> Admission {
    if report.score < source_threshold {
        Admission::Distinct
    } else {
        Admission::Review
    }
}

/// Collect vectors for the samples of `category`. Every such sample must have
/// both an image and a text vector.
pub fn gather_inputs<'a>(
    samples: &'a [Sample],
    embeddings: &'a Embeddings,
    category: Category,
) -> Result<Vec<SimInput<'a>>> {
    let mut inputs = Vec::new();
    let mut missing = Vec::new();
    for s in samples.iter().filter(|s| s.category == category) {
        match (embeddings.image_vec(&s.id), embeddings.text_vec(&s.id)) {
            (Some(image), Some(text)) => inputs.push(SimInput {
                id: &s.id,
                image,
                text,
            }),
            _ => missing.push(s.id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingVector(missing));
    }
    Ok(inputs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_basics() {
        assert_eq!(cosine_sim(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 0.0);
        assert!((cosine_sim(&[3.0, 4.0], &[6.0, 8.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(cosine_sim(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(cosine_sim(&[1.0], &[1.0, 0.0]).is_err());
    }

    /// Unit vectors at `angle` from the x axis have cosine cos(angle).
    fn at_cos(c: f64) -> Vec<f32> {
        vec![c as f32, (1.0 - c * c).sqrt() as f32]
    }

    #[test]
    fn single_sample_picks_best_product() {
        let x = vec![1.0f32, 0.0];
        let (ai, at) = (at_cos(0.8), at_cos(0.5));
        let (bi, bt) = (at_cos(0.6), at_cos(0.9));
        let new = [SimInput { id: "n", image: &x, text: &x }];
        let pool = [
            SimInput { id: "A", image: &ai, text: &at },
            SimInput { id: "B", image: &bi, text: &bt },
        ];
        let r = similarity_score("src", Category::Science, &new, &pool, 0.9).unwrap();
        assert!((r.score - 0.54).abs() < 1e-6);
        assert_eq!(r.per_sample[0].best_pool_id, "B");
        assert!((r.per_sample[0].image_sim - 0.6).abs() < 1e-6);
        assert!((r.max_term - 0.54).abs() < 1e-6);
    }

    #[test]
    fn identical_source_scores_one() {
        let vecs: Vec<Vec<f32>> = (0..5).map(|i| vec![i as f32 + 1.0, 2.0, -1.0]).collect();
        let ids: Vec<String> = (0..5).map(|i| format!("s{i}")).collect();
        let side: Vec<SimInput> = ids
            .iter()
            .zip(&vecs)
            .map(|(id, v)| SimInput { id, image: v, text: v })
            .collect();
        let r = similarity_score("dup", Category::ChartTable, &side, &side, 0.9).unwrap();
        assert!((r.score - 1.0).abs() < 1e-9);
        let d = dedup("dup", Category::ChartTable, &side, &side, 0.9).unwrap();
        assert_eq!(d.removed.len(), 5);
        assert!(d.kept.is_empty());
    }

    #[test]
    fn dedup_threshold_partitions() {
        let x = vec![1.0f32, 0.0];
        let hi = at_cos(0.95f64.sqrt());
        let lo = at_cos(0.4f64.sqrt());
        let new = [
            SimInput { id: "first", image: &hi, text: &hi },
            SimInput { id: "second", image: &lo, text: &lo },
        ];
        let pool = [SimInput { id: "p", image: &x, text: &x }];
        let d = dedup("s", Category::Science, &new, &pool, 0.9).unwrap();
        assert!((d.report.per_sample[0].product - 0.95).abs() < 1e-6);
        assert_eq!(d.removed, ["first"]);
        assert_eq!(d.kept, ["second"]);

        let d = dedup("s", Category::Science, &new, &pool, 1.0).unwrap();
        assert!(d.removed.is_empty());

        assert!(dedup("s", Category::Science, &new, &pool, 0.0).is_err());
        assert!(dedup("s", Category::Science, &new, &pool, 1.5).is_err());
    }

    #[test]
    fn errors() {
        let x = vec![1.0f32, 0.0];
        let one = [SimInput { id: "a", image: &x, text: &x }];
        assert!(similarity_score("s", Category::Science, &[], &one, 0.9).is_err());
        assert!(similarity_score("s", Category::Science, &one, &[], 0.9).is_err());
        let missing = [SimInput { id: "m", image: &x, text: &[] }];
        match similarity_score("s", Category::Science, &missing, &one, 0.9).unwrap_err() {
            Error::MissingVector(ids) => assert_eq!(ids, ["m"]),
            e => panic!("{e}"),
        }
    }

    fn report_with_score(score: f64) -> SimilarityReport {
        SimilarityReport {
            similarity: SIMILARITY_KIND.into(),
            source_name: "s".into(),
            category: Category::OcrQa,
            score,
            max_term: score,
            dedup_threshold: 0.9,
            per_sample: vec![],
            duplicates: vec![],
        }
    }

    #[test]
    fn admission_thresholds() {
        assert_eq!(source_admission(&report_with_score(0.45), 0.3), Admission::Review);
        assert_eq!(source_admission(&report_with_score(0.02), 0.3), Admission::Distinct);
        assert_eq!(source_admission(&report_with_score(0.3), 0.3), Admission::Review);
        assert_eq!(source_admission(&report_with_score(0.10), 0.3), Admission::Distinct);
    }

    #[test]
    fn pairwise_sum_matches_naive() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64).sin().abs()).collect();
        assert!((pairwise_sum(&v) - v.iter().sum::<f64>()).abs() < 1e-9);
    }
}
