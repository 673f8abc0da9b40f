//! Subset quantity rules and cluster-balanced subset selection.
//!
//! Large sources are cut down to a quota; the quota is then spread across
//! K-means clusters of L2-normalized image embeddings in proportion to
//! cluster size, with every nonempty cluster guaranteed at least one pick.

use std::collections::{BTreeMap, HashSet};

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Category, EmbeddingStore, Sample};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuotaRules {
    pub no_selection_below: u64,
    pub keep_at_most_fraction: f64,
    pub large_source_threshold: u64,
    pub large_source_cap: u64,
}

impl Default for QuotaRules {
    fn default() -> Self {
        Self {
            no_selection_below: 20_000,
            keep_at_most_fraction: 0.5,
            large_source_threshold: 100_000,
            large_source_cap: 50_000,
        }
    }
}

impl QuotaRules {
    pub fn validate(&self) -> Result<()> {
        if !(self.keep_at_most_fraction > 0.0 && self.keep_at_most_fraction <= 1.0) {
            return Err(Error::invalid("keep_at_most_fraction must be in (0, 1]"));
        }
        if self.large_source_cap == 0 || self.large_source_threshold == 0 {
            return Err(Error::invalid("quota caps must be positive"));
        }
        Ok(())
    }
}

/// How many samples to keep from a source of `size`.
pub fn quota_for_source(size: u64, rules: &QuotaRules, override_quota: Option<u64>) -> Result<u64> {
    if let Some(q) = override_quota {
        if q > size {
            return Err(Error::invalid(format!("quota override {q} exceeds source size {size}")));
        }
        return Ok(q);
    }
    rules.validate()?;
    if size < rules.no_selection_below {
        return Ok(size);
    }
    let half = (size as f64 * rules.keep_at_most_fraction).floor() as u64;
    if size > rules.large_source_threshold {
        Ok(half.min(rules.large_source_cap))
    } else {
        Ok(half)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub objective: f64,
    /// Objective after the initial assignment and after every iteration.
    pub history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn distinct_count(points: &[Vec<f64>]) -> usize {
    points
        .iter()
        .map(|p| p.iter().map(|x| x.to_bits()).collect::<Vec<u64>>())
        .collect::<HashSet<_>>()
        .len()
}

/// k-means++ seeding: first center uniform, the rest drawn with probability
/// proportional to squared distance from the nearest chosen center.
fn plus_plus(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng::seeded(seed);
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = nearest.iter().rposition(|&d| d > 0.0).expect("k <= distinct points");
        for (i, &d) in nearest.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        let center = points[pick].clone();
        nearest
            .par_iter_mut()
            .zip(points)
            .for_each(|(n, p)| *n = n.min(sq_dist(p, &center)));
        centers.push(center);
    }
    centers
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let nearest: Vec<(usize, f64)> = points
        .par_iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (c, centroid) in centroids.iter().enumerate() {
                let d = sq_dist(p, centroid);
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .collect();
    let objective = nearest.iter().map(|n| n.1).sum();
    (nearest.into_iter().map(|n| n.0).collect(), objective)
}

fn update(points: &[Vec<f64>], assignments: &[usize], centroids: &mut [Vec<f64>]) {
    let dim = points[0].len();
    let mut sums = vec![vec![0f64; dim]; centroids.len()];
    let mut counts = vec![0usize; centroids.len()];
    for (p, &c) in points.iter().zip(assignments) {
        counts[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(p) {
            *s += x;
        }
    }
    for ((centroid, sum), count) in centroids.iter_mut().zip(sums).zip(counts) {
        // Empty clusters keep their previous centroid.
        if count > 0 {
            *centroid = sum.into_iter().map(|s| s / count as f64).collect();
        }
    }
}

/// Lloyd's algorithm with k-means++ seeding. Stops after `max_iter`
/// iterations, when assignments stop changing, or when the objective
/// improves by less than `tol`.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize, tol: f64) -> Result<KMeansResult> {
    if points.is_empty() {
        return Err(Error::invalid("kmeans on empty input"));
    }
    if k == 0 {
        return Err(Error::invalid("kmeans needs k >= 1"));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::invalid("kmeans points have mixed dimensions"));
    }
    let distinct = distinct_count(points);
    if k > distinct {
        return Err(Error::invalid(format!("k = {k} exceeds {distinct} distinct vectors")));
    }

    let mut centroids = plus_plus(points, k, seed);
    let (mut assignments, mut objective) = assign(points, &centroids);
    let mut history = vec![objective];
    for _ in 0..max_iter {
        update(points, &assignments, &mut centroids);
        let (next, next_objective) = assign(points, &centroids);
        let unchanged = next == assignments;
        let improvement = objective - next_objective;
        assignments = next;
        objective = next_objective;
        history.push(objective);
        if unchanged || improvement < tol {
            break;
        }
    }
    Ok(KMeansResult {
        centroids,
        assignments,
        objective,
        history,
    })
}

/// Split `quota` across clusters proportionally to `sizes`, each nonempty
/// cluster getting at least one when the quota allows it. Leftover units go
/// to the largest fractional parts first, ties to the lower cluster index.
pub fn allocate(sizes: &[usize], quota: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    assert!(quota <= n, "quota exceeds population");
    if quota == 0 || n == 0 {
        return vec![0; sizes.len()];
    }
    let nonempty = sizes.iter().filter(|&&s| s > 0).count();
    let exact: Vec<f64> = sizes.iter().map(|&s| quota as f64 * s as f64 / n as f64).collect();
    let mut alloc: Vec<usize> = exact
        .iter()
        .zip(sizes)
        .map(|(&e, &s)| (e.floor() as usize).min(s))
        .collect();
    if quota >= nonempty {
        for (a, &s) in alloc.iter_mut().zip(sizes) {
            if s > 0 && *a == 0 {
                *a = 1;
            }
        }
    }

    let mut assigned: usize = alloc.iter().sum();
    // Floors of one can overshoot; take back from the largest allocations.
    while assigned > quota {
        let c = (0..alloc.len())
            .filter(|&c| alloc[c] > 1)
            .max_by(|&a, &b| alloc[a].cmp(&alloc[b]).then(b.cmp(&a)))
            .expect("quota >= nonempty clusters");
        alloc[c] -= 1;
        assigned -= 1;
    }

    let mut by_fraction: Vec<usize> = (0..sizes.len()).collect();
    by_fraction.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    while assigned < quota {
        let before = assigned;
        for &c in &by_fraction {
            if assigned == quota {
                break;
            }
            if alloc[c] < sizes[c] {
                alloc[c] += 1;
                assigned += 1;
            }
        }
        assert!(assigned > before, "no cluster has remaining capacity");
    }
    alloc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Clustered,
    Uniform,
}

/// Categories where image-embedding clusters are informative enough to
/// drive selection.
pub fn clustered_by_default(category: Category) -> bool {
    matches!(
        category,
        Category::Mathematics | Category::Science | Category::ChartTable | Category::OcrQa | Category::NaiveOcr
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectConfig {
    pub rules: QuotaRules,
    pub target_cluster_size: usize,
    /// Force clustered (`true`) or uniform (`false`) selection instead of the
    /// per-category default.
    pub clustered: Option<bool>,
    /// Clusters taken in full before the rest of the quota is spread.
    pub boost_clusters: Vec<usize>,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            rules: QuotaRules::default(),
            target_cluster_size: 1000,
            clustered: None,
            boost_clusters: Vec::new(),
            max_iter: 100,
            tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPlan {
    pub source: String,
    pub quota: usize,
    pub mode: SelectionMode,
    pub k: usize,
    pub seed: u64,
    pub cluster_sizes: Vec<usize>,
    pub cluster_quotas: Vec<usize>,
    pub assignments: BTreeMap<String, usize>,
    /// Selected ids in source order.
    pub selected: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

fn normalized(v: &[f32]) -> Vec<f64> {
    let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    if norm == 0.0 {
        return v.iter().map(|&x| f64::from(x)).collect();
    }
    v.iter().map(|&x| f64::from(x) / norm).collect()
}

fn pick_indices(seed: u64, key: &str, population: usize, amount: usize) -> Vec<usize> {
    let mut rng = rng::keyed(seed, key);
    let mut picks = index::sample(&mut rng, population, amount).into_vec();
    picks.sort_unstable();
    picks
}

/// Choose `quota` samples from `source`. Clustered selection needs an image
/// vector for every sample; otherwise it falls back to seeded uniform picks
/// and says so in `notes`.
pub fn select_subset(
    source_name: &str,
    source: &[Sample],
    image_embeddings: Option<&EmbeddingStore>,
    quota: usize,
    cfg: &SelectConfig,
    seed: u64,
) -> Result<SelectionPlan> {
    let n = source.len();
    if quota > n {
        return Err(Error::invalid(format!("quota {quota} exceeds source size {n}")));
    }
    let mut notes = Vec::new();
    let want_clusters = cfg.clustered.unwrap_or_else(|| {
        source
            .first()
            .map(|s| clustered_by_default(s.category))
            .unwrap_or(false)
    });

    let vectors: Option<Vec<Vec<f64>>> = if want_clusters && quota > 0 {
        match image_embeddings {
            Some(store) => {
                let found: Option<Vec<Vec<f64>>> = source
                    .iter()
                    .map(|s| store.get(&s.id).map(normalized))
                    .collect();
                if found.is_none() {
                    notes.push("fallback: some samples lack image embeddings; using seeded uniform selection".into());
                }
                found
            }
            None => {
                notes.push("fallback: no image embeddings; using seeded uniform selection".into());
                None
            }
        }
    } else {
        if !want_clusters {
            notes.push("uniform: clustered selection disabled for this source".into());
        }
        None
    };

    let Some(points) = vectors else {
        let picks = pick_indices(seed, "uniform", n, quota);
        return Ok(SelectionPlan {
            source: source_name.to_string(),
            quota,
            mode: SelectionMode::Uniform,
            k: 0,
            seed,
            cluster_sizes: Vec::new(),
            cluster_quotas: Vec::new(),
            assignments: BTreeMap::new(),
            selected: picks.into_iter().map(|i| source[i].id.clone()).collect(),
            notes,
        });
    };

    let target = cfg.target_cluster_size.max(1);
    let mut k = quota.div_ceil(target).clamp(1, quota);
    let distinct = distinct_count(&points);
    if k > distinct {
        notes.push(format!("k reduced from {k} to {distinct} distinct vectors"));
        k = distinct;
    }
    let km = kmeans(&points, k, seed, cfg.max_iter, cfg.tol)?;

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in km.assignments.iter().enumerate() {
        members[c].push(i);
    }
    let sizes: Vec<usize> = members.iter().map(Vec::len).collect();

    let mut quotas = vec![0usize; k];
    let mut boosted = 0;
    for &c in &cfg.boost_clusters {
        if c >= k {
            return Err(Error::invalid(format!("boost cluster {c} out of range (k = {k})")));
        }
        if quotas[c] == 0 {
            quotas[c] = sizes[c];
            boosted += sizes[c];
        }
    }
    if boosted > quota {
        return Err(Error::invalid(format!(
            "boosted clusters hold {boosted} samples, more than the quota {quota}"
        )));
    }
    let rest_sizes: Vec<usize> = (0..k)
        .map(|c| if cfg.boost_clusters.contains(&c) { 0 } else { sizes[c] })
        .collect();
    for (q, extra) in quotas.iter_mut().zip(allocate(&rest_sizes, quota - boosted)) {
        *q += extra;
    }

    let mut chosen: Vec<usize> = Vec::with_capacity(quota);
    for (c, cluster) in members.iter().enumerate() {
        let picks = pick_indices(seed, &format!("cluster:{c}"), cluster.len(), quotas[c]);
        chosen.extend(picks.into_iter().map(|p| cluster[p]));
    }
    chosen.sort_unstable();

    Ok(SelectionPlan {
        source: source_name.to_string(),
        quota,
        mode: SelectionMode::Clustered,
        k,
        seed,
        cluster_sizes: sizes,
        cluster_quotas: quotas,
        assignments: source
            .iter()
            .zip(&km.assignments)
            .map(|(s, &c)| (s.id.clone(), c))
            .collect(),
        selected: chosen.into_iter().map(|i| source[i].id.clone()).collect(),
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::*;
    use proptest::prelude::*;

    #[test]
    fn quota_examples() {
        let r = QuotaRules::default();
        assert_eq!(quota_for_source(19_999, &r, None).unwrap(), 19_999);
        assert_eq!(quota_for_source(120_000, &r, None).unwrap(), 50_000);
        assert_eq!(quota_for_source(263_000, &r, Some(263_000)).unwrap(), 263_000);
        assert_eq!(quota_for_source(60_000, &r, None).unwrap(), 30_000);
        assert_eq!(quota_for_source(100_000, &r, None).unwrap(), 50_000);
        assert!(quota_for_source(10, &r, Some(11)).is_err());
    }

    #[test]
    fn kmeans_single_cluster_is_mean() {
        let pts = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![1.0, 3.0]];
        let km = kmeans(&pts, 1, 1, 50, 0.0).unwrap();
        assert!(km.assignments.iter().all(|&a| a == 0));
        assert!((km.centroids[0][0] - 1.0).abs() < 1e-12);
        assert!((km.centroids[0][1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kmeans_k_equals_n() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let km = kmeans(&pts, 6, 3, 50, 0.0).unwrap();
        assert_eq!(km.objective, 0.0);
        let distinct: HashSet<usize> = km.assignments.iter().copied().collect();
        assert_eq!(distinct.len(), 6);
    }

    #[test]
    fn kmeans_errors() {
        let pts = vec![vec![1.0], vec![1.0]];
        assert!(kmeans(&pts, 2, 0, 10, 0.0).is_err());
        assert!(kmeans(&[], 1, 0, 10, 0.0).is_err());
    }

    #[test]
    fn allocate_two_equal() {
        assert_eq!(allocate(&[100, 100], 10), vec![5, 5]);
    }

    #[test]
    fn allocate_floor_of_one() {
        // 1 of 1000 would round to zero without the floor.
        let a = allocate(&[998, 1, 1], 10);
        assert_eq!(a.iter().sum::<usize>(), 10);
        assert_eq!(&a[1..], &[1, 1]);
    }

    proptest! {
        #[test]
        fn allocate_sums_to_quota(sizes in proptest::collection::vec(0usize..50, 1..12), frac in 0.0f64..=1.0) {
            let n: usize = sizes.iter().sum();
            let quota = (n as f64 * frac).floor() as usize;
            let a = allocate(&sizes, quota);
            prop_assert_eq!(a.iter().sum::<usize>(), quota);
            for (q, s) in a.iter().zip(&sizes) {
                prop_assert!(q <= s);
            }
            let nonempty = sizes.iter().filter(|&&s| s > 0).count();
            if quota >= nonempty {
                for (q, s) in a.iter().zip(&sizes) {
                    prop_assert!(*s == 0 || *q >= 1);
                }
            }
        }
    }

    fn blob_source(per_blob: usize) -> (Vec<Sample>, EmbeddingStore) {
        let mut pool = Vec::new();
        let mut store = EmbeddingStore::new(2);
        for i in 0..per_blob * 2 {
            let id = format!("s{i}");
            pool.push(image_sample(&id, Category::ChartTable, "q", "a"));
            let t = i as f32 * 0.37;
            let v = if i % 2 == 0 {
                [1.0 + 0.05 * t.sin(), 0.05 * t.cos()]
            } else {
                [0.05 * t.cos(), 1.0 + 0.05 * t.sin()]
            };
            store.insert(id, &v).unwrap();
        }
        (pool, store)
    }

    #[test]
    fn two_blobs_split_evenly() {
        let (pool, store) = blob_source(100);
        let cfg = SelectConfig {
            target_cluster_size: 5,
            ..Default::default()
        };
        let plan = select_subset("blobs", &pool, Some(&store), 10, &cfg, 42).unwrap();
        assert_eq!(plan.k, 2);
        assert_eq!(plan.cluster_sizes, vec![100, 100]);
        assert_eq!(plan.cluster_quotas, vec![5, 5]);
        let even = plan
            .selected
            .iter()
            .filter(|id| id[1..].parse::<usize>().unwrap() % 2 == 0)
            .count();
        assert_eq!(even, 5);
    }

    #[test]
    fn full_quota_selects_everything() {
        let (pool, store) = blob_source(10);
        let plan = select_subset("b", &pool, Some(&store), 20, &SelectConfig::default(), 1).unwrap();
        assert_eq!(plan.mode, SelectionMode::Clustered);
        let all: Vec<String> = pool.iter().map(|s| s.id.clone()).collect();
        assert_eq!(plan.selected, all);
    }

    #[test]
    fn fallback_without_embeddings() {
        let (pool, _) = blob_source(10);
        let plan = select_subset("b", &pool, None, 10, &SelectConfig::default(), 1).unwrap();
        assert_eq!(plan.mode, SelectionMode::Uniform);
        assert_eq!(plan.selected.len(), 10);
        assert!(plan.notes[0].starts_with("fallback"));
    }

    #[test]
    fn same_seed_same_plan() {
        let (pool, store) = blob_source(50);
        let cfg = SelectConfig {
            target_cluster_size: 7,
            ..Default::default()
        };
        let a = select_subset("b", &pool, Some(&store), 30, &cfg, 9).unwrap();
        let b = select_subset("b", &pool, Some(&store), 30, &cfg, 9).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = select_subset("b", &pool, Some(&store), 30, &cfg, 10).unwrap();
        assert_eq!((a.quota, a.k), (c.quota, c.k));
    }

    #[test]
    fn boosted_cluster_taken_whole() {
        let (pool, store) = blob_source(10);
        let cfg = SelectConfig {
            target_cluster_size: 4,
            boost_clusters: vec![0],
            ..Default::default()
        };
        let plan = select_subset("b", &pool, Some(&store), 8, &cfg, 3);
        // k = 2; a boosted cluster of 10 does not fit a quota of 8.
        assert!(plan.is_err());
        let plan = select_subset("b", &pool, Some(&store), 14, &cfg, 3).unwrap();
        assert_eq!(plan.cluster_quotas[0], plan.cluster_sizes[0]);
        assert_eq!(plan.selected.len(), 14);
    }

    #[test]
    fn quota_above_size_errors() {
        let (pool, store) = blob_source(2);
        assert!(select_subset("b", &pool, Some(&store), 5, &SelectConfig::default(), 0).is_err());
    }
}
