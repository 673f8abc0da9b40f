//! Stage composition and distribution reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{check_unique_ids, load_corpus, Category, CountPair, DataSourceManifest, Modality, Sample, Stage};
use crate::error::{Error, Result};

pub const DEFAULT_TEXT_ONLY_FLOOR: f64 = 0.20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixConstraints {
    pub text_only_floor: f64,
    /// Upper bound on a category's effective share. Empty by default.
    pub max_category_fraction: BTreeMap<Category, f64>,
    pub strict: bool,
}

impl Default for MixConstraints {
    fn default() -> Self {
        Self {
            text_only_floor: DEFAULT_TEXT_ONLY_FLOOR,
            max_category_fraction: BTreeMap::new(),
            strict: false,
        }
    }
}

impl MixConstraints {
    pub fn validate(&self) -> Result<()> {
        let ok = |f: f64| (0.0..=1.0).contains(&f);
        if !ok(self.text_only_floor) {
            return Err(Error::invalid("text_only_floor must be in [0, 1]"));
        }
        if let Some((c, _)) = self.max_category_fraction.iter().find(|(_, &f)| !ok(f)) {
            return Err(Error::invalid(format!("max fraction for {c} must be in [0, 1]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryShare {
    pub count: u64,
    pub effective: u64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<Stage>,
    pub categories: BTreeMap<Category, CategoryShare>,
    pub per_source: BTreeMap<String, CountPair>,
    /// Effective text-only share.
    pub text_only_fraction: f64,
    pub total_effective: u64,
    pub constraints: Vec<ConstraintResult>,
}

impl MixReport {
    pub fn all_passed(&self) -> bool {
        self.constraints.iter().all(|c| c.passed)
    }

    /// Fixed-width table for terminals.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        if let Some(stage) = self.stage {
            let _ = writeln!(out, "stage: {}", serde_json::to_value(stage).unwrap().as_str().unwrap_or(""));
        }
        let _ = writeln!(out, "{:<16} {:>10} {:>12} {:>8}", "category", "count", "effective", "share");
        for (c, s) in &self.categories {
            let _ = writeln!(out, "{:<16} {:>10} {:>12} {:>7.2}%", c.as_str(), s.count, s.effective, s.fraction * 100.0);
        }
        let _ = writeln!(out, "{:<16} {:>10} {:>12}", "total", self.categories.values().map(|s| s.count).sum::<u64>(), self.total_effective);
        let _ = writeln!(out, "text-only share: {:.2}%", self.text_only_fraction * 100.0);
        for c in &self.constraints {
            let _ = writeln!(out, "[{}] {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
        }
        out
    }
}

/// Category shares over effective counts.
pub fn distribution_report(pool: &[Sample]) -> Result<MixReport> {
    if pool.is_empty() {
        return Err(Error::invalid("cannot report on an empty pool"));
    }
    let mut counts: BTreeMap<Category, CountPair> = BTreeMap::new();
    let mut per_source: BTreeMap<String, CountPair> = BTreeMap::new();
    let mut text_only = 0u64;
    let mut total = 0u64;
    for s in pool {
        let eff = s.effective_count();
        for entry in [counts.entry(s.category).or_default(), per_source.entry(s.source.clone()).or_default()] {
            entry.count += 1;
            entry.effective += eff;
        }
        if s.modality == Modality::TextOnly {
            text_only += eff;
        }
        total += eff;
    }
    let categories = counts
        .into_iter()
        .map(|(c, p)| {
            let share = CategoryShare {
                count: p.count,
                effective: p.effective,
                fraction: p.effective as f64 / total as f64,
            };
            (c, share)
        })
        .collect();
    Ok(MixReport {
        stage: None,
        categories,
        per_source,
        text_only_fraction: text_only as f64 / total as f64,
        total_effective: total,
        constraints: Vec::new(),
    })
}

/// Fill in `report.constraints`. In strict mode the first failure is an error.
pub fn check_constraints(report: &mut MixReport, constraints: &MixConstraints) -> Result<()> {
    constraints.validate()?;
    let mut results = vec![ConstraintResult {
        name: "text_only_floor".into(),
        passed: report.text_only_fraction >= constraints.text_only_floor,
        detail: format!("text-only {:.4} vs floor {:.4}", report.text_only_fraction, constraints.text_only_floor),
    }];
    for (c, &max) in &constraints.max_category_fraction {
        let f = report.categories.get(c).map_or(0.0, |s| s.fraction);
        results.push(ConstraintResult {
            name: format!("max_fraction:{c}"),
            passed: f <= max,
            detail: format!("{c} {f:.4} vs max {max:.4}"),
        });
    }
    report.constraints = results;
    for c in report.constraints.iter().filter(|c| !c.passed) {
        if constraints.strict {
            return Err(Error::Constraint {
                name: c.name.clone(),
                detail: c.detail.clone(),
            });
        }
        log::warn!("constraint {} failed: {}", c.name, c.detail);
    }
    Ok(())
}

/// Contributions of one source: its quota (the override, else the whole
/// source) drawn uniformly with a source-keyed seed, original order kept,
/// repeat factor multiplied in and `source` set to the manifest name.
pub fn take_source(manifest: &DataSourceManifest, mut samples: Vec<Sample>, seed: u64) -> Vec<Sample> {
    let size = samples.len();
    let quota = manifest.quota_override.map_or(size, |q| (q as usize).min(size));
    if quota < size {
        let mut rng = crate::rng::keyed(seed, &format!("mix:{}", manifest.name));
        let mut keep = index::sample(&mut rng, size, quota).into_vec();
        keep.sort_unstable();
        let mut it = keep.into_iter().peekable();
        samples = samples
            .into_iter()
            .enumerate()
            .filter_map(|(i, s)| (it.next_if_eq(&i).is_some()).then_some(s))
            .collect();
    }
    for s in &mut samples {
        s.repeat_factor = s.repeat_factor.saturating_mul(manifest.repeat_factor);
        s.source = manifest.name.clone();
    }
    samples
}

/// Build the corpus for `stage` from the manifests tagged with it, in
/// manifest order.
pub fn compose_stage(
    manifests: &[DataSourceManifest],
    stage: Stage,
    constraints: &MixConstraints,
    seed: u64,
) -> Result<(Vec<Sample>, MixReport)> {
    let chosen: Vec<&DataSourceManifest> = manifests.iter().filter(|m| m.stage == stage).collect();
    if chosen.is_empty() {
        return Err(Error::invalid("no sources are tagged with this stage"));
    }
    let loaded: Vec<Vec<Sample>> = chosen
        .par_iter()
        .map(|m| load_corpus(&m.corpus_path).map(|pool| take_source(m, pool, seed)))
        .collect::<Result<_>>()?;
    let pool: Vec<Sample> = loaded.into_iter().flatten().collect();
    check_unique_ids(&pool)?;
    let mut report = distribution_report(&pool)?;
    report.stage = Some(stage);
    check_constraints(&mut report, constraints)?;
    Ok((pool, report))
}
