//! Sample-length estimation and sequence packing.
//!
//! Three packers share one plan format: the balance-aware knapsack, the naive
//! sequential greedy baseline, and shortest-pack-first. Plans carry balance
//! statistics so packers can be compared on the same input.

pub mod knapsack;
mod tiles;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ConversationTurn, ImageRef, Sample};
use crate::error::{Error, Result};

pub use tiles::{
    candidate_grids, estimate_image_tokens, estimate_sample_length, select_tile_grid,
    CharTokenizer, TileGrid, TokenCounter, DEFAULT_MAX_TILES, TILE_SIZE, TOKENS_PER_TILE,
};

pub const DEFAULT_DELTA: usize = 20;
pub const DEFAULT_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PackMethod {
    #[default]
    Balanced,
    #[serde(alias = "greedy")]
    NaiveGreedy,
    Spfhp,
}

impl std::str::FromStr for PackMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "balanced" => Ok(PackMethod::Balanced),
            "greedy" | "naive_greedy" => Ok(PackMethod::NaiveGreedy),
            "spfhp" => Ok(PackMethod::Spfhp),
            _ => Err(Error::invalid(format!("unknown pack method {s:?}"))),
        }
    }
}

/// A unit to pack. Repeated samples appear once per repeat.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackItem {
    pub id: String,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackEntry {
    /// Position in the packer's input.
    pub index: usize,
    pub id: String,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackStats {
    pub count: usize,
    pub fill_mean: f64,
    pub fill_std: f64,
    /// Population std of each knapsack's longest sample.
    pub max_len_std: f64,
    pub efficiency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackPlan {
    pub method: PackMethod,
    pub capacity: u64,
    pub delta: usize,
    pub knapsacks: Vec<Vec<PackEntry>>,
    /// Pre-opened knapsacks that stayed empty and were removed.
    pub dropped_empty: usize,
    pub stats: Option<PackStats>,
}

impl PackPlan {
    fn new(
        method: PackMethod,
        capacity: u64,
        delta: usize,
        items: &[PackItem],
        bins: Vec<Vec<usize>>,
        dropped_empty: usize,
    ) -> Self {
        let knapsacks = bins
            .into_iter()
            .map(|bin| {
                bin.into_iter()
                    .map(|i| PackEntry {
                        index: i,
                        id: items[i].id.clone(),
                        length: items[i].length,
                    })
                    .collect()
            })
            .collect();
        let mut plan = PackPlan {
            method,
            capacity,
            delta,
            knapsacks,
            dropped_empty,
            stats: None,
        };
        plan.stats = pack_stats(&plan).ok();
        plan
    }

    pub fn totals(&self) -> Vec<u64> {
        self.knapsacks
            .iter()
            .map(|k| k.iter().map(|e| e.length).sum())
            .collect()
    }

    /// Knapsacks as plain lengths in placement order.
    pub fn length_bins(&self) -> Vec<Vec<u64>> {
        self.knapsacks
            .iter()
            .map(|k| k.iter().map(|e| e.length).collect())
            .collect()
    }

    /// Knapsacks as input indices in placement order.
    pub fn index_bins(&self) -> Vec<Vec<usize>> {
        self.knapsacks
            .iter()
            .map(|k| k.iter().map(|e| e.index).collect())
            .collect()
    }
}

fn items_from_lengths(lengths: &[u64]) -> Vec<PackItem> {
    lengths
        .iter()
        .enumerate()
        .map(|(i, &length)| PackItem {
            id: i.to_string(),
            length,
        })
        .collect()
}

pub fn pack_items(items: &[PackItem], method: PackMethod, capacity: u64, delta: usize) -> Result<PackPlan> {
    let lengths: Vec<u64> = items.iter().map(|i| i.length).collect();
    let (bins, dropped, delta) = match method {
        PackMethod::Balanced => {
            let a = knapsack::balanced(&lengths, capacity, delta)?;
            (a.bins, a.dropped_empty, delta)
        }
        PackMethod::NaiveGreedy => (knapsack::naive_greedy(&lengths, capacity)?, 0, 0),
        PackMethod::Spfhp => (knapsack::spfhp(&lengths, capacity)?, 0, 0),
    };
    Ok(PackPlan::new(method, capacity, delta, items, bins, dropped))
}

pub fn balanced_knapsack(lengths: &[u64], capacity: u64, delta: usize) -> Result<PackPlan> {
    pack_items(&items_from_lengths(lengths), PackMethod::Balanced, capacity, delta)
}

pub fn naive_greedy_knapsack(lengths: &[u64], capacity: u64) -> Result<PackPlan> {
    pack_items(&items_from_lengths(lengths), PackMethod::NaiveGreedy, capacity, 0)
}

pub fn spfhp(lengths: &[u64], capacity: u64) -> Result<PackPlan> {
    pack_items(&items_from_lengths(lengths), PackMethod::Spfhp, capacity, 0)
}

fn population_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn pack_stats(plan: &PackPlan) -> Result<PackStats> {
    if plan.knapsacks.is_empty() {
        return Err(Error::invalid("pack stats of an empty plan"));
    }
    let totals: Vec<f64> = plan.totals().into_iter().map(|t| t as f64).collect();
    let maxes: Vec<f64> = plan
        .knapsacks
        .iter()
        .map(|k| k.iter().map(|e| e.length).max().unwrap_or(0) as f64)
        .collect();
    let (fill_mean, fill_std) = population_std(&totals);
    let (_, max_len_std) = population_std(&maxes);
    let used: f64 = totals.iter().sum();
    Ok(PackStats {
        count: plan.knapsacks.len(),
        fill_mean,
        fill_std,
        max_len_std,
        efficiency: used / (plan.knapsacks.len() as f64 * plan.capacity as f64),
    })
}

/// Split `items` into consecutive chunks and pack each independently with
/// the given method. Entry indices stay global.
pub fn chunked_pack(
    items: &[PackItem],
    method: PackMethod,
    capacity: u64,
    delta: usize,
    chunk_size: usize,
) -> Result<PackPlan> {
    if chunk_size == 0 {
        return Err(Error::invalid("chunk size must be at least 1"));
    }
    let lengths: Vec<u64> = items.iter().map(|i| i.length).collect();
    knapsack::check_lengths(&lengths, capacity)?;
    let parts: Vec<PackPlan> = items
        .par_chunks(chunk_size)
        .map(|chunk| pack_items(chunk, method, capacity, delta))
        .collect::<Result<_>>()?;

    let mut knapsacks = Vec::new();
    let mut dropped = 0;
    for (c, part) in parts.into_iter().enumerate() {
        let offset = c * chunk_size;
        dropped += part.dropped_empty;
        knapsacks.extend(part.knapsacks.into_iter().map(|k| {
            k.into_iter()
                .map(|mut e| {
                    e.index += offset;
                    e
                })
                .collect::<Vec<_>>()
        }));
    }
    let mut plan = PackPlan {
        method,
        capacity,
        delta: if method == PackMethod::Balanced { delta } else { 0 },
        knapsacks,
        dropped_empty: dropped,
        stats: None,
    };
    plan.stats = pack_stats(&plan).ok();
    Ok(plan)
}

/// One pack item per repeat of every sample, in pool order.
pub fn expand_pool(pool: &[Sample], tokenizer: &dyn TokenCounter) -> Vec<PackItem> {
    let lengths: Vec<u64> = pool
        .par_iter()
        .map(|s| estimate_sample_length(s, tokenizer))
        .collect();
    pool.iter()
        .zip(lengths)
        .flat_map(|(s, length)| {
            (0..s.repeat_factor).map(move |_| PackItem {
                id: s.id.clone(),
                length,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SeparatorPolicy {
    /// Keep each member's conversation as its own segment.
    #[default]
    Segments,
    /// Flatten into one conversation with a marker turn before each member.
    Inline { marker: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackSegment {
    pub sample_id: String,
    /// Token offset of this member inside the pack.
    pub offset: u64,
    pub length: u64,
    pub images: Vec<ImageRef>,
    pub conversations: Vec<ConversationTurn>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerTurn {
    pub from: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedRecord {
    pub pack_id: usize,
    pub sample_ids: Vec<String>,
    pub total_length: u64,
    pub capacity: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub segments: Vec<PackSegment>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conversations: Vec<MarkerTurn>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<ImageRef>,
}

/// Turn a plan into packed records, re-checking every length against the pool.
pub fn materialize_packs(
    pool: &[Sample],
    plan: &PackPlan,
    separator: &SeparatorPolicy,
    tokenizer: &dyn TokenCounter,
) -> Result<Vec<PackedRecord>> {
    let by_id: HashMap<&str, &Sample> = pool.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut records = Vec::with_capacity(plan.knapsacks.len());
    for (pack_id, knapsack) in plan.knapsacks.iter().enumerate() {
        let mut record = PackedRecord {
            pack_id,
            sample_ids: Vec::with_capacity(knapsack.len()),
            total_length: 0,
            capacity: plan.capacity,
            segments: Vec::new(),
            conversations: Vec::new(),
            images: Vec::new(),
        };
        for entry in knapsack {
            let sample = by_id
                .get(entry.id.as_str())
                .ok_or_else(|| Error::invalid(format!("plan references unknown sample {}", entry.id)))?;
            let length = estimate_sample_length(sample, tokenizer);
            if length != entry.length {
                return Err(Error::invalid(format!(
                    "sample {}: plan length {} differs from estimate {length}",
                    entry.id, entry.length
                )));
            }
            match separator {
                SeparatorPolicy::Segments => record.segments.push(PackSegment {
                    sample_id: sample.id.clone(),
                    offset: record.total_length,
                    length,
                    images: sample.images.clone(),
                    conversations: sample.turns.clone(),
                }),
                SeparatorPolicy::Inline { marker } => {
                    record.conversations.push(MarkerTurn {
                        from: "boundary".into(),
                        value: marker.replace("{id}", &sample.id),
                    });
                    record.conversations.extend(sample.turns.iter().map(|t| MarkerTurn {
                        from: serde_json::to_value(t.role)
                            .ok()
                            .and_then(|v| v.as_str().map(str::to_string))
                            .unwrap_or_default(),
                        value: t.text.clone(),
                    }));
                    record.images.extend(sample.images.iter().cloned());
                }
            }
            record.sample_ids.push(sample.id.clone());
            record.total_length += length;
        }
        if record.total_length > plan.capacity {
            return Err(Error::invalid(format!(
                "pack {pack_id} totals {} > capacity {}",
                record.total_length, plan.capacity
            )));
        }
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::*;

    #[test]
    fn stats_of_balanced_pair() {
        let plan = balanced_knapsack(&[6, 6, 2, 2], 8, 0).unwrap();
        let st = plan.stats.unwrap();
        assert_eq!(st.fill_std, 0.0);
        assert_eq!(st.efficiency, 1.0);
        assert_eq!(st.count, 2);
    }

    #[test]
    fn stats_of_naive_triple() {
        let plan = naive_greedy_knapsack(&[6, 6, 2, 2], 8).unwrap();
        assert_eq!(plan.length_bins(), vec![vec![6], vec![6, 2], vec![2]]);
        let st = plan.stats.unwrap();
        // std(6, 8, 2): mean 16/3, var = (4/9 + 64/9 + 100/9) / 3 = 56/9.
        let expected = (56.0f64 / 9.0).sqrt();
        assert!((st.fill_std - expected).abs() < 1e-12);
        assert!((st.fill_std - 2.494).abs() < 1e-3);
    }

    #[test]
    fn stats_single_knapsack() {
        let st = balanced_knapsack(&[3, 4], 10, 0).unwrap().stats.unwrap();
        assert_eq!(st.fill_std, 0.0);
        assert_eq!(st.max_len_std, 0.0);
        assert!((st.efficiency - 0.7).abs() < 1e-12);
    }

    #[test]
    fn empty_plan_has_no_stats() {
        let plan = balanced_knapsack(&[], 10, 0).unwrap();
        assert!(plan.stats.is_none());
        assert!(pack_stats(&plan).is_err());
    }

    fn items(lengths: &[u64]) -> Vec<PackItem> {
        items_from_lengths(lengths)
    }

    #[test]
    fn chunked_single_chunk_matches_unchunked() {
        let l: Vec<u64> = (1..=10).map(|i| i * 37 % 500 + 1).collect();
        let whole = pack_items(&items(&l), PackMethod::Balanced, 1000, 2).unwrap();
        let chunked = chunked_pack(&items(&l), PackMethod::Balanced, 1000, 2, DEFAULT_CHUNK).unwrap();
        assert_eq!(whole, chunked);
    }

    #[test]
    fn chunked_concatenates_independent_packs() {
        let l: Vec<u64> = (0..20).map(|i| (i * 53 % 90) + 5).collect();
        let it = items(&l);
        let chunked = chunked_pack(&it, PackMethod::Balanced, 200, 0, 10).unwrap();
        let a = pack_items(&it[..10], PackMethod::Balanced, 200, 0).unwrap();
        let b = pack_items(&it[10..], PackMethod::Balanced, 200, 0).unwrap();
        let mut expected = a.length_bins();
        expected.extend(b.length_bins());
        assert_eq!(chunked.length_bins(), expected);
        assert!(chunked.knapsacks[a.knapsacks.len()].iter().all(|e| e.index >= 10));
    }

    #[test]
    fn chunk_of_one_gives_singletons() {
        let l = [5, 3, 9, 1];
        let plan = chunked_pack(&items(&l), PackMethod::Balanced, 10, 20, 1).unwrap();
        assert_eq!(plan.index_bins(), vec![vec![0], vec![1], vec![2], vec![3]]);
        assert_eq!(plan.dropped_empty, 4 * 20);
    }

    #[test]
    fn expand_repeats() {
        let mut a = text_sample("a", "qqqq", "aaaa");
        a.repeat_factor = 3;
        let b = text_sample("b", "qqqq", "aaaaaaaa");
        let it = expand_pool(&[a, b], &CharTokenizer);
        let ids: Vec<&str> = it.iter().map(|i| i.id.as_str()).collect();
        assert_eq!(ids, ["a", "a", "a", "b"]);
        assert_eq!(it[3].length, 3);
    }

    #[test]
    fn materialize_pair_in_order() {
        let pool = vec![text_sample("a", "qqqq", "aaaa"), text_sample("b", "qqqq", "aaaa")];
        let it = expand_pool(&pool, &CharTokenizer);
        let plan = pack_items(&it, PackMethod::NaiveGreedy, 100, 0).unwrap();
        let recs = materialize_packs(&pool, &plan, &SeparatorPolicy::Segments, &CharTokenizer).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].sample_ids, ["a", "b"]);
        assert_eq!(recs[0].segments[1].offset, 2);
        assert_eq!(recs[0].total_length, 4);

        let inline = SeparatorPolicy::Inline {
            marker: "<|sample:{id}|>".into(),
        };
        let recs = materialize_packs(&pool, &plan, &inline, &CharTokenizer).unwrap();
        assert_eq!(recs[0].conversations.len(), 6);
        assert_eq!(recs[0].conversations[3].value, "<|sample:b|>");
        assert_eq!(recs[0].conversations[1].from, "human");
    }

    #[test]
    fn materialize_empty_plan() {
        let plan = balanced_knapsack(&[], 10, 0).unwrap();
        assert!(materialize_packs(&[], &plan, &SeparatorPolicy::Segments, &CharTokenizer)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn materialize_unknown_id() {
        let plan = pack_items(
            &[PackItem {
                id: "ghost".into(),
                length: 2,
            }],
            PackMethod::Balanced,
            10,
            0,
        )
        .unwrap();
        let pool = vec![text_sample("a", "qqqq", "aaaa")];
        assert!(materialize_packs(&pool, &plan, &SeparatorPolicy::Segments, &CharTokenizer).is_err());
    }
}
