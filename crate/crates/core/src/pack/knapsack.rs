//! Packing heuristics over token lengths.
//!
//! Each function returns bins of indices into the input slice, in placement
//! order. Inputs are sorted by descending length with the original index as
//! tiebreak, so equal lengths keep their input order.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

pub(crate) fn check_lengths(lengths: &[u64], capacity: u64) -> Result<()> {
    if capacity == 0 {
        return Err(Error::invalid("capacity must be positive"));
    }
    for (index, &length) in lengths.iter().enumerate() {
        if length == 0 {
            return Err(Error::invalid(format!("sample {index} has zero length")));
        }
        if length > capacity {
            return Err(Error::Oversize {
                index,
                length,
                capacity,
            });
        }
    }
    Ok(())
}

fn descending_order(lengths: &[u64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by(|&a, &b| lengths[b].cmp(&lengths[a]).then(a.cmp(&b)));
    order
}

/// Bins plus the number of pre-opened knapsacks that stayed empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub bins: Vec<Vec<usize>>,
    pub dropped_empty: usize,
}

/// Balance-aware greedy knapsack.
///
/// Opens `ceil(total / capacity) + delta` knapsacks up front and always
/// targets the currently lightest one (lowest index on ties). When the sample
/// does not fit there a fresh knapsack is appended and the lightest is
/// recomputed, which is the new empty one.
pub fn balanced(lengths: &[u64], capacity: u64, delta: usize) -> Result<Assignment> {
    check_lengths(lengths, capacity)?;
    if lengths.is_empty() {
        return Ok(Assignment {
            bins: Vec::new(),
            dropped_empty: 0,
        });
    }
    let total: u64 = lengths.iter().sum();
    let initial = total.div_ceil(capacity) as usize + delta;

    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); initial];
    let mut totals = vec![0u64; initial];
    // (fill, index): the first element is the argmin with lowest-index ties.
    let mut by_fill: BTreeSet<(u64, usize)> = (0..initial).map(|i| (0, i)).collect();

    let order = descending_order(lengths);
    let mut next = 0;
    while next < order.len() {
        let sample = order[next];
        let length = lengths[sample];
        let &(fill, target) = by_fill.first().expect("at least one knapsack");
        if fill + length <= capacity {
            by_fill.remove(&(fill, target));
            by_fill.insert((fill + length, target));
            bins[target].push(sample);
            totals[target] += length;
            next += 1;
        } else {
            by_fill.insert((0, bins.len()));
            bins.push(Vec::new());
            totals.push(0);
        }
    }

    let before = bins.len();
    while bins.last().is_some_and(Vec::is_empty) {
        bins.pop();
    }
    debug_assert!(bins.iter().all(|b| !b.is_empty()));
    Ok(Assignment {
        dropped_empty: before - bins.len(),
        bins,
    })
}

/// Sequential fill: keep adding to the open knapsack, start a new one on
/// overflow, never revisit closed knapsacks.
pub fn naive_greedy(lengths: &[u64], capacity: u64) -> Result<Vec<Vec<usize>>> {
    check_lengths(lengths, capacity)?;
    let mut bins: Vec<Vec<usize>> = Vec::new();
    let mut fill = 0u64;
    for sample in descending_order(lengths) {
        let length = lengths[sample];
        match bins.last_mut() {
            Some(bin) if fill + length <= capacity => {
                bin.push(sample);
                fill += length;
            }
            _ => {
                bins.push(vec![sample]);
                fill = length;
            }
        }
    }
    Ok(bins)
}

/// Shortest-pack-first: place each sample into the currently shortest pack
/// (lowest index on ties) if it fits, otherwise open a new pack.
pub fn spfhp(lengths: &[u64], capacity: u64) -> Result<Vec<Vec<usize>>> {
    check_lengths(lengths, capacity)?;
    let mut bins: Vec<Vec<usize>> = Vec::new();
    let mut by_fill: BTreeSet<(u64, usize)> = BTreeSet::new();
    for sample in descending_order(lengths) {
        let length = lengths[sample];
        match by_fill.first().copied() {
            Some((fill, target)) if fill + length <= capacity => {
                by_fill.remove(&(fill, target));
                by_fill.insert((fill + length, target));
                bins[target].push(sample);
            }
            _ => {
                by_fill.insert((length, bins.len()));
                bins.push(vec![sample]);
            }
        }
    }
    Ok(bins)
}
