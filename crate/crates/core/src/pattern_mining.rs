//! Occurrence statistics over annotated frames: base rates, pattern census,
//! frame-count histograms, per-task top patterns and min-count codebooks.
//!
//! Ranking convention everywhere: count descending, ties broken by
//! bitwise-lexicographic pattern order ascending.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::au_model::{AuPattern, DatasetTable};

/// Frame-count bin edges for the pattern histogram.
pub const DEFAULT_BIN_EDGES: [u64; 11] = [0, 5, 10, 50, 100, 200, 500, 1000, 2000, 5000, 11000];

#[derive(Debug, Error, PartialEq)]
pub enum MiningError {
    #[error("table has no frames")]
    EmptyTable,
    #[error("census has no patterns")]
    EmptyCensus,
    #[error("bin edges must be strictly ascending and contain at least two values")]
    BadEdges,
    #[error("pattern count {count} lies outside the bin range [{lo}, {hi}]")]
    OutOfRange { count: u64, lo: u64, hi: u64 },
    #[error("threshold too high: no pattern occurs at least {0} times")]
    ThresholdTooHigh(u64),
    #[error("min_count must be at least 1")]
    ZeroThreshold,
    #[error("codebook is empty")]
    EmptyCodebook,
    #[error("codebook pattern width {found} does not match registry width {expected}")]
    WidthMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseRates {
    pub codes: Vec<u16>,
    pub rates: Vec<f64>,
}

impl BaseRates {
    pub fn get(&self, code: u16) -> Option<f64> {
        self.codes.iter().position(|&c| c == code).map(|i| self.rates[i])
    }
}

pub fn base_rates(table: &DatasetTable) -> Result<BaseRates, MiningError> {
    if table.is_empty() {
        return Err(MiningError::EmptyTable);
    }
    let k = table.registry().k();
    let mut active = vec![0u64; k];
    for f in table.frames() {
        for (j, slot) in active.iter_mut().enumerate() {
            *slot += f.pattern.get(j) as u64;
        }
    }
    let n = table.len() as f64;
    Ok(BaseRates { codes: table.registry().codes().to_vec(), rates: active.into_iter().map(|a| a as f64 / n).collect() })
}

/// Exact multiset of patterns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternCensus {
    counts: BTreeMap<AuPattern, u64>,
    total: u64,
}

impl PatternCensus {
    pub fn from_counts(counts: impl IntoIterator<Item = (AuPattern, u64)>) -> Self {
        let mut map = BTreeMap::new();
        for (p, c) in counts {
            if c > 0 {
                *map.entry(p).or_insert(0) += c;
            }
        }
        let total = map.values().sum();
        Self { counts: map, total }
    }

    pub fn total_frames(&self) -> u64 {
        self.total
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, p: &AuPattern) -> u64 {
        self.counts.get(p).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&AuPattern, &u64)> {
        self.counts.iter()
    }

    /// All entries in ranking order.
    pub fn ranked(&self) -> Vec<(AuPattern, u64)> {
        let mut v: Vec<(AuPattern, u64)> = self.counts.iter().map(|(p, c)| (*p, *c)).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    }
}

pub fn census(table: &DatasetTable) -> Result<PatternCensus, MiningError> {
    if table.is_empty() {
        return Err(MiningError::EmptyTable);
    }
    let mut counts: HashMap<AuPattern, u64> = HashMap::new();
    for f in table.frames() {
        *counts.entry(f.pattern).or_insert(0) += 1;
    }
    Ok(PatternCensus::from_counts(counts))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopBottom {
    pub top: Vec<(AuPattern, u64)>,
    pub bottom: Vec<(AuPattern, u64)>,
    /// Set when `top_n + bottom_n` exceeded the number of distinct patterns.
    pub truncated: bool,
}

impl TopBottom {
    pub fn entries(&self) -> impl Iterator<Item = &(AuPattern, u64)> {
        self.top.iter().chain(self.bottom.iter())
    }
}

/// The `top_n` highest-ranked and `bottom_n` lowest-ranked patterns. Bottom
/// entries keep ranking order (they are the tail of the full ranking) and
/// never repeat a top entry.
pub fn top_bottom(census: &PatternCensus, top_n: usize, bottom_n: usize) -> Result<TopBottom, MiningError> {
    if census.distinct() == 0 {
        return Err(MiningError::EmptyCensus);
    }
    let ranked = census.ranked();
    let d = ranked.len();
    let top_take = top_n.min(d);
    let bottom_take = bottom_n.min(d - top_take);
    Ok(TopBottom { top: ranked[..top_take].to_vec(), bottom: ranked[d - bottom_take..].to_vec(), truncated: top_n + bottom_n > d })
}

/// Percentage of distinct patterns per bin `[edge_b, edge_{b+1})`, last bin
/// closed on the right.
pub fn histogram(census: &PatternCensus, edges: &[u64]) -> Result<Vec<f64>, MiningError> {
    if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MiningError::BadEdges);
    }
    if census.distinct() == 0 {
        return Err(MiningError::EmptyCensus);
    }
    let bins = edges.len() - 1;
    let (lo, hi) = (edges[0], edges[bins]);
    let mut counts = vec![0u64; bins];
    for (_, &c) in census.iter() {
        if c < lo || c > hi {
            return Err(MiningError::OutOfRange { count: c, lo, hi });
        }
        let b = if c == hi { bins - 1 } else { edges.partition_point(|&e| e <= c) - 1 };
        counts[b] += 1;
    }
    let d = census.distinct() as f64;
    Ok(counts.into_iter().map(|n| 100.0 * n as f64 / d).collect())
}

/// Highest-ranked pattern within each task's frames.
pub fn top_pattern_per_task(table: &DatasetTable) -> BTreeMap<String, (AuPattern, u64)> {
    let mut per_task: BTreeMap<&str, HashMap<AuPattern, u64>> = BTreeMap::new();
    for f in table.frames() {
        *per_task.entry(f.task.as_str()).or_default().entry(f.pattern).or_insert(0) += 1;
    }
    per_task
        .into_iter()
        .map(|(task, counts)| {
            let best = counts.into_iter().min_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0))).expect("task has at least one frame");
            (task.to_string(), best)
        })
        .collect()
}

/// Indexed set of patterns used as pattern-classifier classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternCodebook {
    patterns: Vec<AuPattern>,
    #[serde(skip)]
    index: HashMap<AuPattern, usize>,
}

impl PatternCodebook {
    /// Orders `entries` by ranking; class `i` is the `i`-th ranked pattern.
    pub fn from_counts(mut entries: Vec<(AuPattern, u64)>) -> Result<Self, MiningError> {
        if entries.is_empty() {
            return Err(MiningError::EmptyCodebook);
        }
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        entries.dedup_by(|a, b| a.0 == b.0);
        Ok(Self::from_ordered(entries.into_iter().map(|(p, _)| p).collect()))
    }

    /// Uses the given order as class indices (caller guarantees uniqueness).
    pub fn from_ordered(patterns: Vec<AuPattern>) -> Self {
        let index = patterns.iter().enumerate().map(|(i, p)| (*p, i)).collect();
        Self { patterns, index }
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn patterns(&self) -> &[AuPattern] {
        &self.patterns
    }

    pub fn class_of(&self, p: &AuPattern) -> Option<usize> {
        self.index.get(p).copied()
    }

    pub fn pattern(&self, class: usize) -> AuPattern {
        self.patterns[class]
    }

    pub fn contains(&self, p: &AuPattern) -> bool {
        self.index.contains_key(p)
    }

    pub fn width(&self) -> Option<usize> {
        self.patterns.first().map(|p| p.width())
    }

    /// Rebuilds the lookup index after deserialization.
    pub fn reindexed(self) -> Self {
        Self::from_ordered(self.patterns)
    }
}

pub fn select_patterns_by_min_count(census: &PatternCensus, min_count: u64) -> Result<PatternCodebook, MiningError> {
    if min_count == 0 {
        return Err(MiningError::ZeroThreshold);
    }
    let kept: Vec<(AuPattern, u64)> = census.iter().filter(|(_, &c)| c >= min_count).map(|(p, c)| (*p, *c)).collect();
    if kept.is_empty() {
        return Err(MiningError::ThresholdTooHigh(min_count));
    }
    PatternCodebook::from_counts(kept)
}

/// Splits frames by codebook membership: `(in_codebook, out_of_codebook)`.
pub fn restrict(table: &DatasetTable, codebook: &PatternCodebook) -> (DatasetTable, DatasetTable) {
    let (inside, outside): (Vec<usize>, Vec<usize>) = (0..table.len()).partition(|&i| codebook.contains(&table.frames()[i].pattern));
    (table.select(&inside), table.select(&outside))
}

/// Same split, returning frame indices into `table`.
pub fn restrict_indices(table: &DatasetTable, codebook: &PatternCodebook) -> (Vec<usize>, Vec<usize>) {
    (0..table.len()).partition(|&i| codebook.contains(&table.frames()[i].pattern))
}

/// `rank,count,percent,bits` with percent over frames.
pub fn patterns_report_csv(census: &PatternCensus) -> String {
    let mut out = String::from("rank,count,percent,bits\n");
    let total = census.total_frames() as f64;
    for (i, (p, c)) in census.ranked().into_iter().enumerate() {
        out.push_str(&format!("{},{},{},{}\n", i + 1, c, 100.0 * c as f64 / total, p));
    }
    out
}

pub fn base_rates_csv(rates: &BaseRates) -> String {
    let mut out = String::from("au,rate\n");
    for (c, r) in rates.codes.iter().zip(&rates.rates) {
        out.push_str(&format!("{c},{r}\n"));
    }
    out
}

pub fn histogram_csv(edges: &[u64], percents: &[f64]) -> String {
    let mut out = String::from("bin_lo,bin_hi,percent\n");
    for (w, p) in edges.windows(2).zip(percents) {
        out.push_str(&format!("{},{},{}\n", w[0], w[1], p));
    }
    out
}

pub fn task_tops_csv(tops: &BTreeMap<String, (AuPattern, u64)>, emotions: Option<&BTreeMap<String, String>>) -> String {
    let mut out = String::from("task,count,bits,emotion\n");
    for (task, (p, c)) in tops {
        let emo = emotions.and_then(|m| m.get(task)).map(String::as_str).unwrap_or("");
        out.push_str(&format!("{task},{c},{p},{emo}\n"));
    }
    out
}
