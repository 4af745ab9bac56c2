//! Two-objective Pareto analysis: latency is minimized, accuracy maximized.
//!
//! Coordinate-identical points never dominate each other and share a front.
//! An accuracy of negative infinity marks a point whose score could not be
//! computed; such points never dominate, are dominated by every finite point,
//! and therefore only appear in the last front.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use thiserror::Error;

use crate::benchstore::{ArchKey, BenchRecord, ExportError, Factor};

#[derive(Debug, Error, PartialEq)]
pub enum ParetoError {
    #[error("empty input")]
    EmptyInput,
    #[error("point {index}: latency must be finite and > 0, got {latency}")]
    InvalidLatency { index: usize, latency: f64 },
    #[error("point {index}: accuracy is NaN or +inf")]
    InvalidAccuracy { index: usize },
    #[error("n_fronts must be >= 1")]
    ZeroFronts,
    #[error("latency threshold must be > 0, got {0}")]
    InvalidThreshold(f64),
    #[error("hardware `{0}` has no points")]
    EmptyHardware(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectivePoint<T> {
    /// Milliseconds, minimized.
    pub latency: f64,
    /// Maximized. `f64::NEG_INFINITY` is the "no score" sentinel.
    pub accuracy: f64,
    pub tag: T,
}

impl<T> ObjectivePoint<T> {
    pub fn new(latency: f64, accuracy: f64, tag: T) -> Self {
        ObjectivePoint {
            latency,
            accuracy,
            tag,
        }
    }

    pub fn is_sentinel(&self) -> bool {
        self.accuracy == f64::NEG_INFINITY
    }
}

/// `a` dominates `b`: no worse on both objectives and strictly better on one.
pub fn dominates<T, U>(a: &ObjectivePoint<T>, b: &ObjectivePoint<U>) -> bool {
    if a.is_sentinel() {
        return false;
    }
    if b.is_sentinel() {
        return true;
    }
    a.latency <= b.latency
        && a.accuracy >= b.accuracy
        && (a.latency < b.latency || a.accuracy > b.accuracy)
}

fn validate<T>(points: &[ObjectivePoint<T>]) -> Result<(), ParetoError> {
    if points.is_empty() {
        return Err(ParetoError::EmptyInput);
    }
    for (index, p) in points.iter().enumerate() {
        if !(p.latency.is_finite() && p.latency > 0.0) {
            return Err(ParetoError::InvalidLatency {
                index,
                latency: p.latency,
            });
        }
        if p.accuracy.is_nan() || p.accuracy == f64::INFINITY {
            return Err(ParetoError::InvalidAccuracy { index });
        }
    }
    Ok(())
}

/// Indices sorted by latency ascending, accuracy descending, index ascending.
fn sweep_order<T>(points: &[ObjectivePoint<T>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        points[i]
            .latency
            .total_cmp(&points[j].latency)
            .then(points[j].accuracy.total_cmp(&points[i].accuracy))
            .then(i.cmp(&j))
    });
    order
}

/// Splits `remaining` (already in sweep order, finite accuracies only) into
/// the non-dominated subsequence and the rest, both still in sweep order.
fn split_front<T>(points: &[ObjectivePoint<T>], remaining: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut front = Vec::new();
    let mut rest = Vec::new();
    // best accuracy among strictly faster points
    let mut best_faster = f64::NEG_INFINITY;
    let mut start = 0;
    while start < remaining.len() {
        let latency = points[remaining[start]].latency;
        let mut end = start;
        while end < remaining.len() && points[remaining[end]].latency == latency {
            end += 1;
        }
        // sweep order puts the group maximum first
        let group_max = points[remaining[start]].accuracy;
        let group_on_front = group_max > best_faster;
        for &idx in &remaining[start..end] {
            if group_on_front && points[idx].accuracy == group_max {
                front.push(idx);
            } else {
                rest.push(idx);
            }
        }
        best_faster = best_faster.max(group_max);
        start = end;
    }
    (front, rest)
}

/// Indices of the non-dominated points, ordered by latency ascending
/// (accuracy descending, then index, on ties).
pub fn pareto_front<T>(points: &[ObjectivePoint<T>]) -> Result<Vec<usize>, ParetoError> {
    let fronts = peel_fronts(points, NFronts::Count(1))?;
    Ok(fronts.fronts.into_iter().next().unwrap_or_default())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NFronts {
    Count(usize),
    All,
}

impl NFronts {
    fn limit(self) -> usize {
        match self {
            NFronts::Count(n) => n,
            NFronts::All => usize::MAX,
        }
    }
}

/// Ordered partition into first, second, ... Pareto sets.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParetoFronts {
    pub fronts: Vec<Vec<usize>>,
}

impl ParetoFronts {
    /// Union of the first `n` fronts, sorted by index.
    pub fn pool(&self, n: usize) -> BTreeSet<usize> {
        self.fronts.iter().take(n).flatten().copied().collect()
    }

    /// Front number (1-based) per point index; `None` for unpeeled points.
    pub fn rank_of(&self, n_points: usize) -> Vec<Option<usize>> {
        let mut ranks = vec![None; n_points];
        for (k, front) in self.fronts.iter().enumerate() {
            for &i in front {
                ranks[i] = Some(k + 1);
            }
        }
        ranks
    }

    pub fn len(&self) -> usize {
        self.fronts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fronts.is_empty()
    }
}

/// Peels up to `n_fronts` successive Pareto sets. Stops early once every
/// point has been assigned; no empty fronts are emitted.
pub fn peel_fronts<T>(
    points: &[ObjectivePoint<T>],
    n_fronts: NFronts,
) -> Result<ParetoFronts, ParetoError> {
    validate(points)?;
    let limit = n_fronts.limit();
    if limit == 0 {
        return Err(ParetoError::ZeroFronts);
    }
    let (sentinels, mut remaining): (Vec<usize>, Vec<usize>) = sweep_order(points)
        .into_iter()
        .partition(|&i| points[i].is_sentinel());

    let mut fronts = Vec::new();
    while !remaining.is_empty() && fronts.len() < limit {
        let (front, rest) = split_front(points, &remaining);
        fronts.push(front);
        remaining = rest;
    }
    // sentinels are mutually non-dominating: one final front
    if remaining.is_empty() && !sentinels.is_empty() && fronts.len() < limit {
        fronts.push(sentinels);
    }
    Ok(ParetoFronts { fronts })
}

/// Merges the first `fronts_per_hw` fronts of every device into one set of
/// architecture keys. Resolution is projected out, so one architecture seen
/// at several resolutions counts once.
pub fn preselect_candidates(
    per_hw_points: &BTreeMap<String, Vec<ObjectivePoint<ArchKey>>>,
    fronts_per_hw: usize,
) -> Result<BTreeSet<ArchKey>, ParetoError> {
    if per_hw_points.is_empty() {
        return Err(ParetoError::EmptyInput);
    }
    let mut keys = BTreeSet::new();
    for (hw, points) in per_hw_points {
        if points.is_empty() {
            return Err(ParetoError::EmptyHardware(hw.clone()));
        }
        let fronts = peel_fronts(points, NFronts::Count(fronts_per_hw))?;
        keys.extend(fronts.pool(fronts_per_hw).into_iter().map(|i| points[i].tag.clone()));
    }
    Ok(keys)
}

/// Most accurate point with `latency <= max_latency`; ties go to the lower
/// latency, then the smaller tag.
pub fn best_under_threshold<T: Ord>(
    points: &[ObjectivePoint<T>],
    max_latency: f64,
) -> Result<Option<&ObjectivePoint<T>>, ParetoError> {
    if !(max_latency > 0.0) {
        return Err(ParetoError::InvalidThreshold(max_latency));
    }
    Ok(points
        .iter()
        .filter(|p| p.latency <= max_latency && !p.accuracy.is_nan())
        .min_by(|a, b| {
            b.accuracy
                .total_cmp(&a.accuracy)
                .then(a.latency.total_cmp(&b.latency))
                .then_with(|| a.tag.cmp(&b.tag))
        }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ScalingKey {
    pub depth_factor: Factor,
    pub width_factor: Factor,
    pub resolution: u32,
}

/// Counts of (depth, width, resolution) combinations among front records.
pub fn scaling_stats<'a, I>(front_records: I) -> BTreeMap<ScalingKey, usize>
where
    I: IntoIterator<Item = &'a BenchRecord>,
{
    let mut counts = BTreeMap::new();
    for r in front_records {
        let key = ScalingKey {
            depth_factor: r.arch.depth_factor,
            width_factor: r.arch.width_factor,
            resolution: r.resolution,
        };
        *counts.entry(key).or_insert(0) += 1;
    }
    counts
}

/// Objective points for one device; records without that latency are skipped.
/// The tag is the position in `records`.
pub fn record_points(records: &[&BenchRecord], hw: &str) -> Vec<ObjectivePoint<usize>> {
    records
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.latency_ms(hw).map(|lat| ObjectivePoint::new(lat, r.metric_map, i)))
        .collect()
}

pub const FRONT_DUMP_HEADER: [&str; 7] = [
    "front_index",
    "family",
    "depth_factor",
    "width_factor",
    "resolution",
    "latency_ms",
    "metric",
];

/// Front dump: one row per member, fronts in order, members by latency.
pub fn write_fronts_csv<W: Write>(
    fronts: &ParetoFronts,
    points: &[ObjectivePoint<usize>],
    records: &[&BenchRecord],
    sink: W,
) -> Result<(), ExportError> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(FRONT_DUMP_HEADER)?;
    for (k, front) in fronts.fronts.iter().enumerate() {
        for &i in front {
            let p = &points[i];
            let r = records[p.tag];
            writer.write_record([
                (k + 1).to_string(),
                r.arch.family.clone(),
                r.arch.depth_factor.to_string(),
                r.arch.width_factor.to_string(),
                r.resolution.to_string(),
                p.latency.to_string(),
                p.accuracy.to_string(),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}
