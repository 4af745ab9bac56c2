//! Evaluation of accuracy predictors against measured accuracy.
//!
//! Predictors are scored two ways: by rank agreement with the measured metric
//! (Kendall tau-b over all records and over the best-performing fraction), and
//! by how well the Pareto fronts computed in (latency, predictor) space recover
//! the true (latency, accuracy) front. Candidate pools are unions of the first
//! N predictor-space fronts, so pools are nested in N.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write;

use thiserror::Error;

use crate::benchstore::{ArchKey, BenchRecord, ExportError};
use crate::pareto::{self, NFronts, ObjectivePoint, ParetoError};

#[derive(Debug, Error, PartialEq)]
pub enum RankError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 observations, got {0}")]
    TooShort(usize),
    #[error("correlation undefined: all values of the {0} argument are tied")]
    Undefined(&'static str),
    #[error("NaN in input")]
    NaN,
    #[error("fraction must be in (0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("top-fraction subset has {0} records; need at least 2")]
    SubsetTooSmall(usize),
    #[error("pool is empty: precision undefined (recall 0)")]
    EmptyPool,
    #[error("actual front is empty")]
    EmptyFront,
    #[error("missing values for records {0:?}")]
    MissingValues(Vec<usize>),
    #[error("need at least 2 devices")]
    TooFewDevices,
    #[error(transparent)]
    Pareto(#[from] ParetoError),
}

fn tie_pairs(sorted: &[f64]) -> u64 {
    let mut pairs = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            pairs += run * (run - 1) / 2;
            run = 1;
        }
    }
    pairs + run * (run - 1) / 2
}

/// Counts inversions of `v` while merge-sorting it in place.
fn merge_count(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], buf) + merge_count(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf.push(v[j]);
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Kendall tau-b with tie correction in both arguments, O(n log n).
///
/// `(C - D) / sqrt((n0 - n1) (n0 - n2))` with `n0 = n(n-1)/2` and `n1`, `n2`
/// the tied pair counts of `x` and `y`.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64, RankError> {
    if x.len() != y.len() {
        return Err(RankError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(RankError::TooShort(n));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(RankError::NaN);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]).then(y[i].total_cmp(&y[j])));

    let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let n1 = tie_pairs(&xs);
    // pairs tied in both x and y
    let mut n3 = 0u64;
    let mut run = 1u64;
    for w in order.windows(2) {
        if x[w[0]] == x[w[1]] && y[w[0]] == y[w[1]] {
            run += 1;
        } else {
            n3 += run * (run - 1) / 2;
            run = 1;
        }
    }
    n3 += run * (run - 1) / 2;

    let mut ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let mut buf = Vec::with_capacity(n);
    let swaps = merge_count(&mut ys, &mut buf);
    let n2 = tie_pairs(&ys);

    let n0 = (n as u64) * (n as u64 - 1) / 2;
    if n1 == n0 {
        return Err(RankError::Undefined("first"));
    }
    if n2 == n0 {
        return Err(RankError::Undefined("second"));
    }
    let numerator = n0 as i64 - n1 as i64 - n2 as i64 + n3 as i64 - 2 * swaps as i64;
    let denominator = ((n0 - n1) as f64 * (n0 - n2) as f64).sqrt();
    Ok((numerator as f64 / denominator).clamp(-1.0, 1.0))
}

/// Indices of the top `fraction` of records by `actual`, expanded to include
/// every record tied with the boundary value.
pub fn top_fraction_indices(actual: &[f64], fraction: f64) -> Result<Vec<usize>, RankError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(RankError::InvalidFraction(fraction));
    }
    if actual.iter().any(|v| v.is_nan()) {
        return Err(RankError::NaN);
    }
    let n = actual.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    // guard against 0.15 * 20 = 3.0000000000000004 style rounding
    let k = ((fraction * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    let mut sorted: Vec<f64> = actual.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let boundary = sorted[k - 1];
    Ok((0..n).filter(|&i| actual[i] >= boundary).collect())
}

/// Kendall tau-b over the records with the highest `actual` values.
pub fn top_fraction_tau(pred: &[f64], actual: &[f64], fraction: f64) -> Result<f64, RankError> {
    if pred.len() != actual.len() {
        return Err(RankError::LengthMismatch(pred.len(), actual.len()));
    }
    let subset = top_fraction_indices(actual, fraction)?;
    if subset.len() < 2 {
        return Err(RankError::SubsetTooSmall(subset.len()));
    }
    let p: Vec<f64> = subset.iter().map(|&i| pred[i]).collect();
    let a: Vec<f64> = subset.iter().map(|&i| actual[i]).collect();
    kendall_tau(&p, &a)
}

fn points(latency: &[f64], score: &[f64]) -> Result<Vec<ObjectivePoint<usize>>, RankError> {
    if latency.len() != score.len() {
        return Err(RankError::LengthMismatch(latency.len(), score.len()));
    }
    Ok(latency
        .iter()
        .zip(score)
        .enumerate()
        .map(|(i, (&l, &s))| ObjectivePoint::new(l, s, i))
        .collect())
}

/// Candidate pool: union of the first `n_fronts` Pareto sets in
/// (latency, proxy) space.
pub fn zc_pool(proxy: &[f64], latency: &[f64], n_fronts: usize) -> Result<BTreeSet<usize>, RankError> {
    let pts = points(latency, proxy)?;
    let fronts = pareto::peel_fronts(&pts, NFronts::Count(n_fronts))?;
    Ok(fronts.pool(n_fronts))
}

/// Nested pools for N = 1..=n_max from a single peel.
pub fn zc_pools(proxy: &[f64], latency: &[f64], n_max: usize) -> Result<Vec<BTreeSet<usize>>, RankError> {
    let pts = points(latency, proxy)?;
    let fronts = pareto::peel_fronts(&pts, NFronts::Count(n_max))?;
    Ok((1..=n_max).map(|n| fronts.pool(n)).collect())
}

/// True Pareto front over (latency, accuracy).
pub fn actual_front(actual: &[f64], latency: &[f64]) -> Result<BTreeSet<usize>, RankError> {
    let pts = points(latency, actual)?;
    Ok(pareto::pareto_front(&pts)?.into_iter().collect())
}

/// How pool members are matched against front members.
#[derive(Debug, Clone, Copy)]
pub enum Matching<'a> {
    /// By record index.
    Exact,
    /// By architecture, ignoring resolution; `keys[i]` belongs to record `i`.
    /// The universe becomes the set of distinct keys.
    ArchKey(&'a [ArchKey]),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolScore {
    pub recall: f64,
    pub precision: f64,
    pub pool_fraction: f64,
}

pub fn pool_recall_precision(
    pool: &BTreeSet<usize>,
    actual_front: &BTreeSet<usize>,
    universe_size: usize,
    matching: Matching<'_>,
) -> Result<PoolScore, RankError> {
    if actual_front.is_empty() {
        return Err(RankError::EmptyFront);
    }
    if pool.is_empty() {
        return Err(RankError::EmptyPool);
    }
    let (hits, pool_len, front_len, universe) = match matching {
        Matching::Exact => (
            pool.intersection(actual_front).count(),
            pool.len(),
            actual_front.len(),
            universe_size,
        ),
        Matching::ArchKey(keys) => {
            let project = |set: &BTreeSet<usize>| -> BTreeSet<&ArchKey> {
                set.iter().map(|&i| &keys[i]).collect()
            };
            let p = project(pool);
            let f = project(actual_front);
            let universe: BTreeSet<&ArchKey> = keys.iter().collect();
            (p.intersection(&f).count(), p.len(), f.len(), universe.len())
        }
    };
    Ok(PoolScore {
        recall: hits as f64 / front_len as f64,
        precision: hits as f64 / pool_len as f64,
        pool_fraction: (pool_len as f64 / universe as f64).min(1.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolPoint {
    pub n_fronts: usize,
    pub pool_fraction: f64,
    pub recall: f64,
    pub precision: f64,
}

/// Recall/precision curve for pools built in (`pool_latency`, `proxy`) space,
/// scored against the true front over (`true_latency`, `actual`).
pub fn pool_curve(
    proxy: &[f64],
    pool_latency: &[f64],
    actual: &[f64],
    true_latency: &[f64],
    n_max: usize,
    matching: Matching<'_>,
) -> Result<Vec<PoolPoint>, RankError> {
    let front = actual_front(actual, true_latency)?;
    let pools = zc_pools(proxy, pool_latency, n_max)?;
    pools
        .iter()
        .enumerate()
        .map(|(k, pool)| {
            let s = pool_recall_precision(pool, &front, actual.len(), matching)?;
            Ok(PoolPoint {
                n_fronts: k + 1,
                pool_fraction: s.pool_fraction,
                recall: s.recall,
                precision: s.precision,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorReport {
    pub predictor: String,
    pub global_tau: f64,
    pub top_fraction: f64,
    pub top_fraction_tau: f64,
    pub pool_curves: Vec<PoolPoint>,
}

impl PredictorReport {
    /// Recall of the first predictor-space front.
    pub fn pareto_recall(&self) -> Option<f64> {
        self.pool_curves.first().map(|p| p.recall)
    }
}

pub fn evaluate_predictor(
    name: &str,
    pred: &[f64],
    actual: &[f64],
    latency: &[f64],
    top_fraction: f64,
    n_max: usize,
    matching: Matching<'_>,
) -> Result<PredictorReport, RankError> {
    Ok(PredictorReport {
        predictor: name.to_string(),
        global_tau: kendall_tau(pred, actual)?,
        top_fraction,
        top_fraction_tau: top_fraction_tau(pred, actual, top_fraction)?,
        pool_curves: pool_curve(pred, latency, actual, latency, n_max, matching)?,
    })
}

/// Where pool-building latency values come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LatencySource {
    /// Measured latency on the target device.
    True,
    /// A proxy column, e.g. `macs`.
    Proxy(String),
    /// Measured latency on another device.
    Device(String),
}

impl LatencySource {
    pub fn value(&self, record: &BenchRecord, target_hw: &str) -> Option<f64> {
        match self {
            LatencySource::True => record.latency_ms(target_hw),
            LatencySource::Proxy(name) => record.proxy(name),
            LatencySource::Device(hw) => record.latency_ms(hw),
        }
    }

    pub fn label(&self) -> String {
        match self {
            LatencySource::True => "true".into(),
            LatencySource::Proxy(name) => format!("proxy:{name}"),
            LatencySource::Device(hw) => format!("hw:{hw}"),
        }
    }
}

fn collect_values<F>(records: &[&BenchRecord], f: F) -> Result<Vec<f64>, RankError>
where
    F: Fn(&BenchRecord) -> Option<f64>,
{
    let mut values = Vec::with_capacity(records.len());
    let mut missing = Vec::new();
    for (i, r) in records.iter().enumerate() {
        match f(r) {
            Some(v) => values.push(v),
            None => missing.push(i),
        }
    }
    if missing.is_empty() {
        Ok(values)
    } else {
        Err(RankError::MissingValues(missing))
    }
}

/// Pools from (latency source, accuracy proxy) measured against the true
/// (target-device latency, mAP) front.
pub fn latency_proxy_eval(
    records: &[&BenchRecord],
    accuracy_proxy: &str,
    source: &LatencySource,
    target_hw: &str,
    n_max: usize,
    resolution_agnostic: bool,
) -> Result<Vec<PoolPoint>, RankError> {
    let proxy = collect_values(records, |r| r.proxy(accuracy_proxy))?;
    let pool_latency = collect_values(records, |r| source.value(r, target_hw))?;
    let true_latency = collect_values(records, |r| r.latency_ms(target_hw))?;
    let actual: Vec<f64> = records.iter().map(|r| r.metric_map).collect();
    let keys: Vec<ArchKey> = records.iter().map(|r| r.arch.clone()).collect();
    let matching = if resolution_agnostic {
        Matching::ArchKey(&keys)
    } else {
        Matching::Exact
    };
    pool_curve(&proxy, &pool_latency, &actual, &true_latency, n_max, matching)
}

/// Predictor report computed from records: `predictor` names a proxy column
/// (with or without `zc_`), or `map_50_95` for the metric itself.
pub fn evaluate_records(
    records: &[&BenchRecord],
    predictor: &str,
    hw: &str,
    top_fraction: f64,
    n_max: usize,
    resolution_agnostic: bool,
) -> Result<PredictorReport, RankError> {
    let pred = collect_values(records, |r| r.proxy(predictor))?;
    let latency = collect_values(records, |r| r.latency_ms(hw))?;
    let actual: Vec<f64> = records.iter().map(|r| r.metric_map).collect();
    let keys: Vec<ArchKey> = records.iter().map(|r| r.arch.clone()).collect();
    let matching = if resolution_agnostic {
        Matching::ArchKey(&keys)
    } else {
        Matching::Exact
    };
    evaluate_predictor(predictor, &pred, &actual, &latency, top_fraction, n_max, matching)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrMatrix {
    pub hardware: Vec<String>,
    /// `None` where fewer than two records carry both latencies or the
    /// correlation is undefined.
    pub entries: Vec<Vec<Option<f64>>>,
}

/// Pairwise Kendall tau-b between per-device latency vectors, using for each
/// pair the records that carry both latencies.
pub fn latency_corr_matrix(records: &[&BenchRecord], hw_list: &[String]) -> Result<CorrMatrix, RankError> {
    if hw_list.len() < 2 {
        return Err(RankError::TooFewDevices);
    }
    let m = hw_list.len();
    let mut entries = vec![vec![None; m]; m];
    for i in 0..m {
        entries[i][i] = Some(1.0);
        for j in (i + 1)..m {
            let (a, b): (Vec<f64>, Vec<f64>) = records
                .iter()
                .filter_map(|r| Some((r.latency_ms(&hw_list[i])?, r.latency_ms(&hw_list[j])?)))
                .unzip();
            let tau = if a.len() < 2 { None } else { kendall_tau(&a, &b).ok() };
            entries[i][j] = tau;
            entries[j][i] = tau;
        }
    }
    Ok(CorrMatrix {
        hardware: hw_list.to_vec(),
        entries,
    })
}

pub const REPORT_CSV_HEADER: [&str; 8] = [
    "predictor",
    "global_tau",
    "top_fraction",
    "top_fraction_tau",
    "n_fronts",
    "pool_fraction",
    "recall",
    "precision",
];

/// One row per predictor per N.
pub fn write_reports_csv<W: Write>(reports: &[PredictorReport], sink: W) -> Result<(), ExportError> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(REPORT_CSV_HEADER)?;
    for r in reports {
        for p in &r.pool_curves {
            writer.write_record([
                r.predictor.clone(),
                r.global_tau.to_string(),
                r.top_fraction.to_string(),
                r.top_fraction_tau.to_string(),
                p.n_fronts.to_string(),
                p.pool_fraction.to_string(),
                p.recall.to_string(),
                p.precision.to_string(),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Markdown table: predictor, global tau, top-fraction tau, first-front recall.
pub fn reports_markdown(reports: &[PredictorReport], title: &str, hw: &str) -> String {
    let pct = reports
        .first()
        .map(|r| format!("{}", (r.top_fraction * 100.0).round()))
        .unwrap_or_else(|| "15".into());
    let mut out = String::new();
    writeln!(out, "### {title}\n").unwrap();
    writeln!(
        out,
        "| Predictor metric | global τ | top-{pct}% τ | %Pareto pred. ({hw}) |"
    )
    .unwrap();
    writeln!(out, "|---|---|---|---|").unwrap();
    for r in reports {
        writeln!(
            out,
            "| {} | {:.3} | {:.3} | {} |",
            r.predictor,
            r.global_tau,
            r.top_fraction_tau,
            r.pareto_recall().map(|v| format!("{v:.3}")).unwrap_or_default()
        )
        .unwrap();
    }
    out
}

pub fn corr_matrix_csv<W: Write>(matrix: &CorrMatrix, sink: W) -> Result<(), ExportError> {
    let mut writer = csv::Writer::from_writer(sink);
    let mut header = vec!["hw".to_string()];
    header.extend(matrix.hardware.iter().cloned());
    writer.write_record(&header)?;
    for (hw, row) in matrix.hardware.iter().zip(&matrix.entries) {
        let mut line = vec![hw.clone()];
        line.extend(row.iter().map(|v| v.map(|t| t.to_string()).unwrap_or_default()));
        writer.write_record(&line)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    /// All-pairs tau-b; kept independent of the merge-sort path.
    fn tau_oracle(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len();
        let (mut c, mut d, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = x[i] - x[j];
                let dy = y[i] - y[j];
                if dx == 0.0 && dy == 0.0 {
                    tx += 1;
                    ty += 1;
                } else if dx == 0.0 {
                    tx += 1;
                } else if dy == 0.0 {
                    ty += 1;
                } else if (dx > 0.0) == (dy > 0.0) {
                    c += 1;
                } else {
                    d += 1;
                }
            }
        }
        let n0 = (n * (n - 1) / 2) as i64;
        (c - d) as f64 / (((n0 - tx) * (n0 - ty)) as f64).sqrt()
    }

    #[test]
    fn tau_identity_and_reverse() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(kendall_tau(&x, &x).unwrap(), 1.0);
        let y = [4.0, 3.0, 2.0, 1.0];
        assert_eq!(kendall_tau(&x, &y).unwrap(), -1.0);
    }

    #[test]
    fn tau_errors() {
        assert_eq!(kendall_tau(&[1.0, 2.0], &[1.0]), Err(RankError::LengthMismatch(2, 1)));
        assert_eq!(kendall_tau(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(RankError::Undefined("first")));
        assert_eq!(kendall_tau(&[1.0, 2.0], &[5.0, 5.0]), Err(RankError::Undefined("second")));
        assert_eq!(kendall_tau(&[1.0], &[1.0]), Err(RankError::TooShort(1)));
    }

    #[test]
    fn tau_with_ties_matches_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = (0..50).map(|_| rng.gen_range(0..12) as f64).collect();
        let y: Vec<f64> = (0..50).map(|_| rng.gen_range(0..9) as f64).collect();
        let got = kendall_tau(&x, &y).unwrap();
        assert!((got - tau_oracle(&x, &y)).abs() < 1e-12);
    }

    #[test]
    fn top_fraction_sizes() {
        let actual: Vec<f64> = (0..572).map(|i| i as f64).collect();
        assert_eq!(top_fraction_indices(&actual, 0.15).unwrap().len(), 86);
        let twenty: Vec<f64> = (0..20).map(|i| i as f64).collect();
        assert_eq!(top_fraction_indices(&twenty, 0.15).unwrap().len(), 3);
        // boundary ties are expanded
        let tied = [1.0, 2.0, 3.0, 3.0, 3.0, 0.5];
        assert_eq!(top_fraction_indices(&tied, 0.2).unwrap(), vec![2, 3, 4]);
    }

    #[test]
    fn top_fraction_tau_cases() {
        let actual = [0.1, 0.5, 0.3, 0.9, 0.7, 0.2];
        let pred = [1.0, 3.0, 5.0, 2.0, 8.0, 0.0];
        assert_eq!(
            top_fraction_tau(&pred, &actual, 1.0).unwrap(),
            kendall_tau(&pred, &actual).unwrap()
        );
        assert_eq!(top_fraction_tau(&actual, &actual, 0.5).unwrap(), 1.0);
        assert_eq!(top_fraction_tau(&pred, &actual, 0.1), Err(RankError::SubsetTooSmall(1)));
        assert!(matches!(top_fraction_tau(&pred, &actual, 0.0), Err(RankError::InvalidFraction(_))));
    }

    #[test]
    fn pool_scores() {
        let front: BTreeSet<usize> = [0, 2].into();
        let s = pool_recall_precision(&front, &front, 10, Matching::Exact).unwrap();
        assert_eq!((s.recall, s.precision, s.pool_fraction), (1.0, 1.0, 0.2));
        let disjoint: BTreeSet<usize> = [1, 3].into();
        let s = pool_recall_precision(&disjoint, &front, 10, Matching::Exact).unwrap();
        assert_eq!((s.recall, s.precision), (0.0, 0.0));
        assert_eq!(
            pool_recall_precision(&BTreeSet::new(), &front, 10, Matching::Exact),
            Err(RankError::EmptyPool)
        );
    }

    #[test]
    fn arch_matching_projects_resolution() {
        let a = ArchKey::new("a", 1.0, 1.0).unwrap();
        let b = ArchKey::new("b", 1.0, 1.0).unwrap();
        let keys = vec![a.clone(), a.clone(), b.clone(), b];
        let pool: BTreeSet<usize> = [1].into();
        let front: BTreeSet<usize> = [0, 2].into();
        let exact = pool_recall_precision(&pool, &front, 4, Matching::Exact).unwrap();
        assert_eq!(exact.recall, 0.0);
        let agnostic = pool_recall_precision(&pool, &front, 4, Matching::ArchKey(&keys)).unwrap();
        assert_eq!(agnostic.recall, 0.5);
        assert_eq!(agnostic.precision, 1.0);
        assert_eq!(agnostic.pool_fraction, 0.5);
    }

    #[test]
    fn proxy_equal_to_actual_recovers_front() {
        let actual = [0.3, 0.5, 0.4, 0.7, 0.2];
        let latency = [1.0, 2.0, 3.0, 4.0, 0.5];
        let pool = zc_pool(&actual, &latency, 1).unwrap();
        assert_eq!(pool, actual_front(&actual, &latency).unwrap());
    }

    #[test]
    fn corr_matrix_cases() {
        use crate::benchstore::LatencyStats;
        let recs: Vec<BenchRecord> = (1..=5)
            .map(|i| BenchRecord {
                arch: ArchKey::new("m", 1.0, i as f64).unwrap(),
                resolution: 160,
                dataset: "VOC".into(),
                metric_map: 0.1,
                latencies: [
                    ("a".to_string(), LatencyStats::from_mean(i as f64)),
                    ("b".to_string(), LatencyStats::from_mean(10.0 - i as f64)),
                ]
                .into(),
                proxies: BTreeMap::new(),
            })
            .collect();
        let refs: Vec<&BenchRecord> = recs.iter().collect();
        let hw = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let m = latency_corr_matrix(&refs, &hw).unwrap();
        assert_eq!(m.entries[0][0], Some(1.0));
        assert_eq!(m.entries[0][1], Some(-1.0));
        assert_eq!(m.entries[1][0], Some(-1.0));
        assert_eq!(m.entries[0][2], None);
        assert_eq!(latency_corr_matrix(&refs, &hw[..1]), Err(RankError::TooFewDevices));
    }

    #[test]
    fn missing_source_values_are_listed() {
        use crate::benchstore::LatencyStats;
        let rec = |mac: Option<f64>| BenchRecord {
            arch: ArchKey::new("m", 1.0, 1.0).unwrap(),
            resolution: 160,
            dataset: "VOC".into(),
            metric_map: 0.1,
            latencies: [("a".to_string(), LatencyStats::from_mean(1.0))].into(),
            proxies: mac
                .map(|m| [("macs".to_string(), m), ("nwot".to_string(), 1.0)].into())
                .unwrap_or_else(|| [("nwot".to_string(), 1.0)].into()),
        };
        let recs = [rec(Some(1.0)), rec(None), rec(None)];
        let refs: Vec<&BenchRecord> = recs.iter().collect();
        let err = latency_proxy_eval(&refs, "nwot", &LatencySource::Proxy("macs".into()), "a", 2, false)
            .unwrap_err();
        assert_eq!(err, RankError::MissingValues(vec![1, 2]));
    }
}
