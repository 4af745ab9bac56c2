//! Benchmark records: data model, CSV/JSON ingestion and export, grouping.
//!
//! A record is one `(architecture, resolution, dataset)` row carrying a
//! measured mAP_50-95, per-device latency and optional proxy scores. The CSV
//! layout uses fixed column names:
//!
//! | column            | meaning                                  |
//! |-------------------|------------------------------------------|
//! | `family`          | architecture family, e.g. `yolov7`       |
//! | `depth_factor`    | depth multiplier                         |
//! | `width_factor`    | width multiplier                         |
//! | `resolution`      | square input size in pixels              |
//! | `dataset`         | dataset identifier                       |
//! | `map_50_95`       | accuracy in `[0, 1]`                     |
//! | `lat_<hw>_ms`     | mean latency on device `<hw>` (one or more) |
//! | `zc_<name>`       | proxy score `<name>` (optional)          |
//!
//! Files with other header names are adapted with [`Schema::rename`].

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::io::{Read, Write};

use serde_json::{Map, Value};
use thiserror::Error;

pub const COL_FAMILY: &str = "family";
pub const COL_DEPTH: &str = "depth_factor";
pub const COL_WIDTH: &str = "width_factor";
pub const COL_RESOLUTION: &str = "resolution";
pub const COL_DATASET: &str = "dataset";
pub const COL_METRIC: &str = "map_50_95";
pub const LATENCY_PREFIX: &str = "lat_";
pub const LATENCY_SUFFIX: &str = "_ms";
pub const PROXY_PREFIX: &str = "zc_";

const REQUIRED_COLUMNS: [&str; 6] = [
    COL_FAMILY,
    COL_DEPTH,
    COL_WIDTH,
    COL_RESOLUTION,
    COL_DATASET,
    COL_METRIC,
];

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("no latency column (expected at least one `lat_<hw>_ms`)")]
    NoLatencyColumn,
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// A strictly positive, finite scaling factor with total ordering.
///
/// Equality and hashing are bitwise, so `0.33` parsed twice compares equal
/// but `0.33` and `0.330000001` do not.
#[derive(Debug, Clone, Copy)]
pub struct Factor(f64);

impl Factor {
    pub fn new(value: f64) -> Option<Self> {
        (value.is_finite() && value > 0.0).then_some(Factor(value))
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// Compact label used in model names: `1.0 -> "1"`, `0.33 -> "33"`, `0.5 -> "5"`.
    pub fn short_label(self) -> String {
        let text = self.0.to_string();
        match text.strip_prefix("0.") {
            Some(frac) => frac.to_string(),
            None => text,
        }
    }
}

impl PartialEq for Factor {
    fn eq(&self, other: &Self) -> bool {
        self.0.to_bits() == other.0.to_bits()
    }
}

impl Eq for Factor {}

impl Hash for Factor {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.to_bits().hash(state);
    }
}

impl PartialOrd for Factor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Factor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Architecture identity: family plus depth/width scaling. Resolution is
/// deliberately not part of the key, so the same network at several input
/// sizes maps to one key.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ArchKey {
    pub family: String,
    pub depth_factor: Factor,
    pub width_factor: Factor,
}

impl ArchKey {
    pub fn new(family: impl Into<String>, depth: f64, width: f64) -> Option<Self> {
        Some(ArchKey {
            family: family.into(),
            depth_factor: Factor::new(depth)?,
            width_factor: Factor::new(width)?,
        })
    }

    /// `yolov7 d1w5`
    pub fn label(&self) -> String {
        format!(
            "{} d{}w{}",
            self.family,
            self.depth_factor.short_label(),
            self.width_factor.short_label()
        )
    }
}

impl fmt::Display for ArchKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Architecture at a specific input resolution; orders lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModelKey {
    pub arch: ArchKey,
    pub resolution: u32,
}

impl fmt::Display for ModelKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.arch.label(), self.resolution)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyStats {
    /// Milliseconds.
    pub mean: f64,
    /// Sample standard deviation, milliseconds.
    pub std: f64,
    pub reps: u32,
    pub warmup: u32,
}

impl LatencyStats {
    /// Stats for an ingested mean where dispersion and run counts are unknown.
    pub fn from_mean(mean: f64) -> Self {
        LatencyStats {
            mean,
            std: 0.0,
            reps: 1,
            warmup: 0,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.mean.is_finite() && self.mean > 0.0 && self.std >= 0.0 && self.reps >= 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub arch: ArchKey,
    pub resolution: u32,
    pub dataset: String,
    pub metric_map: f64,
    pub latencies: BTreeMap<String, LatencyStats>,
    pub proxies: BTreeMap<String, f64>,
}

impl BenchRecord {
    pub fn model_key(&self) -> ModelKey {
        ModelKey {
            arch: self.arch.clone(),
            resolution: self.resolution,
        }
    }

    pub fn latency_ms(&self, hw: &str) -> Option<f64> {
        self.latencies.get(hw).map(|s| s.mean)
    }

    /// Proxy lookup accepting either `nwot` or `zc_nwot`.
    pub fn proxy(&self, name: &str) -> Option<f64> {
        let bare = name.strip_prefix(PROXY_PREFIX).unwrap_or(name);
        self.proxies.get(bare).copied()
    }

    /// Hard invariant check; returns the violated rule.
    pub fn check(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.metric_map) {
            return Err(format!("metric out of range: {}", self.metric_map));
        }
        if self.resolution == 0 {
            return Err("resolution must be positive".into());
        }
        for (hw, stats) in &self.latencies {
            if !stats.is_valid() {
                return Err(format!("invalid latency for `{hw}`: {}", stats.mean));
            }
        }
        Ok(())
    }

    /// Soft checks that do not reject the record.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.resolution < 32 || self.resolution % 32 != 0 {
            out.push(format!(
                "resolution {} is not a positive multiple of 32",
                self.resolution
            ));
        }
        out
    }
}

/// Maps source header names onto the canonical column names.
#[derive(Debug, Clone, Default)]
pub struct Schema {
    renames: HashMap<String, String>,
}

impl Schema {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rename(mut self, source: impl Into<String>, canonical: impl Into<String>) -> Self {
        self.renames.insert(source.into(), canonical.into());
        self
    }

    fn canonical<'a>(&'a self, header: &'a str) -> &'a str {
        let trimmed = header.trim();
        self.renames
            .get(trimmed)
            .map(String::as_str)
            .unwrap_or(trimmed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    /// 1-based line number in the source, header included.
    pub line: u64,
    pub message: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParseOutcome {
    pub records: Vec<BenchRecord>,
    pub errors: Vec<RowError>,
    pub warnings: Vec<RowError>,
    /// Hardware ids found in the header, sorted.
    pub hardware: Vec<String>,
    /// Proxy names found in the header (without `zc_`), sorted.
    pub proxies: Vec<String>,
}

enum Column {
    Family,
    Depth,
    Width,
    Resolution,
    Dataset,
    Metric,
    Latency(String),
    Proxy(String),
    Ignored,
}

fn classify(name: &str) -> Column {
    match name {
        COL_FAMILY => Column::Family,
        COL_DEPTH => Column::Depth,
        COL_WIDTH => Column::Width,
        COL_RESOLUTION => Column::Resolution,
        COL_DATASET => Column::Dataset,
        COL_METRIC => Column::Metric,
        _ => {
            if let Some(hw) = name
                .strip_prefix(LATENCY_PREFIX)
                .and_then(|s| s.strip_suffix(LATENCY_SUFFIX))
                .filter(|hw| !hw.is_empty())
            {
                Column::Latency(hw.to_string())
            } else if let Some(proxy) = name.strip_prefix(PROXY_PREFIX).filter(|p| !p.is_empty()) {
                Column::Proxy(proxy.to_string())
            } else {
                Column::Ignored
            }
        }
    }
}

fn parse_f64(field: &str, column: &str) -> Result<f64, String> {
    let value: f64 = field
        .trim()
        .parse()
        .map_err(|_| format!("non-numeric value `{field}` in column `{column}`"))?;
    if value.is_nan() {
        return Err(format!("NaN in column `{column}`"));
    }
    Ok(value)
}

/// Parses benchmark records from CSV text.
///
/// Schema problems (missing required columns, no latency column) abort the
/// parse. Row problems are collected with line numbers and the row is skipped.
/// Empty latency or proxy cells mean "not measured" for that row.
pub fn parse_records<R: Read>(source: R, schema: &Schema) -> Result<ParseOutcome, SchemaError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source);
    let headers = reader.headers()?.clone();

    let mut columns = Vec::with_capacity(headers.len());
    let mut seen = BTreeSet::new();
    let mut hardware = BTreeSet::new();
    let mut proxies = BTreeSet::new();
    for raw in headers.iter() {
        let name = schema.canonical(raw).to_string();
        let column = classify(&name);
        if !matches!(column, Column::Ignored) && !seen.insert(name.clone()) {
            return Err(SchemaError::DuplicateColumn(name));
        }
        match &column {
            Column::Latency(hw) => {
                hardware.insert(hw.clone());
            }
            Column::Proxy(p) => {
                proxies.insert(p.clone());
            }
            _ => {}
        }
        columns.push((name, column));
    }
    for required in REQUIRED_COLUMNS {
        if !seen.contains(required) {
            return Err(SchemaError::MissingColumn(required.to_string()));
        }
    }
    if hardware.is_empty() {
        return Err(SchemaError::NoLatencyColumn);
    }

    let mut outcome = ParseOutcome {
        hardware: hardware.into_iter().collect(),
        proxies: proxies.into_iter().collect(),
        ..Default::default()
    };
    for (row_index, row) in reader.records().enumerate() {
        // header is line 1; fall back to index when the reader has no position
        let fallback_line = row_index as u64 + 2;
        let row = match row {
            Ok(row) => row,
            Err(err) => {
                let line = err
                    .position()
                    .map(|p| p.line())
                    .unwrap_or(fallback_line);
                outcome.errors.push(RowError {
                    line,
                    message: err.to_string(),
                });
                continue;
            }
        };
        let line = row.position().map(|p| p.line()).unwrap_or(fallback_line);
        if row.len() != columns.len() {
            outcome.errors.push(RowError {
                line,
                message: format!("expected {} fields, found {}", columns.len(), row.len()),
            });
            continue;
        }
        match parse_row(&columns, &row) {
            Ok(record) => {
                for message in record.warnings() {
                    outcome.warnings.push(RowError { line, message });
                }
                outcome.records.push(record);
            }
            Err(message) => outcome.errors.push(RowError { line, message }),
        }
    }
    Ok(outcome)
}

fn parse_row(columns: &[(String, Column)], row: &csv::StringRecord) -> Result<BenchRecord, String> {
    let mut family = None;
    let mut depth = None;
    let mut width = None;
    let mut resolution = None;
    let mut dataset = None;
    let mut metric = None;
    let mut latencies = BTreeMap::new();
    let mut proxies = BTreeMap::new();

    for ((name, column), field) in columns.iter().zip(row.iter()) {
        match column {
            Column::Family => family = Some(field.trim().to_string()),
            Column::Dataset => dataset = Some(field.trim().to_string()),
            Column::Depth => depth = Some(parse_f64(field, name)?),
            Column::Width => width = Some(parse_f64(field, name)?),
            Column::Metric => metric = Some(parse_f64(field, name)?),
            Column::Resolution => {
                let value: u32 = field
                    .trim()
                    .parse()
                    .map_err(|_| format!("invalid resolution `{field}`"))?;
                resolution = Some(value);
            }
            Column::Latency(hw) => {
                if !field.trim().is_empty() {
                    let mean = parse_f64(field, name)?;
                    latencies.insert(hw.clone(), LatencyStats::from_mean(mean));
                }
            }
            Column::Proxy(p) => {
                if !field.trim().is_empty() {
                    proxies.insert(p.clone(), parse_f64(field, name)?);
                }
            }
            Column::Ignored => {}
        }
    }

    let family = family.filter(|f| !f.is_empty()).ok_or("empty family")?;
    let dataset = dataset.filter(|d| !d.is_empty()).ok_or("empty dataset")?;
    let (depth, width) = (depth.unwrap_or(0.0), width.unwrap_or(0.0));
    let arch = ArchKey::new(family, depth, width)
        .ok_or_else(|| format!("scaling factors must be positive (d={depth}, w={width})"))?;
    let record = BenchRecord {
        arch,
        resolution: resolution.unwrap_or(0),
        dataset,
        metric_map: metric.unwrap_or(f64::NAN),
        latencies,
        proxies,
    };
    record.check()?;
    Ok(record)
}

fn hardware_union(records: &[BenchRecord]) -> BTreeSet<&str> {
    records
        .iter()
        .flat_map(|r| r.latencies.keys().map(String::as_str))
        .collect()
}

fn proxy_union(records: &[BenchRecord]) -> BTreeSet<&str> {
    records
        .iter()
        .flat_map(|r| r.proxies.keys().map(String::as_str))
        .collect()
}

/// Writes records in the canonical CSV layout. Latency and proxy columns are
/// the sorted union over all records; absent values are empty cells. Floats
/// use the shortest representation that parses back to the same bits.
pub fn write_records_csv<W: Write>(records: &[BenchRecord], sink: W) -> Result<(), ExportError> {
    let hardware = hardware_union(records);
    let proxies = proxy_union(records);
    let mut writer = csv::Writer::from_writer(sink);

    let mut header: Vec<String> = REQUIRED_COLUMNS.iter().map(|c| c.to_string()).collect();
    header.extend(hardware.iter().map(|hw| format!("{LATENCY_PREFIX}{hw}{LATENCY_SUFFIX}")));
    header.extend(proxies.iter().map(|p| format!("{PROXY_PREFIX}{p}")));
    writer.write_record(&header)?;

    for r in records {
        let mut row = vec![
            r.arch.family.clone(),
            r.arch.depth_factor.to_string(),
            r.arch.width_factor.to_string(),
            r.resolution.to_string(),
            r.dataset.clone(),
            r.metric_map.to_string(),
        ];
        row.extend(
            hardware
                .iter()
                .map(|hw| r.latency_ms(hw).map(|v| v.to_string()).unwrap_or_default()),
        );
        row.extend(
            proxies
                .iter()
                .map(|p| r.proxies.get(*p).map(|v| v.to_string()).unwrap_or_default()),
        );
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

fn json_number(value: f64) -> Value {
    serde_json::Number::from_f64(value)
        .map(Value::Number)
        .unwrap_or(Value::Null)
}

/// JSON export: an array of flat objects keyed by the CSV column names.
/// Missing measurements are omitted from the object.
pub fn records_to_json(records: &[BenchRecord]) -> Value {
    let rows = records
        .iter()
        .map(|r| {
            let mut obj = Map::new();
            obj.insert(COL_FAMILY.into(), Value::String(r.arch.family.clone()));
            obj.insert(COL_DEPTH.into(), json_number(r.arch.depth_factor.get()));
            obj.insert(COL_WIDTH.into(), json_number(r.arch.width_factor.get()));
            obj.insert(COL_RESOLUTION.into(), Value::from(r.resolution));
            obj.insert(COL_DATASET.into(), Value::String(r.dataset.clone()));
            obj.insert(COL_METRIC.into(), json_number(r.metric_map));
            for (hw, stats) in &r.latencies {
                obj.insert(
                    format!("{LATENCY_PREFIX}{hw}{LATENCY_SUFFIX}"),
                    json_number(stats.mean),
                );
            }
            for (p, v) in &r.proxies {
                obj.insert(format!("{PROXY_PREFIX}{p}"), json_number(*v));
            }
            Value::Object(obj)
        })
        .collect();
    Value::Array(rows)
}

/// Grouping key; `None` components mean "not grouped on this axis".
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupKey {
    pub dataset: Option<String>,
    pub hardware: Option<String>,
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.dataset, &self.hardware) {
            (Some(d), Some(h)) => write!(f, "{d}/{h}"),
            (Some(d), None) => write!(f, "{d}"),
            (None, Some(h)) => write!(f, "{h}"),
            (None, None) => write!(f, "all"),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GroupBy {
    pub dataset: bool,
    /// Each listed device partitions the records that carry its latency.
    pub hardware: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct Grouping<'a> {
    pub groups: BTreeMap<GroupKey, Vec<&'a BenchRecord>>,
    /// Per device, how many records were dropped for lacking its latency.
    pub excluded: BTreeMap<String, usize>,
    pub warnings: Vec<String>,
}

/// Groups records by dataset and/or device. Input order is preserved within
/// each group. For every requested device, group sizes plus the excluded
/// count equal the input length.
pub fn group_records<'a>(records: &'a [BenchRecord], by: &GroupBy) -> Grouping<'a> {
    let mut grouping = Grouping::default();
    let dataset_of = |r: &BenchRecord| by.dataset.then(|| r.dataset.clone());

    if by.hardware.is_empty() {
        for r in records {
            let key = GroupKey {
                dataset: dataset_of(r),
                hardware: None,
            };
            grouping.groups.entry(key).or_default().push(r);
        }
        return grouping;
    }

    for hw in &by.hardware {
        let mut excluded = 0;
        for r in records {
            if r.latencies.contains_key(hw) {
                let key = GroupKey {
                    dataset: dataset_of(r),
                    hardware: Some(hw.clone()),
                };
                grouping.groups.entry(key).or_default().push(r);
            } else {
                excluded += 1;
            }
        }
        if excluded == records.len() && !records.is_empty() {
            grouping
                .warnings
                .push(format!("hardware `{hw}` is absent from every record; group is empty"));
        }
        grouping.excluded.insert(hw.clone(), excluded);
    }
    grouping
}
