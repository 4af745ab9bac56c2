//! `archscreen` command-line front end.
//!
//! Exit status: 0 on success, 1 on data errors, 2 on usage errors.
//! Relative `--data` paths are resolved against `$ARCHSCREEN_DATA_DIR` when
//! that variable is set.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::benchstore::{self, BenchRecord, GroupBy, Schema};
use crate::netgraph::{NetGraph, Tensor};
use crate::pareto::{self, NFronts, ObjectivePoint};
use crate::profiler::{self, SystemClock, VirtualClock};
use crate::rankeval::{self, LatencySource, PredictorReport};
use crate::zcscore::{self, CodeMode, Scope};

pub const DATA_DIR_ENV: &str = "ARCHSCREEN_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Format {
    #[default]
    Csv,
    Markdown,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Post,
    Pre,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScopeArg {
    All,
    NoHead,
}

#[derive(Debug, Parser)]
#[command(name = "archscreen", version, about = "Latency/accuracy screening of detector architectures")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Benchmark CSV file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Restrict to one dataset.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Hardware id(s); repeat or comma-separate.
    #[arg(long, value_delimiter = ',')]
    pub hw: Vec<String>,
    /// Output file (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate and normalize a benchmark file.
    Ingest {
        #[command(flatten)]
        common: Common,
    },
    /// Pareto fronts and scaling statistics for one dataset/device.
    Pareto {
        #[command(flatten)]
        common: Common,
        /// Number of fronts to peel, or `all`.
        #[arg(long, default_value = "1")]
        fronts: String,
        /// Also write scaling statistics of the first front as CSV.
        #[arg(long)]
        stats_out: Option<PathBuf>,
    },
    /// Best model under latency thresholds.
    Select {
        #[command(flatten)]
        common: Common,
        #[arg(long = "max-latency-ms", required = true, value_delimiter = ',')]
        max_latency_ms: Vec<f64>,
    },
    /// Evaluate accuracy predictors.
    Rank {
        #[command(flatten)]
        common: Common,
        /// Proxy column(s); defaults to every `zc_` column.
        #[arg(long, value_delimiter = ',')]
        predictor: Vec<String>,
        #[arg(long, default_value_t = 5)]
        fronts: usize,
        #[arg(long, default_value_t = 0.15)]
        top_fraction: f64,
        /// Match pools and fronts by architecture, ignoring resolution.
        #[arg(long)]
        resolution_agnostic: bool,
        /// `true`, `proxy:<name>` or `hw:<id>`.
        #[arg(long, default_value = "true")]
        latency_source: String,
        /// Write the cross-device latency correlation matrix here.
        #[arg(long)]
        corr_out: Option<PathBuf>,
    },
    /// NWOT scores for graph specs.
    Score {
        #[command(flatten)]
        common: Common,
        /// Graph spec JSON file(s); repeatable.
        #[arg(long, required = true)]
        graph: Vec<PathBuf>,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = 1)]
        batches: usize,
        #[arg(long, value_enum, default_value_t = ModeArg::Post)]
        mode: ModeArg,
        #[arg(long, value_enum, default_value_t = ScopeArg::All)]
        scope: ScopeArg,
        /// Tensor file(s) used as batches instead of seeded noise.
        #[arg(long)]
        input: Vec<PathBuf>,
        /// Add MAC and parameter count rows.
        #[arg(long)]
        baselines: bool,
    },
    /// Time graph forward passes.
    Profile {
        #[command(flatten)]
        common: Common,
        /// Graph spec JSON file(s); repeatable.
        #[arg(long, required = true)]
        graph: Vec<PathBuf>,
        #[arg(long, default_value_t = profiler::DEFAULT_REPS)]
        reps: u32,
        #[arg(long, default_value_t = profiler::DEFAULT_WARMUP)]
        warmup: u32,
        /// Host label for the latency column.
        #[arg(long)]
        host: Option<String>,
        /// Replace the system clock by one advancing this many microseconds per reading.
        #[arg(long)]
        virtual_clock_us: Option<u64>,
    },
    /// Merge CSV outputs into one Markdown document.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 1,
        }
    }
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

pub fn run_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(args, &mut stdout.lock(), &mut stderr.lock())
}

/// Parses `args` (program name first) and executes the subcommand.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if code == 0 {
                write!(stdout, "{}", e.render())
            } else {
                write!(stderr, "{}", e.render())
            };
            return code;
        }
    };
    match execute(cli.command, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let (kind, msg) = match &e {
                CliError::Usage(m) => ("usage error", m),
                CliError::Data(m) => ("error", m),
            };
            let _ = writeln!(stderr, "{kind}: {msg}");
            e.code()
        }
    }
}

fn execute(command: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, CliError> {
    match command {
        Command::Ingest { common } => cmd_ingest(&common, stdout, stderr),
        Command::Pareto {
            common,
            fronts,
            stats_out,
        } => cmd_pareto(&common, &fronts, stats_out.as_deref(), stdout, stderr),
        Command::Select {
            common,
            max_latency_ms,
        } => cmd_select(&common, &max_latency_ms, stdout, stderr),
        Command::Rank {
            common,
            predictor,
            fronts,
            top_fraction,
            resolution_agnostic,
            latency_source,
            corr_out,
        } => {
            let opts = RankOptions {
                predictors: predictor,
                fronts,
                top_fraction,
                resolution_agnostic,
                latency_source: parse_latency_source(&latency_source)?,
            };
            cmd_rank(&common, &opts, corr_out.as_deref(), stdout, stderr)
        }
        Command::Score {
            common,
            graph,
            batch_size,
            batches,
            mode,
            scope,
            input,
            baselines,
        } => {
            let opts = ScoreOptions {
                batch_size,
                batches,
                mode: match mode {
                    ModeArg::Post => CodeMode::PostActivation,
                    ModeArg::Pre => CodeMode::PreActivation,
                },
                scope: match scope {
                    ScopeArg::All => Scope::AllLayers,
                    ScopeArg::NoHead => Scope::NoHead,
                },
                inputs: input,
                baselines,
            };
            cmd_score(&common, &graph, &opts, stdout)
        }
        Command::Profile {
            common,
            graph,
            reps,
            warmup,
            host,
            virtual_clock_us,
        } => cmd_profile(&common, &graph, reps, warmup, host, virtual_clock_us, stdout),
        Command::Report { common, input } => cmd_report(&common, &input, stdout),
    }
}

fn emit(common: &Common, bytes: &[u8], stdout: &mut dyn Write) -> Result<(), CliError> {
    match &common.out {
        Some(path) => std::fs::write(path, bytes).map_err(|e| data_err(format!("{}: {e}", path.display()))),
        None => stdout.write_all(bytes).map_err(data_err),
    }
}

fn json_bytes(value: &Value) -> Vec<u8> {
    let mut text = serde_json::to_string_pretty(value).expect("json values serialize");
    text.push('\n');
    text.into_bytes()
}

fn resolve_data_path(path: &Path) -> PathBuf {
    if path.is_relative() {
        if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
            return Path::new(&dir).join(path);
        }
    }
    path.to_path_buf()
}

/// Loads the benchmark file; row problems are reported on `stderr`.
pub fn load_records(common: &Common, stderr: &mut dyn Write) -> Result<(Vec<BenchRecord>, usize), CliError> {
    let path = common
        .data
        .as_deref()
        .ok_or_else(|| CliError::Usage("--data is required".into()))?;
    let path = resolve_data_path(path);
    let file = std::fs::File::open(&path).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    let outcome = benchstore::parse_records(file, &Schema::default()).map_err(data_err)?;
    for e in &outcome.errors {
        let _ = writeln!(stderr, "row error: {e}");
    }
    for w in &outcome.warnings {
        let _ = writeln!(stderr, "warning: {w}");
    }
    let mut records = outcome.records;
    if let Some(ds) = &common.dataset {
        records.retain(|r| &r.dataset == ds);
        if records.is_empty() {
            return Err(CliError::Data(format!("no records match --dataset {ds}")));
        }
    }
    Ok((records, outcome.errors.len()))
}

/// Records carrying latency for `hw`; reports how many were dropped.
fn with_hw<'a>(records: &'a [BenchRecord], hw: &str, stderr: &mut dyn Write) -> Result<Vec<&'a BenchRecord>, CliError> {
    let grouping = benchstore::group_records(
        records,
        &GroupBy {
            dataset: false,
            hardware: vec![hw.to_string()],
        },
    );
    let excluded = grouping.excluded.get(hw).copied().unwrap_or(0);
    if excluded > 0 {
        let _ = writeln!(stderr, "note: {excluded} record(s) without `{hw}` latency excluded");
    }
    let selected: Vec<&BenchRecord> = grouping.groups.into_values().flatten().collect();
    if selected.is_empty() {
        return Err(CliError::Data(format!("no records match --hw {hw}")));
    }
    Ok(selected)
}

fn single_hw(common: &Common) -> Result<&str, CliError> {
    match common.hw.as_slice() {
        [hw] => Ok(hw),
        [] => Err(CliError::Usage("--hw is required".into())),
        _ => Err(CliError::Usage("exactly one --hw is expected".into())),
    }
}

fn single_dataset(records: &[BenchRecord]) -> Result<(), CliError> {
    let first = records.first().map(|r| &r.dataset);
    if records.iter().any(|r| Some(&r.dataset) != first) {
        return Err(CliError::Usage("data holds several datasets; pass --dataset".into()));
    }
    Ok(())
}

fn cmd_ingest(common: &Common, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, CliError> {
    let (records, n_errors) = load_records(common, stderr)?;
    let bytes = match common.format {
        Format::Csv => {
            let mut buf = Vec::new();
            benchstore::write_records_csv(&records, &mut buf).map_err(data_err)?;
            buf
        }
        Format::Json => json_bytes(&benchstore::records_to_json(&records)),
        Format::Markdown => ingest_markdown(&records).into_bytes(),
    };
    emit(common, &bytes, stdout)?;
    Ok(if n_errors > 0 { 1 } else { 0 })
}

fn ingest_markdown(records: &[BenchRecord]) -> String {
    let mut counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for r in records {
        for hw in r.latencies.keys() {
            *counts.entry((r.dataset.as_str(), hw.as_str())).or_default() += 1;
        }
    }
    let mut out = String::from("| dataset | hw | records |\n|---|---|---|\n");
    for ((ds, hw), n) in counts {
        writeln!(out, "| {ds} | {hw} | {n} |").unwrap();
    }
    out
}

fn parse_fronts(text: &str) -> Result<NFronts, CliError> {
    if text.eq_ignore_ascii_case("all") {
        return Ok(NFronts::All);
    }
    match text.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(NFronts::Count(n)),
        _ => Err(CliError::Usage(format!("--fronts expects a count >= 1 or `all`, got `{text}`"))),
    }
}

/// Front dump CSV for one record set and device.
pub fn pareto_csv(records: &[&BenchRecord], hw: &str, n_fronts: NFronts) -> Result<Vec<u8>, CliError> {
    let points = pareto::record_points(records, hw);
    let fronts = pareto::peel_fronts(&points, n_fronts).map_err(data_err)?;
    let mut buf = Vec::new();
    pareto::write_fronts_csv(&fronts, &points, records, &mut buf).map_err(data_err)?;
    Ok(buf)
}

fn cmd_pareto(
    common: &Common,
    fronts: &str,
    stats_out: Option<&Path>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<i32, CliError> {
    let n_fronts = parse_fronts(fronts)?;
    let hw = single_hw(common)?;
    let (records, _) = load_records(common, stderr)?;
    single_dataset(&records)?;
    let selected = with_hw(&records, hw, stderr)?;
    let points = pareto::record_points(&selected, hw);
    let peeled = pareto::peel_fronts(&points, n_fronts).map_err(data_err)?;
    let front1: Vec<&BenchRecord> = peeled.fronts[0].iter().map(|&i| selected[points[i].tag]).collect();
    let stats = pareto::scaling_stats(front1.iter().copied());

    if let Some(path) = stats_out {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["depth_factor", "width_factor", "resolution", "count"]).map_err(data_err)?;
        for (k, n) in &stats {
            w.write_record([
                k.depth_factor.to_string(),
                k.width_factor.to_string(),
                k.resolution.to_string(),
                n.to_string(),
            ])
            .map_err(data_err)?;
        }
        let bytes = w.into_inner().map_err(data_err)?;
        std::fs::write(path, bytes).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    }

    let bytes = match common.format {
        Format::Csv => pareto_csv(&selected, hw, n_fronts)?,
        Format::Json => {
            let fronts_json: Vec<Value> = peeled
                .fronts
                .iter()
                .map(|front| {
                    Value::Array(
                        front
                            .iter()
                            .map(|&i| {
                                let r = selected[points[i].tag];
                                json!({
                                    "family": r.arch.family,
                                    "depth_factor": r.arch.depth_factor.get(),
                                    "width_factor": r.arch.width_factor.get(),
                                    "resolution": r.resolution,
                                    "latency_ms": points[i].latency,
                                    "metric": points[i].accuracy,
                                })
                            })
                            .collect(),
                    )
                })
                .collect();
            let stats_json: Vec<Value> = stats
                .iter()
                .map(|(k, n)| {
                    json!({
                        "depth_factor": k.depth_factor.get(),
                        "width_factor": k.width_factor.get(),
                        "resolution": k.resolution,
                        "count": n,
                    })
                })
                .collect();
            json_bytes(&json!({
                "dataset": selected[0].dataset,
                "hw": hw,
                "fronts": fronts_json,
                "scaling_stats": stats_json,
            }))
        }
        Format::Markdown => {
            let mut out = format!("### Pareto fronts: {} / {hw}\n\n", selected[0].dataset);
            out.push_str("| front | model | latency (ms) | mAP_50-95 |\n|---|---|---|---|\n");
            for (k, front) in peeled.fronts.iter().enumerate() {
                for &i in front {
                    let r = selected[points[i].tag];
                    writeln!(out, "| {} | {} | {} | {:.3} |", k + 1, r.model_key(), points[i].latency, r.metric_map).unwrap();
                }
            }
            out.push_str("\n### Scaling statistics (front 1)\n\n| depth | width | resolution | count |\n|---|---|---|---|\n");
            for (k, n) in &stats {
                writeln!(out, "| {} | {} | {} | {n} |", k.depth_factor, k.width_factor, k.resolution).unwrap();
            }
            out.into_bytes()
        }
    };
    emit(common, &bytes, stdout)?;
    Ok(0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectRow {
    pub dataset: String,
    pub hw: String,
    pub max_latency_ms: f64,
    pub choice: Option<(benchstore::ModelKey, f64, f64)>,
}

/// Threshold table rows ordered by dataset, device (as given), threshold.
pub fn select_rows(records: &[BenchRecord], hws: &[String], thresholds: &[f64]) -> Result<Vec<SelectRow>, CliError> {
    let grouping = benchstore::group_records(
        records,
        &GroupBy {
            dataset: true,
            hardware: hws.to_vec(),
        },
    );
    let datasets: std::collections::BTreeSet<&str> = records.iter().map(|r| r.dataset.as_str()).collect();
    let mut rows = Vec::new();
    for ds in datasets {
        for hw in hws {
            let key = benchstore::GroupKey {
                dataset: Some(ds.to_string()),
                hardware: Some(hw.clone()),
            };
            let group = grouping.groups.get(&key).map(Vec::as_slice).unwrap_or(&[]);
            let points: Vec<ObjectivePoint<benchstore::ModelKey>> = group
                .iter()
                .filter_map(|r| Some(ObjectivePoint::new(r.latency_ms(hw)?, r.metric_map, r.model_key())))
                .collect();
            for &t in thresholds {
                let best = pareto::best_under_threshold(&points, t).map_err(|e| CliError::Usage(e.to_string()))?;
                rows.push(SelectRow {
                    dataset: ds.to_string(),
                    hw: hw.clone(),
                    max_latency_ms: t,
                    choice: best.map(|p| (p.tag.clone(), p.latency, p.accuracy)),
                });
            }
        }
    }
    Ok(rows)
}

pub fn select_csv(rows: &[SelectRow]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "dataset",
        "hw",
        "max_latency_ms",
        "family",
        "depth_factor",
        "width_factor",
        "resolution",
        "latency_ms",
        "map_50_95",
    ])
    .map_err(data_err)?;
    for row in rows {
        let mut line = vec![row.dataset.clone(), row.hw.clone(), row.max_latency_ms.to_string()];
        match &row.choice {
            Some((key, lat, acc)) => line.extend([
                key.arch.family.clone(),
                key.arch.depth_factor.to_string(),
                key.arch.width_factor.to_string(),
                key.resolution.to_string(),
                lat.to_string(),
                acc.to_string(),
            ]),
            None => line.extend(std::iter::repeat(String::new()).take(6)),
        }
        w.write_record(&line).map_err(data_err)?;
    }
    w.into_inner().map_err(data_err)
}

fn select_markdown(rows: &[SelectRow]) -> String {
    let datasets: Vec<&str> = {
        let set: std::collections::BTreeSet<&str> = rows.iter().map(|r| r.dataset.as_str()).collect();
        set.into_iter().collect()
    };
    let mut by_cell: BTreeMap<(String, u64), BTreeMap<&str, &SelectRow>> = BTreeMap::new();
    let mut row_order: Vec<(String, u64)> = Vec::new();
    for r in rows {
        let key = (r.hw.clone(), r.max_latency_ms.to_bits());
        if !row_order.contains(&key) {
            row_order.push(key.clone());
        }
        by_cell.entry(key).or_default().insert(r.dataset.as_str(), r);
    }
    let mut out = String::from("| HW/max. latency |");
    for ds in &datasets {
        write!(out, " {ds} model | {ds} mAP_50-95 |").unwrap();
    }
    out.push_str("\n|---|");
    out.push_str(&"---|---|".repeat(datasets.len()));
    out.push('\n');
    for key in &row_order {
        let cells = &by_cell[key];
        write!(out, "| {}/{} ms |", key.0, f64::from_bits(key.1)).unwrap();
        for ds in &datasets {
            match cells.get(ds).and_then(|r| r.choice.as_ref()) {
                Some((model, _, acc)) => write!(out, " {model} | {acc:.3} |").unwrap(),
                None => out.push_str(" – | – |"),
            }
        }
        out.push('\n');
    }
    out
}

fn cmd_select(common: &Common, thresholds: &[f64], stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, CliError> {
    if common.hw.is_empty() {
        return Err(CliError::Usage("--hw is required".into()));
    }
    if let Some(t) = thresholds.iter().find(|t| !(**t > 0.0)) {
        return Err(CliError::Usage(format!("latency thresholds must be > 0, got {t}")));
    }
    let (records, _) = load_records(common, stderr)?;
    for hw in &common.hw {
        with_hw(&records, hw, stderr)?;
    }
    let rows = select_rows(&records, &common.hw, thresholds)?;
    let bytes = match common.format {
        Format::Csv => select_csv(&rows)?,
        Format::Markdown => select_markdown(&rows).into_bytes(),
        Format::Json => json_bytes(&Value::Array(
            rows.iter()
                .map(|r| {
                    let mut obj = json!({
                        "dataset": r.dataset,
                        "hw": r.hw,
                        "max_latency_ms": r.max_latency_ms,
                    });
                    if let Some((key, lat, acc)) = &r.choice {
                        obj["model"] = json!(key.to_string());
                        obj["family"] = json!(key.arch.family);
                        obj["depth_factor"] = json!(key.arch.depth_factor.get());
                        obj["width_factor"] = json!(key.arch.width_factor.get());
                        obj["resolution"] = json!(key.resolution);
                        obj["latency_ms"] = json!(lat);
                        obj["map_50_95"] = json!(acc);
                    }
                    obj
                })
                .collect(),
        )),
    };
    emit(common, &bytes, stdout)?;
    Ok(0)
}

#[derive(Debug, Clone)]
pub struct RankOptions {
    pub predictors: Vec<String>,
    pub fronts: usize,
    pub top_fraction: f64,
    pub resolution_agnostic: bool,
    pub latency_source: LatencySource,
}

pub fn parse_latency_source(text: &str) -> Result<LatencySource, CliError> {
    if text == "true" {
        return Ok(LatencySource::True);
    }
    if let Some(name) = text.strip_prefix("proxy:").filter(|s| !s.is_empty()) {
        return Ok(LatencySource::Proxy(name.to_string()));
    }
    if let Some(hw) = text.strip_prefix("hw:").filter(|s| !s.is_empty()) {
        return Ok(LatencySource::Device(hw.to_string()));
    }
    Err(CliError::Usage(format!(
        "--latency-source expects `true`, `proxy:<name>` or `hw:<id>`, got `{text}`"
    )))
}

/// Predictor reports for one record set, in predictor order.
pub fn rank_reports(records: &[&BenchRecord], hw: &str, opts: &RankOptions) -> Result<Vec<PredictorReport>, CliError> {
    opts.predictors
        .iter()
        .map(|p| {
            let mut report = rankeval::evaluate_records(
                records,
                p,
                hw,
                opts.top_fraction,
                opts.fronts,
                opts.resolution_agnostic,
            )
            .map_err(|e| data_err(format!("predictor `{p}`: {e}")))?;
            if opts.latency_source != LatencySource::True {
                report.pool_curves = rankeval::latency_proxy_eval(
                    records,
                    p,
                    &opts.latency_source,
                    hw,
                    opts.fronts,
                    opts.resolution_agnostic,
                )
                .map_err(|e| data_err(format!("predictor `{p}`: {e}")))?;
            }
            Ok(report)
        })
        .collect()
}

pub fn reports_csv(reports: &[PredictorReport]) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    rankeval::write_reports_csv(reports, &mut buf).map_err(data_err)?;
    Ok(buf)
}

fn cmd_rank(
    common: &Common,
    opts: &RankOptions,
    corr_out: Option<&Path>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<i32, CliError> {
    if opts.fronts == 0 {
        return Err(CliError::Usage("--fronts must be >= 1".into()));
    }
    if !(opts.top_fraction > 0.0 && opts.top_fraction <= 1.0) {
        return Err(CliError::Usage("--top-fraction must be in (0, 1]".into()));
    }
    let hw = single_hw(common)?;
    let (records, _) = load_records(common, stderr)?;
    single_dataset(&records)?;
    let selected = with_hw(&records, hw, stderr)?;

    let mut opts = opts.clone();
    if opts.predictors.is_empty() {
        let names: std::collections::BTreeSet<&String> = selected.iter().flat_map(|r| r.proxies.keys()).collect();
        opts.predictors = names.into_iter().map(|n| format!("zc_{n}")).collect();
        if opts.predictors.is_empty() {
            return Err(CliError::Data("no zc_ predictor columns in data".into()));
        }
    }
    let reports = rank_reports(&selected, hw, &opts)?;

    if let Some(path) = corr_out {
        let all_refs: Vec<&BenchRecord> = records.iter().collect();
        let hws: std::collections::BTreeSet<&String> = records.iter().flat_map(|r| r.latencies.keys()).collect();
        let hws: Vec<String> = hws.into_iter().cloned().collect();
        let matrix = rankeval::latency_corr_matrix(&all_refs, &hws).map_err(data_err)?;
        let mut buf = Vec::new();
        rankeval::corr_matrix_csv(&matrix, &mut buf).map_err(data_err)?;
        std::fs::write(path, buf).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    }

    let bytes = match common.format {
        Format::Csv => reports_csv(&reports)?,
        Format::Markdown => {
            let title = format!("{}, mAP_50-95", selected[0].dataset);
            rankeval::reports_markdown(&reports, &title, hw).into_bytes()
        }
        Format::Json => json_bytes(&Value::Array(
            reports
                .iter()
                .map(|r| {
                    json!({
                        "predictor": r.predictor,
                        "global_tau": r.global_tau,
                        "top_fraction": r.top_fraction,
                        "top_fraction_tau": r.top_fraction_tau,
                        "pool_curves": r.pool_curves.iter().map(|p| json!({
                            "n_fronts": p.n_fronts,
                            "pool_fraction": p.pool_fraction,
                            "recall": p.recall,
                            "precision": p.precision,
                        })).collect::<Vec<_>>(),
                    })
                })
                .collect(),
        )),
    };
    emit(common, &bytes, stdout)?;
    Ok(0)
}

#[derive(Debug, Clone)]
pub struct ScoreOptions {
    pub batch_size: usize,
    pub batches: usize,
    pub mode: CodeMode,
    pub scope: Scope,
    pub inputs: Vec<PathBuf>,
    pub baselines: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub graph_id: String,
    pub predictor: String,
    pub mode: String,
    pub scope: String,
    pub batch_size: String,
    pub seed: String,
    pub score: String,
}

fn graph_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn load_graph(path: &Path) -> Result<NetGraph, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    NetGraph::from_json(&text).map_err(|e| data_err(format!("{}: {e}", path.display())))
}

pub fn score_rows(graphs: &[PathBuf], opts: &ScoreOptions, seed: u64) -> Result<Vec<ScoreRow>, CliError> {
    if opts.inputs.is_empty() && (opts.batches == 0 || opts.batch_size < 2) {
        return Err(CliError::Usage("--batches must be >= 1 and --batch-size >= 2".into()));
    }
    let external: Vec<Tensor> = opts
        .inputs
        .iter()
        .map(|p| {
            let file = std::fs::File::open(p).map_err(|e| data_err(format!("{}: {e}", p.display())))?;
            Tensor::read_from(std::io::BufReader::new(file)).map_err(|e| data_err(format!("{}: {e}", p.display())))
        })
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::new();
    for path in graphs {
        let graph = load_graph(path)?;
        let id = graph_id(path);
        let batches = if external.is_empty() {
            zcscore::noise_batches(&graph, opts.batch_size, opts.batches, seed)
        } else {
            external.clone()
        };
        let score = zcscore::nwot_multibatch(&graph, &batches, opts.mode, opts.scope)
            .map_err(|e| data_err(format!("{id}: {e}")))?;
        rows.push(ScoreRow {
            graph_id: id.clone(),
            predictor: score.predictor.clone(),
            mode: opts.mode.label().into(),
            scope: opts.scope.label().into(),
            batch_size: score.batch_size.to_string(),
            seed: seed.to_string(),
            score: score.value.to_string(),
        });
        if opts.baselines {
            for (name, value) in [("macs", graph.mac_count()), ("params", graph.param_count())] {
                rows.push(ScoreRow {
                    graph_id: id.clone(),
                    predictor: name.into(),
                    mode: String::new(),
                    scope: String::new(),
                    batch_size: String::new(),
                    seed: String::new(),
                    score: value.to_string(),
                });
            }
        }
    }
    Ok(rows)
}

pub const SCORE_HEADER: [&str; 7] = ["graph_id", "predictor", "mode", "scope", "batch_size", "seed", "score"];

pub fn score_csv(rows: &[ScoreRow]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SCORE_HEADER).map_err(data_err)?;
    for r in rows {
        w.write_record([&r.graph_id, &r.predictor, &r.mode, &r.scope, &r.batch_size, &r.seed, &r.score])
            .map_err(data_err)?;
    }
    w.into_inner().map_err(data_err)
}

fn cmd_score(common: &Common, graphs: &[PathBuf], opts: &ScoreOptions, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let rows = score_rows(graphs, opts, common.seed)?;
    let bytes = match common.format {
        Format::Csv => score_csv(&rows)?,
        Format::Markdown => {
            let mut out = format!("| {} |\n|{}\n", SCORE_HEADER.join(" | "), "---|".repeat(SCORE_HEADER.len()));
            for r in &rows {
                writeln!(
                    out,
                    "| {} | {} | {} | {} | {} | {} | {} |",
                    r.graph_id, r.predictor, r.mode, r.scope, r.batch_size, r.seed, r.score
                )
                .unwrap();
            }
            out.into_bytes()
        }
        Format::Json => json_bytes(&Value::Array(
            rows.iter()
                .map(|r| {
                    json!({
                        "graph_id": r.graph_id,
                        "predictor": r.predictor,
                        "mode": r.mode,
                        "scope": r.scope,
                        "batch_size": r.batch_size,
                        "seed": r.seed,
                        "score": r.score,
                    })
                })
                .collect(),
        )),
    };
    emit(common, &bytes, stdout)?;
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_profile(
    common: &Common,
    graphs: &[PathBuf],
    reps: u32,
    warmup: u32,
    host: Option<String>,
    virtual_clock_us: Option<u64>,
    stdout: &mut dyn Write,
) -> Result<i32, CliError> {
    if reps == 0 {
        return Err(CliError::Usage("--reps must be >= 1".into()));
    }
    let host = profiler::sanitize_host(&host.unwrap_or_else(profiler::host_descriptor));
    let mut w = csv::Writer::from_writer(Vec::new());
    let lat_col = format!("lat_{host}_ms");
    let header = ["graph_id", "host", "reps", "warmup", lat_col.as_str(), "std_ms", "min_ms", "max_ms"];
    w.write_record(header).map_err(data_err)?;
    let mut md = format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len()));
    for path in graphs {
        let graph = load_graph(path)?;
        let [_, c, h, wd] = graph.input_shape();
        let input = Tensor::uniform_noise([1, c, h, wd], common.seed);
        let report = match virtual_clock_us {
            Some(step) => {
                let mut clock = VirtualClock::new(Duration::from_micros(step));
                profiler::time_forward_with(&graph, &input, reps, warmup, &mut clock, &host)
            }
            None => {
                let mut clock = SystemClock::default();
                profiler::time_forward_with(&graph, &input, reps, warmup, &mut clock, &host)
            }
        }
        .map_err(data_err)?;
        let row = [
            graph_id(path),
            report.host.clone(),
            report.stats.reps.to_string(),
            report.stats.warmup.to_string(),
            report.stats.mean.to_string(),
            report.stats.std.to_string(),
            report.min_ms.to_string(),
            report.max_ms.to_string(),
        ];
        writeln!(md, "| {} |", row.join(" | ")).unwrap();
        w.write_record(&row).map_err(data_err)?;
    }
    let bytes = match common.format {
        Format::Csv => w.into_inner().map_err(data_err)?,
        Format::Markdown => md.into_bytes(),
        Format::Json => return Err(CliError::Usage("profile supports csv and markdown output".into())),
    };
    emit(common, &bytes, stdout)?;
    Ok(0)
}

/// Renders CSV files as Markdown tables, one section per file.
pub fn merge_report(inputs: &[PathBuf]) -> Result<String, CliError> {
    let mut out = String::from("# archscreen report\n");
    for path in inputs {
        let mut reader = csv::Reader::from_path(path).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
        let header = reader.headers().map_err(data_err)?.clone();
        write!(out, "\n## {}\n\n", graph_id(path)).unwrap();
        writeln!(out, "| {} |", header.iter().collect::<Vec<_>>().join(" | ")).unwrap();
        writeln!(out, "|{}", "---|".repeat(header.len())).unwrap();
        for row in reader.records() {
            let row = row.map_err(|e| data_err(format!("{}: {e}", path.display())))?;
            writeln!(out, "| {} |", row.iter().collect::<Vec<_>>().join(" | ")).unwrap();
        }
    }
    Ok(out)
}

fn cmd_report(common: &Common, inputs: &[PathBuf], stdout: &mut dyn Write) -> Result<i32, CliError> {
    if common.format != Format::Markdown && common.format != Format::Csv {
        return Err(CliError::Usage("report always emits markdown".into()));
    }
    let text = merge_report(inputs)?;
    emit(common, text.as_bytes(), stdout)?;
    Ok(0)
}
