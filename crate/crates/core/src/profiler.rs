//! Wall-clock timing of graph forward passes.
//!
//! Protocol: batch size 1, `warmup` untimed runs, then `reps` timed runs
//! (defaults 5 and 200). Only the graph itself is executed. Timing sessions
//! in one process are serialized through a global lock.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::benchstore::LatencyStats;
use crate::netgraph::{GraphError, NetGraph, Tensor};

pub const DEFAULT_REPS: u32 = 200;
pub const DEFAULT_WARMUP: u32 = 5;

static TIMING_LOCK: Mutex<()> = Mutex::new(());

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("reps must be >= 1")]
    ZeroReps,
    #[error("timing protocol requires batch size 1, got {0}")]
    BatchSize(usize),
    #[error("clock went backwards")]
    NonMonotonicClock,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Monotonic time source; readings are offsets from an arbitrary origin.
pub trait Clock {
    fn now(&mut self) -> Duration;
}

pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock {
            origin: Instant::now(),
        }
    }
}

impl Clock for SystemClock {
    fn now(&mut self) -> Duration {
        self.origin.elapsed()
    }
}

/// Deterministic clock advancing by a fixed step per reading. Used to make
/// timing output reproducible in tests and golden files.
#[derive(Debug, Clone)]
pub struct VirtualClock {
    now: Duration,
    step: Duration,
}

impl VirtualClock {
    pub fn new(step: Duration) -> Self {
        VirtualClock {
            now: Duration::ZERO,
            step,
        }
    }
}

impl Clock for VirtualClock {
    fn now(&mut self) -> Duration {
        self.now += self.step;
        self.now
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingReport {
    pub stats: LatencyStats,
    pub min_ms: f64,
    pub max_ms: f64,
    pub host: String,
}

/// Runs `work` `warmup` times untimed, then `reps` times timed.
pub fn time_runs<F, C>(mut work: F, reps: u32, warmup: u32, clock: &mut C) -> Result<(LatencyStats, f64, f64), ProfileError>
where
    F: FnMut() -> Result<(), ProfileError>,
    C: Clock + ?Sized,
{
    if reps == 0 {
        return Err(ProfileError::ZeroReps);
    }
    let _guard = TIMING_LOCK.lock().unwrap_or_else(|p| p.into_inner());
    for _ in 0..warmup {
        work()?;
    }
    let mut samples = Vec::with_capacity(reps as usize);
    for _ in 0..reps {
        let start = clock.now();
        work()?;
        let end = clock.now();
        let elapsed = end.checked_sub(start).ok_or(ProfileError::NonMonotonicClock)?;
        samples.push(elapsed.as_secs_f64() * 1e3);
    }
    Ok(summarize(&samples, warmup))
}

fn summarize(samples: &[f64], warmup: u32) -> (LatencyStats, f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let std = if samples.len() > 1 {
        (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // summation round-off can push the mean a hair outside [min, max]
    let mean = mean.clamp(min, max);
    let stats = LatencyStats {
        mean,
        std,
        reps: samples.len() as u32,
        warmup,
    };
    (stats, min, max)
}

pub fn time_forward_with<C: Clock + ?Sized>(
    graph: &NetGraph,
    input: &Tensor,
    reps: u32,
    warmup: u32,
    clock: &mut C,
    host: &str,
) -> Result<TimingReport, ProfileError> {
    if input.batch() != 1 {
        return Err(ProfileError::BatchSize(input.batch()));
    }
    // validate once so the timed loop cannot fail on shape errors
    graph.forward(input)?;
    let (stats, min_ms, max_ms) = time_runs(
        || {
            let out = graph.forward(input)?;
            std::hint::black_box(&out);
            Ok(())
        },
        reps,
        warmup,
        clock,
    )?;
    Ok(TimingReport {
        stats,
        min_ms,
        max_ms,
        host: host.to_string(),
    })
}

pub fn time_forward(graph: &NetGraph, input: &Tensor, reps: u32, warmup: u32) -> Result<TimingReport, ProfileError> {
    time_forward_with(graph, input, reps, warmup, &mut SystemClock::default(), &host_descriptor())
}

/// `<hostname>-<os>-<arch>`, lower-cased with non-alphanumerics mapped to `_`.
pub fn host_descriptor() -> String {
    let hostname = std::env::var("HOSTNAME")
        .ok()
        .or_else(|| std::fs::read_to_string("/etc/hostname").ok())
        .map(|h| h.trim().to_string())
        .filter(|h| !h.is_empty())
        .unwrap_or_else(|| "localhost".into());
    sanitize_host(&format!("{hostname}-{}-{}", std::env::consts::OS, std::env::consts::ARCH))
}

/// Makes a host label usable inside a `lat_<host>_ms` column name.
pub fn sanitize_host(host: &str) -> String {
    host.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}
