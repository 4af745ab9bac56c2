//! Latency/accuracy trade-off analysis for object-detector architecture screening.
//!
//! The crate is organised around a flat benchmark table ([`benchstore`]) and a
//! handful of analyses over it:
//!
//! - [`pareto`]: exact two-objective dominance, front peeling, candidate
//!   pre-selection across devices, threshold queries and scaling statistics.
//! - [`rankeval`]: Kendall tau-b, top-fraction tau, Pareto-prediction
//!   recall/precision of candidate pools, latency proxies and cross-device
//!   latency correlation.
//! - [`netgraph`]: a small layer-graph evaluator with shape inference,
//!   conv/BN and RepVGG fusion, and MAC/parameter counting.
//! - [`zcscore`]: NWOT and pre-activation NWOT scores computed from forward
//!   passes at random initialization.
//! - [`profiler`]: a wall-clock timing harness for graph forward passes.
//! - [`cli`]: the `archscreen` command-line front end.

pub mod benchstore;
pub mod cli;
pub mod netgraph;
pub mod pareto;
pub mod profiler;
pub mod rankeval;
pub mod zcscore;
