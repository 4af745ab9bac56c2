//! Training-free accuracy estimators computed from a forward pass at random
//! initialization.
//!
//! NWOT records, for every sample of a batch, one bit per unit of every
//! activation layer in scope: the unit is positive or not. With `N_A` bits per
//! sample the kernel is `K_ij = N_A - hamming(c_i, c_j)` and the score is
//! `ln det K`. Codes of all layers are concatenated into a single kernel.
//!
//! In pre-activation mode the bits come from the tensor entering each
//! activation instead of the one leaving it.

use std::fmt;

use thiserror::Error;

use crate::netgraph::{Features, GraphError, NetGraph, Op, Tensor};

pub use crate::netgraph::{mac_count, param_count};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("batch size must be >= 2, got {0}")]
    BatchTooSmall(usize),
    #[error("no activation layers in scope")]
    NoLayers,
    #[error("no batches given")]
    NoBatches,
    #[error("batches must share one size: {0} vs {1}")]
    MixedBatchSizes(usize, usize),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CodeMode {
    PostActivation,
    PreActivation,
}

impl CodeMode {
    pub fn label(self) -> &'static str {
        match self {
            CodeMode::PostActivation => "post",
            CodeMode::PreActivation => "pre",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scope {
    AllLayers,
    /// Skips nodes flagged `head` in the graph spec.
    NoHead,
}

impl Scope {
    pub fn label(self) -> &'static str {
        match self {
            Scope::AllLayers => "all",
            Scope::NoHead => "no-head",
        }
    }
}

/// Packed per-sample binary codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryCodes {
    words: Vec<Vec<u64>>,
    n_units: usize,
}

impl BinaryCodes {
    pub fn batch_size(&self) -> usize {
        self.words.len()
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn bit(&self, sample: usize, unit: usize) -> bool {
        self.words[sample][unit / 64] >> (unit % 64) & 1 == 1
    }

    pub fn hamming(&self, a: usize, b: usize) -> u64 {
        self.words[a]
            .iter()
            .zip(&self.words[b])
            .map(|(x, y)| (x ^ y).count_ones() as u64)
            .sum()
    }

    /// Same codes with samples sorted, so scores do not depend on batch order
    /// even at the level of floating-point rounding.
    pub fn canonical(&self) -> BinaryCodes {
        let mut words = self.words.clone();
        words.sort_unstable();
        BinaryCodes {
            words,
            n_units: self.n_units,
        }
    }

    pub fn kernel(&self) -> KernelMatrix {
        let b = self.batch_size();
        let n_a = self.n_units as f64;
        let mut entries = vec![0.0; b * b];
        for i in 0..b {
            entries[i * b + i] = n_a;
            for j in (i + 1)..b {
                let k = n_a - self.hamming(i, j) as f64;
                entries[i * b + j] = k;
                entries[j * b + i] = k;
            }
        }
        KernelMatrix {
            size: b,
            entries,
            code_length: self.n_units,
        }
    }
}

/// Indices of the activation nodes contributing codes under `scope`.
pub fn layers_in_scope(graph: &NetGraph, scope: Scope) -> Vec<usize> {
    graph
        .nodes()
        .iter()
        .enumerate()
        .filter(|(_, n)| matches!(n.op, Op::Activation { .. }))
        .filter(|(_, n)| scope == Scope::AllLayers || !n.head)
        .map(|(i, _)| i)
        .collect()
}

/// Bit = 1 iff the recorded value is strictly positive.
pub fn binary_codes(features: &Features, layers: &[usize], mode: CodeMode) -> Result<BinaryCodes, ScoreError> {
    if layers.is_empty() {
        return Err(ScoreError::NoLayers);
    }
    let tensors: Vec<&Tensor> = layers
        .iter()
        .map(|&l| match mode {
            CodeMode::PostActivation => features.post(l),
            CodeMode::PreActivation => features.pre(l),
        })
        .collect();
    let batch = tensors[0].batch();
    if batch < 2 {
        return Err(ScoreError::BatchTooSmall(batch));
    }
    let n_units: usize = tensors.iter().map(|t| t.sample_len()).sum();
    let n_words = n_units.div_ceil(64);
    let mut words = vec![vec![0u64; n_words]; batch];
    for (b, code) in words.iter_mut().enumerate() {
        let mut bit = 0usize;
        for t in &tensors {
            for &v in t.sample(b) {
                if v > 0.0 {
                    code[bit / 64] |= 1 << (bit % 64);
                }
                bit += 1;
            }
        }
    }
    Ok(BinaryCodes { words, n_units })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    size: usize,
    entries: Vec<f64>,
    code_length: usize,
}

impl KernelMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn code_length(&self) -> usize {
        self.code_length
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.size + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// `ln det K` via Cholesky; `None` when a pivot is not safely positive.
    ///
    /// Entries are integers, so a genuine pivot is far above round-off; the
    /// cut-off is `N_A * B * 64 * eps`.
    pub fn log_det(&self) -> Option<f64> {
        let n = self.size;
        let tol = (self.code_length.max(1) * n) as f64 * 64.0 * f64::EPSILON;
        let mut l = vec![0.0; n * n];
        let mut log_det = 0.0;
        for j in 0..n {
            let mut pivot = self.entries[j * n + j];
            for k in 0..j {
                pivot -= l[j * n + k] * l[j * n + k];
            }
            if !(pivot > tol) {
                return None;
            }
            let d = pivot.sqrt();
            l[j * n + j] = d;
            log_det += pivot.ln();
            for i in (j + 1)..n {
                let mut s = self.entries[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        Some(log_det)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZcScore {
    pub predictor: String,
    /// `f64::NEG_INFINITY` when the kernel is singular.
    pub value: f64,
    pub batch_size: usize,
    pub mode: CodeMode,
    pub scope: Scope,
}

impl ZcScore {
    pub fn is_sentinel(&self) -> bool {
        self.value == f64::NEG_INFINITY
    }
}

impl fmt::Display for ZcScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.predictor, self.value)
    }
}

pub fn predictor_name(mode: CodeMode, scope: Scope) -> &'static str {
    match (mode, scope) {
        (CodeMode::PostActivation, Scope::AllLayers) => "nwot",
        (CodeMode::PreActivation, Scope::AllLayers) => "nwot_preact",
        (CodeMode::PostActivation, Scope::NoHead) => "nwot_nohead",
        (CodeMode::PreActivation, Scope::NoHead) => "nwot_preact_nohead",
    }
}

/// In-scope codes for one batch, in sample order.
pub fn nwot_codes(graph: &NetGraph, batch: &Tensor, mode: CodeMode, scope: Scope) -> Result<BinaryCodes, ScoreError> {
    if batch.batch() < 2 {
        return Err(ScoreError::BatchTooSmall(batch.batch()));
    }
    let layers = layers_in_scope(graph, scope);
    if layers.is_empty() {
        return Err(ScoreError::NoLayers);
    }
    let features = graph.forward(batch)?;
    binary_codes(&features, &layers, mode)
}

/// Kernel of the in-scope codes for one batch; `K[i][j]` pairs samples `i`, `j`.
pub fn nwot_kernel(graph: &NetGraph, batch: &Tensor, mode: CodeMode, scope: Scope) -> Result<KernelMatrix, ScoreError> {
    Ok(nwot_codes(graph, batch, mode, scope)?.kernel())
}

pub fn nwot_score(graph: &NetGraph, batch: &Tensor, mode: CodeMode, scope: Scope) -> Result<ZcScore, ScoreError> {
    let kernel = nwot_codes(graph, batch, mode, scope)?.canonical().kernel();
    Ok(ZcScore {
        predictor: predictor_name(mode, scope).to_string(),
        value: kernel.log_det().unwrap_or(f64::NEG_INFINITY),
        batch_size: batch.batch(),
        mode,
        scope,
    })
}

/// Mean of per-batch scores; any singular batch makes the result the sentinel.
pub fn nwot_multibatch(graph: &NetGraph, batches: &[Tensor], mode: CodeMode, scope: Scope) -> Result<ZcScore, ScoreError> {
    let first = batches.first().ok_or(ScoreError::NoBatches)?;
    let batch_size = first.batch();
    let mut sum = 0.0;
    for b in batches {
        if b.batch() != batch_size {
            return Err(ScoreError::MixedBatchSizes(batch_size, b.batch()));
        }
        sum += nwot_score(graph, b, mode, scope)?.value;
    }
    Ok(ZcScore {
        predictor: predictor_name(mode, scope).to_string(),
        value: sum / batches.len() as f64,
        batch_size,
        mode,
        scope,
    })
}

/// `count` seeded noise batches of shape `(batch_size, C, H, W)`; batch `k`
/// uses seed `seed + k`.
pub fn noise_batches(graph: &NetGraph, batch_size: usize, count: usize, seed: u64) -> Vec<Tensor> {
    let [_, c, h, w] = graph.input_shape();
    (0..count)
        .map(|k| Tensor::uniform_noise([batch_size, c, h, w], seed.wrapping_add(k as u64)))
        .collect()
}
