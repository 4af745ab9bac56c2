//! Small layer-graph evaluator used for training-free scoring and timing.
//!
//! Graphs are read from a JSON spec:
//!
//! ```json
//! {"input_shape": [1, 3, 16, 16], "seed": 7, "nodes": [
//!   {"id": "x", "op": "input"},
//!   {"id": "c1", "op": "conv2d", "params": {"out_channels": 8, "kernel": 3, "padding": 1}, "inputs": ["x"]},
//!   {"id": "bn1", "op": "batch_norm", "inputs": ["c1"]},
//!   {"id": "a1", "op": "activation", "params": {"kind": "silu"}, "inputs": ["bn1"], "head": false}
//! ]}
//! ```
//!
//! Nodes may appear in any order as long as the edges form a DAG. The batch
//! dimension of `input_shape` is nominal: [`NetGraph::forward`] accepts any
//! batch size with matching channels and spatial size.
//!
//! Tensors are NCHW, stored as `f64`.

use std::collections::{HashMap, VecDeque};
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph spec: {0}")]
    Json(#[from] serde_json::Error),
    #[error("duplicate node id `{0}`")]
    DuplicateId(String),
    #[error("node `{node}` references unknown input `{input}`")]
    UnknownInput { node: String, input: String },
    #[error("graph has a cycle through {0:?}")]
    Cycle(Vec<String>),
    #[error("graph needs exactly one input node, found {0}")]
    InputCount(usize),
    #[error("node `{node}`: expected {expected} input(s), got {got}")]
    Arity {
        node: String,
        expected: &'static str,
        got: usize,
    },
    #[error("node `{node}`: shape mismatch: {detail}")]
    ShapeMismatch { node: String, detail: String },
    #[error("node `{node}`: invalid parameter: {detail}")]
    InvalidParam { node: String, detail: String },
    #[error("input shape {got:?} does not match graph input (C, H, W) = {expected:?}")]
    InputShape { expected: [usize; 3], got: [usize; 4] },
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("tensor file: {0}")]
    Io(#[from] std::io::Error),
    #[error("tensor file: {0}")]
    TensorFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Silu,
    Hardswish,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Hardswish => x * (x + 3.0).clamp(0.0, 6.0) / 6.0,
        }
    }
}

fn one() -> usize {
    1
}

fn default_eps() -> f64 {
    1e-5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", content = "params", rename_all = "snake_case")]
pub enum Op {
    #[serde(alias = "global_identity")]
    Input,
    Conv2d {
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default = "one")]
        groups: usize,
        #[serde(default)]
        bias: bool,
    },
    BatchNorm {
        #[serde(default = "default_eps")]
        eps: f64,
    },
    Activation {
        kind: Activation,
    },
    Add,
    Concat,
    NearestUpsample {
        factor: usize,
    },
    MaxPool {
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    /// Multiplies by a constant.
    Scale {
        factor: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    #[serde(flatten)]
    pub op: Op,
    #[serde(default)]
    pub inputs: Vec<String>,
    /// Marks detection-head layers; excluded by no-head scoring.
    #[serde(default)]
    pub head: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub input_shape: [usize; 4],
    #[serde(default)]
    pub seed: u64,
    /// When set, norm layers get seeded non-trivial statistics instead of
    /// the identity initialization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm_stats_seed: Option<u64>,
    pub nodes: Vec<NodeSpec>,
}

impl GraphSpec {
    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let mut value: serde_json::Value = serde_json::from_str(text)?;
        // ops whose parameters all have defaults may omit `params`
        if let Some(nodes) = value.get_mut("nodes").and_then(|n| n.as_array_mut()) {
            for node in nodes.iter_mut().filter_map(|n| n.as_object_mut()) {
                if node.get("op").and_then(|o| o.as_str()) == Some("batch_norm") && !node.contains_key("params") {
                    node.insert("params".into(), serde_json::json!({}));
                }
            }
        }
        Ok(serde_json::from_value(value)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: [usize; 4],
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Option<Self> {
        (data.len() == shape.iter().product::<usize>()).then_some(Tensor { shape, data })
    }

    /// Uniform noise in `[0, 1)` from a seeded ChaCha stream.
    pub fn uniform_noise(shape: [usize; 4], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..shape.iter().product::<usize>())
            .map(|_| rng.gen::<f64>())
            .collect();
        Tensor { shape, data }
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Elements per sample.
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn sample(&self, b: usize) -> &[f64] {
        let len = self.sample_len();
        &self.data[b * len..(b + 1) * len]
    }

    /// Reorders samples: output sample `i` is input sample `order[i]`.
    pub fn permute_batch(&self, order: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for &b in order {
            data.extend_from_slice(self.sample(b));
        }
        Tensor {
            shape: [order.len(), self.shape[1], self.shape[2], self.shape[3]],
            data,
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Little-endian: four `u32` dims, then row-major `f32` values.
    pub fn write_to<W: Write>(&self, mut sink: W) -> Result<(), GraphError> {
        for d in self.shape {
            let d = u32::try_from(d).map_err(|_| GraphError::TensorFormat("dim exceeds u32".into()))?;
            sink.write_all(&d.to_le_bytes())?;
        }
        for &v in &self.data {
            sink.write_all(&(v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut source: R) -> Result<Self, GraphError> {
        let mut shape = [0usize; 4];
        let mut word = [0u8; 4];
        for d in &mut shape {
            source.read_exact(&mut word)?;
            *d = u32::from_le_bytes(word) as usize;
        }
        let len: usize = shape.iter().product();
        let mut bytes = Vec::with_capacity(len * 4);
        source.read_to_end(&mut bytes)?;
        if bytes.len() != len * 4 {
            return Err(GraphError::TensorFormat(format!(
                "expected {} payload bytes, found {}",
                len * 4,
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Ok(Tensor { shape, data })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum Weights {
    #[default]
    None,
    /// `weight` is `[out, in / groups, k, k]` row-major.
    Conv { weight: Vec<f64>, bias: Option<Vec<f64>> },
    Norm {
        gamma: Vec<f64>,
        beta: Vec<f64>,
        mean: Vec<f64>,
        var: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub op: Op,
    /// Indices of producer nodes, all smaller than this node's index.
    pub inputs: Vec<usize>,
    pub head: bool,
    /// Output shape for the nominal batch size.
    pub shape: [usize; 4],
    pub weights: Weights,
}

/// A validated, shape-inferred, weighted graph in topological order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGraph {
    input_shape: [usize; 4],
    seed: u64,
    nodes: Vec<Node>,
    input: usize,
}

/// Stable 64-bit FNV-1a, used to key weight streams by node id.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn node_rng(seed: u64, id: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(id.as_bytes()));
    rng
}

/// Uniform init bound `sqrt(6 / fan_in)`.
pub fn init_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

fn conv_out(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    (padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

impl NetGraph {
    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        Self::from_spec(&GraphSpec::from_json(text)?)
    }

    /// Validates the spec, orders nodes topologically, infers shapes and
    /// initializes weights from `spec.seed`.
    pub fn from_spec(spec: &GraphSpec) -> Result<Self, GraphError> {
        let mut index = HashMap::new();
        for (i, n) in spec.nodes.iter().enumerate() {
            if index.insert(n.id.as_str(), i).is_some() {
                return Err(GraphError::DuplicateId(n.id.clone()));
            }
        }
        let inputs_of: Vec<Vec<usize>> = spec
            .nodes
            .iter()
            .map(|n| {
                n.inputs
                    .iter()
                    .map(|input| {
                        index.get(input.as_str()).copied().ok_or_else(|| GraphError::UnknownInput {
                            node: n.id.clone(),
                            input: input.clone(),
                        })
                    })
                    .collect()
            })
            .collect::<Result<_, _>>()?;

        // Kahn's algorithm; ready nodes are taken in spec order
        let n = spec.nodes.len();
        let mut indegree: Vec<usize> = inputs_of.iter().map(Vec::len).collect();
        let mut consumers = vec![Vec::new(); n];
        for (i, ins) in inputs_of.iter().enumerate() {
            for &p in ins {
                consumers[p].push(i);
            }
        }
        let mut ready: VecDeque<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop_front() {
            order.push(i);
            for &c in &consumers[i] {
                // a node listing the same input twice is counted twice
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.push_back(c);
                }
            }
        }
        if order.len() != n {
            let stuck = (0..n)
                .filter(|&i| indegree[i] > 0)
                .map(|i| spec.nodes[i].id.clone())
                .collect();
            return Err(GraphError::Cycle(stuck));
        }

        let mut position = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            position[i] = pos;
        }
        let nodes: Vec<Node> = order
            .iter()
            .map(|&i| Node {
                id: spec.nodes[i].id.clone(),
                op: spec.nodes[i].op.clone(),
                inputs: inputs_of[i].iter().map(|&p| position[p]).collect(),
                head: spec.nodes[i].head,
                shape: [0; 4],
                weights: Weights::None,
            })
            .collect();
        let input_nodes: Vec<usize> = (0..n).filter(|&i| nodes[i].op == Op::Input).collect();
        if input_nodes.len() != 1 {
            return Err(GraphError::InputCount(input_nodes.len()));
        }

        let mut graph = NetGraph {
            input_shape: spec.input_shape,
            seed: spec.seed,
            nodes,
            input: input_nodes[0],
        };
        graph.infer_shapes()?;
        graph.init_weights(spec.seed);
        if let Some(stats_seed) = spec.norm_stats_seed {
            graph.randomize_norm_stats(stats_seed);
        }
        Ok(graph)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn input_shape(&self) -> [usize; 4] {
        self.input_shape
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn shape_of(&self, id: &str) -> Option<[usize; 4]> {
        self.node_index(id).map(|i| self.nodes[i].shape)
    }

    pub fn node_mut(&mut self, id: &str) -> Option<&mut Node> {
        self.nodes.iter_mut().find(|n| n.id == id)
    }

    /// Nodes without consumers, in topological order.
    pub fn outputs(&self) -> Vec<usize> {
        let mut used = vec![false; self.nodes.len()];
        for n in &self.nodes {
            for &p in &n.inputs {
                used[p] = true;
            }
        }
        (0..self.nodes.len()).filter(|&i| !used[i]).collect()
    }

    fn consumers(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            for &p in &n.inputs {
                out[p].push(i);
            }
        }
        out
    }

    /// Recomputes every node's output shape for the nominal input shape.
    pub fn infer_shapes(&mut self) -> Result<(), GraphError> {
        let shapes = self.shapes_for(self.input_shape)?;
        for (node, shape) in self.nodes.iter_mut().zip(shapes) {
            node.shape = shape;
        }
        Ok(())
    }

    fn shapes_for(&self, input_shape: [usize; 4]) -> Result<Vec<[usize; 4]>, GraphError> {
        let mut shapes: Vec<[usize; 4]> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let shape = node_shape(node, &shapes, input_shape)?;
            shapes.push(shape);
        }
        Ok(shapes)
    }

    /// Re-draws all weights: conv weights uniform in `±sqrt(6 / fan_in)` and
    /// biases in `±1 / sqrt(fan_in)`, from a ChaCha stream keyed by
    /// `(seed, node id)`; norms get scale 1, shift 0, mean 0, variance 1.
    pub fn init_weights(&mut self, seed: u64) {
        self.seed = seed;
        let shapes: Vec<[usize; 4]> = self.nodes.iter().map(|n| n.shape).collect();
        for node in &mut self.nodes {
            node.weights = match node.op {
                Op::Conv2d {
                    out_channels,
                    kernel,
                    groups,
                    bias,
                    ..
                } => {
                    let in_channels = shapes[node.inputs[0]][1];
                    let fan_in = in_channels / groups * kernel * kernel;
                    let bound = init_bound(fan_in);
                    let mut rng = node_rng(seed, &node.id);
                    let weight = (0..out_channels * fan_in)
                        .map(|_| rng.gen_range(-bound..bound))
                        .collect();
                    let bias = bias.then(|| {
                        let b = 1.0 / (fan_in as f64).sqrt();
                        (0..out_channels).map(|_| rng.gen_range(-b..b)).collect()
                    });
                    Weights::Conv { weight, bias }
                }
                Op::BatchNorm { .. } => {
                    let c = node.shape[1];
                    Weights::Norm {
                        gamma: vec![1.0; c],
                        beta: vec![0.0; c],
                        mean: vec![0.0; c],
                        var: vec![1.0; c],
                    }
                }
                _ => Weights::None,
            };
        }
    }

    /// Replaces norm statistics with seeded non-trivial values
    /// (scale in [0.5, 1.5), shift and mean in [-0.5, 0.5), variance in [0.5, 2)).
    pub fn randomize_norm_stats(&mut self, seed: u64) {
        for node in &mut self.nodes {
            if let Weights::Norm {
                gamma,
                beta,
                mean,
                var,
            } = &mut node.weights
            {
                let mut rng = node_rng(seed ^ 0x9e37_79b9_7f4a_7c15, &node.id);
                for c in 0..gamma.len() {
                    gamma[c] = rng.gen_range(0.5..1.5);
                    beta[c] = rng.gen_range(-0.5..0.5);
                    mean[c] = rng.gen_range(-0.5..0.5);
                    var[c] = rng.gen_range(0.5..2.0);
                }
            }
        }
    }

    /// Evaluates every node in topological order.
    pub fn forward(&self, input: &Tensor) -> Result<Features, GraphError> {
        let [_, c, h, w] = self.input_shape;
        if input.shape[1..] != [c, h, w] || input.shape[0] == 0 {
            return Err(GraphError::InputShape {
                expected: [c, h, w],
                got: input.shape,
            });
        }
        let mut input_shape = self.input_shape;
        input_shape[0] = input.shape[0];
        let shapes = self.shapes_for(input_shape)?;

        let mut tensors: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let out = if i == self.input {
                input.clone()
            } else {
                eval_node(node, &tensors, shapes[i])
            };
            tensors.push(out);
        }
        Ok(Features {
            tensors,
            activation_inputs: self
                .nodes
                .iter()
                .map(|n| match n.op {
                    Op::Activation { .. } => {
                        let src = &self.nodes[n.inputs[0]];
                        // a norm layer feeding the activation counts as part of it
                        Some(match src.op {
                            Op::BatchNorm { .. } => src.inputs[0],
                            _ => n.inputs[0],
                        })
                    }
                    _ => None,
                })
                .collect(),
        })
    }

    /// Output tensors of the sink nodes, keyed by id.
    pub fn forward_outputs(&self, input: &Tensor) -> Result<Vec<(String, Tensor)>, GraphError> {
        let features = self.forward(input)?;
        let mut tensors = features.tensors;
        Ok(self
            .outputs()
            .into_iter()
            .map(|i| (self.nodes[i].id.clone(), std::mem::replace(&mut tensors[i], Tensor::zeros([0; 4]))))
            .collect())
    }

    /// Folds eval-mode norms into preceding convolutions and collapses
    /// RepVGG-style branch sums into a single convolution.
    ///
    /// A norm is folded only when its producer is a convolution consumed by
    /// nothing else. A branch sum is collapsed when every branch is either a
    /// folded conv+norm reading a common source (odd kernel, "same" padding,
    /// shared stride and groups) or a norm applied directly to that source.
    /// Fused nodes keep the id of the node they replace, so sink ids are
    /// stable.
    pub fn fuse(&self) -> NetGraph {
        let mut nodes = self.nodes.clone();
        let mut removed = vec![false; nodes.len()];
        let mut from_norm = vec![false; nodes.len()];
        let consumers = self.consumers();

        for b in 0..nodes.len() {
            let Op::BatchNorm { eps } = nodes[b].op else { continue };
            let c = nodes[b].inputs[0];
            if !matches!(nodes[c].op, Op::Conv2d { .. }) || consumers[c].len() != 1 || removed[c] {
                continue;
            }
            let Weights::Norm { gamma, beta, mean, var } = &nodes[b].weights else { continue };
            let Op::Conv2d {
                out_channels,
                kernel,
                stride,
                padding,
                groups,
                ..
            } = nodes[c].op
            else {
                unreachable!()
            };
            let Weights::Conv { weight, bias } = &nodes[c].weights else { continue };
            let per_out = weight.len() / out_channels;
            let mut new_weight = weight.clone();
            let mut new_bias = vec![0.0; out_channels];
            for o in 0..out_channels {
                let scale = gamma[o] / (var[o] + eps).sqrt();
                for v in &mut new_weight[o * per_out..(o + 1) * per_out] {
                    *v *= scale;
                }
                let b0 = bias.as_ref().map_or(0.0, |b| b[o]);
                new_bias[o] = (b0 - mean[o]) * scale + beta[o];
            }
            nodes[b].op = Op::Conv2d {
                out_channels,
                kernel,
                stride,
                padding,
                groups,
                bias: true,
            };
            nodes[b].inputs = nodes[c].inputs.clone();
            nodes[b].weights = Weights::Conv {
                weight: new_weight,
                bias: Some(new_bias),
            };
            removed[c] = true;
            from_norm[b] = true;
        }

        for a in 0..nodes.len() {
            if nodes[a].op != Op::Add || nodes[a].inputs.len() < 2 {
                continue;
            }
            if let Some(plan) = repvgg_plan(&nodes, &consumers, &from_norm, a) {
                for &br in &nodes[a].inputs.clone() {
                    removed[br] = true;
                }
                let source = plan.source;
                nodes[a].op = Op::Conv2d {
                    out_channels: plan.out_channels,
                    kernel: plan.kernel,
                    stride: plan.stride,
                    padding: (plan.kernel - 1) / 2,
                    groups: plan.groups,
                    bias: true,
                };
                nodes[a].inputs = vec![source];
                nodes[a].weights = Weights::Conv {
                    weight: plan.weight,
                    bias: Some(plan.bias),
                };
            }
        }

        let mut remap = vec![usize::MAX; nodes.len()];
        let mut kept = Vec::new();
        for (i, node) in nodes.into_iter().enumerate() {
            if removed[i] {
                continue;
            }
            remap[i] = kept.len();
            kept.push(node);
        }
        for node in &mut kept {
            for p in &mut node.inputs {
                *p = remap[*p];
            }
        }
        NetGraph {
            input_shape: self.input_shape,
            seed: self.seed,
            input: remap[self.input],
            nodes: kept,
        }
    }

    /// Multiply-accumulates of the fused graph at the nominal input shape.
    pub fn mac_count(&self) -> u64 {
        self.fuse().raw_mac_count()
    }

    /// Parameters of the fused graph: conv weights and biases, plus scale and
    /// shift of any norm that could not be folded.
    pub fn param_count(&self) -> u64 {
        self.fuse().raw_param_count()
    }

    /// MACs of this graph as-is (no fusion).
    pub fn raw_mac_count(&self) -> u64 {
        self.nodes
            .iter()
            .map(|node| match node.op {
                Op::Conv2d {
                    out_channels,
                    kernel,
                    groups,
                    ..
                } => {
                    let in_channels = self.nodes[node.inputs[0]].shape[1];
                    let [n, _, h, w] = node.shape;
                    (n * in_channels / groups * out_channels * kernel * kernel * h * w) as u64
                }
                _ => 0,
            })
            .sum()
    }

    pub fn raw_param_count(&self) -> u64 {
        self.nodes
            .iter()
            .map(|node| match &node.weights {
                Weights::Conv { weight, bias } => {
                    (weight.len() + bias.as_ref().map_or(0, Vec::len)) as u64
                }
                Weights::Norm { gamma, beta, .. } => (gamma.len() + beta.len()) as u64,
                Weights::None => 0,
            })
            .sum()
    }
}

pub fn mac_count(graph: &NetGraph) -> u64 {
    graph.mac_count()
}

pub fn param_count(graph: &NetGraph) -> u64 {
    graph.param_count()
}

struct RepvggPlan {
    source: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    groups: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

fn repvgg_plan(
    nodes: &[Node],
    consumers: &[Vec<usize>],
    from_norm: &[bool],
    add: usize,
) -> Option<RepvggPlan> {
    let branches = &nodes[add].inputs;
    let mut source = None;
    let mut conv_params = None;
    let mut kernel = 1;
    for &br in branches {
        // each branch must feed only this sum
        if consumers[br].len() != 1 {
            return None;
        }
        let src = match nodes[br].op {
            Op::Conv2d {
                out_channels,
                kernel: k,
                stride,
                padding,
                groups,
                ..
            } if from_norm[br] => {
                if k % 2 == 0 || padding != (k - 1) / 2 {
                    return None;
                }
                let params = (out_channels, stride, groups);
                if conv_params.is_some_and(|p| p != params) {
                    return None;
                }
                conv_params = Some(params);
                kernel = kernel.max(k);
                nodes[br].inputs[0]
            }
            Op::BatchNorm { .. } => nodes[br].inputs[0],
            _ => return None,
        };
        if source.is_some_and(|s| s != src) {
            return None;
        }
        source = Some(src);
    }
    let source = source?;
    let (out_channels, stride, groups) = conv_params?;
    let in_channels = nodes[source].shape[1];
    let per_group_in = in_channels / groups;
    let kk = kernel * kernel;
    let mut weight = vec![0.0; out_channels * per_group_in * kk];
    let mut bias = vec![0.0; out_channels];

    for &br in branches {
        match (&nodes[br].op, &nodes[br].weights) {
            (Op::Conv2d { kernel: k, .. }, Weights::Conv { weight: w, bias: b }) => {
                let off = (kernel - k) / 2;
                for o in 0..out_channels {
                    for i in 0..per_group_in {
                        for y in 0..*k {
                            for x in 0..*k {
                                let src = ((o * per_group_in + i) * k + y) * k + x;
                                let dst = ((o * per_group_in + i) * kernel + y + off) * kernel + x + off;
                                weight[dst] += w[src];
                            }
                        }
                    }
                    bias[o] += b.as_ref().map_or(0.0, |b| b[o]);
                }
            }
            (Op::BatchNorm { eps }, Weights::Norm { gamma, beta, mean, var }) => {
                if in_channels != out_channels || stride != 1 {
                    return None;
                }
                let centre = kernel / 2;
                for o in 0..out_channels {
                    let scale = gamma[o] / (var[o] + eps).sqrt();
                    let i = o % per_group_in;
                    weight[((o * per_group_in + i) * kernel + centre) * kernel + centre] += scale;
                    bias[o] += beta[o] - mean[o] * scale;
                }
            }
            _ => return None,
        }
    }
    Some(RepvggPlan {
        source,
        out_channels,
        kernel,
        stride,
        groups,
        weight,
        bias,
    })
}

fn arity(node: &Node, ok: bool, expected: &'static str) -> Result<(), GraphError> {
    if ok {
        Ok(())
    } else {
        Err(GraphError::Arity {
            node: node.id.clone(),
            expected,
            got: node.inputs.len(),
        })
    }
}

fn invalid(node: &Node, detail: impl Into<String>) -> GraphError {
    GraphError::InvalidParam {
        node: node.id.clone(),
        detail: detail.into(),
    }
}

fn node_shape(node: &Node, shapes: &[[usize; 4]], input_shape: [usize; 4]) -> Result<[usize; 4], GraphError> {
    let single = |node: &Node| -> Result<[usize; 4], GraphError> {
        arity(node, node.inputs.len() == 1, "1")?;
        Ok(shapes[node.inputs[0]])
    };
    match &node.op {
        Op::Input => {
            arity(node, node.inputs.is_empty(), "0")?;
            if input_shape.contains(&0) {
                return Err(invalid(node, "input dims must be positive"));
            }
            Ok(input_shape)
        }
        Op::Conv2d {
            out_channels,
            kernel,
            stride,
            padding,
            groups,
            ..
        } => {
            let [n, c, h, w] = single(node)?;
            if *kernel == 0 || *stride == 0 || *groups == 0 || *out_channels == 0 {
                return Err(invalid(node, "kernel, stride, groups and out_channels must be >= 1"));
            }
            if c % groups != 0 || out_channels % groups != 0 {
                return Err(invalid(
                    node,
                    format!("groups {groups} must divide in ({c}) and out ({out_channels}) channels"),
                ));
            }
            let oh = conv_out(h, *kernel, *stride, *padding);
            let ow = conv_out(w, *kernel, *stride, *padding);
            match (oh, ow) {
                (Some(oh), Some(ow)) => Ok([n, *out_channels, oh, ow]),
                _ => Err(GraphError::ShapeMismatch {
                    node: node.id.clone(),
                    detail: format!("kernel {kernel} larger than padded input {h}x{w}"),
                }),
            }
        }
        Op::BatchNorm { eps } => {
            if !(*eps > 0.0) {
                return Err(invalid(node, "eps must be > 0"));
            }
            single(node)
        }
        Op::Activation { .. } => single(node),
        Op::Scale { factor } => {
            if !factor.is_finite() {
                return Err(invalid(node, "scale factor must be finite"));
            }
            single(node)
        }
        Op::Add => {
            arity(node, node.inputs.len() >= 2, ">= 2")?;
            let first = shapes[node.inputs[0]];
            for &i in &node.inputs[1..] {
                if shapes[i] != first {
                    return Err(GraphError::ShapeMismatch {
                        node: node.id.clone(),
                        detail: format!("add of {:?} and {:?}", first, shapes[i]),
                    });
                }
            }
            Ok(first)
        }
        Op::Concat => {
            arity(node, !node.inputs.is_empty(), ">= 1")?;
            let first = shapes[node.inputs[0]];
            let mut channels = 0;
            for &i in &node.inputs {
                let s = shapes[i];
                if (s[0], s[2], s[3]) != (first[0], first[2], first[3]) {
                    return Err(GraphError::ShapeMismatch {
                        node: node.id.clone(),
                        detail: format!("concat of {:?} and {:?}", first, s),
                    });
                }
                channels += s[1];
            }
            Ok([first[0], channels, first[2], first[3]])
        }
        Op::NearestUpsample { factor } => {
            if *factor == 0 {
                return Err(invalid(node, "factor must be >= 1"));
            }
            let [n, c, h, w] = single(node)?;
            Ok([n, c, h * factor, w * factor])
        }
        Op::MaxPool { kernel, stride, padding } => {
            if *kernel == 0 || *stride == 0 {
                return Err(invalid(node, "kernel and stride must be >= 1"));
            }
            if 2 * padding > *kernel {
                return Err(invalid(node, "padding must be at most half the kernel"));
            }
            let [n, c, h, w] = single(node)?;
            match (conv_out(h, *kernel, *stride, *padding), conv_out(w, *kernel, *stride, *padding)) {
                (Some(oh), Some(ow)) => Ok([n, c, oh, ow]),
                _ => Err(GraphError::ShapeMismatch {
                    node: node.id.clone(),
                    detail: format!("pool kernel {kernel} larger than padded input {h}x{w}"),
                }),
            }
        }
    }
}

fn eval_node(node: &Node, tensors: &[Tensor], out_shape: [usize; 4]) -> Tensor {
    let x = &tensors[node.inputs.first().copied().unwrap_or(0)];
    match &node.op {
        Op::Input => unreachable!("input handled by caller"),
        Op::Conv2d {
            out_channels,
            kernel,
            stride,
            padding,
            groups,
            ..
        } => {
            let Weights::Conv { weight, bias } = &node.weights else {
                panic!("conv `{}` has no weights", node.id)
            };
            conv2d(x, weight, bias.as_deref(), *out_channels, *kernel, *stride, *padding, *groups, out_shape)
        }
        Op::BatchNorm { eps } => {
            let Weights::Norm { gamma, beta, mean, var } = &node.weights else {
                panic!("norm `{}` has no weights", node.id)
            };
            let [n, c, h, w] = x.shape;
            let plane = h * w;
            let mut out = x.clone();
            for b in 0..n {
                for ch in 0..c {
                    let scale = gamma[ch] / (var[ch] + eps).sqrt();
                    let shift = beta[ch] - mean[ch] * scale;
                    let start = (b * c + ch) * plane;
                    for v in &mut out.data[start..start + plane] {
                        *v = *v * scale + shift;
                    }
                }
            }
            out
        }
        Op::Activation { kind } => Tensor {
            shape: x.shape,
            data: x.data.iter().map(|&v| kind.apply(v)).collect(),
        },
        Op::Scale { factor } => Tensor {
            shape: x.shape,
            data: x.data.iter().map(|&v| v * factor).collect(),
        },
        Op::Add => {
            let mut out = x.clone();
            for &i in &node.inputs[1..] {
                for (o, v) in out.data.iter_mut().zip(&tensors[i].data) {
                    *o += v;
                }
            }
            out
        }
        Op::Concat => {
            let [n, _, h, w] = out_shape;
            let plane = h * w;
            let mut data = Vec::with_capacity(out_shape.iter().product());
            for b in 0..n {
                for &i in &node.inputs {
                    let t = &tensors[i];
                    let len = t.shape[1] * plane;
                    data.extend_from_slice(&t.data[b * len..(b + 1) * len]);
                }
            }
            Tensor { shape: out_shape, data }
        }
        Op::NearestUpsample { factor } => {
            let [n, c, oh, ow] = out_shape;
            let (h, w) = (x.shape[2], x.shape[3]);
            let mut data = Vec::with_capacity(n * c * oh * ow);
            for nc in 0..n * c {
                let base = nc * h * w;
                for y in 0..oh {
                    let row = base + (y / factor) * w;
                    for xx in 0..ow {
                        data.push(x.data[row + xx / factor]);
                    }
                }
            }
            Tensor { shape: out_shape, data }
        }
        Op::MaxPool { kernel, stride, padding } => {
            let [n, c, oh, ow] = out_shape;
            let (h, w) = (x.shape[2] as isize, x.shape[3] as isize);
            let mut data = Vec::with_capacity(n * c * oh * ow);
            for nc in 0..n * c {
                let base = nc * (h * w) as usize;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        for ky in 0..*kernel {
                            let iy = (oy * stride + ky) as isize - *padding as isize;
                            if iy < 0 || iy >= h {
                                continue;
                            }
                            for kx in 0..*kernel {
                                let ix = (ox * stride + kx) as isize - *padding as isize;
                                if ix < 0 || ix >= w {
                                    continue;
                                }
                                best = best.max(x.data[base + (iy * w + ix) as usize]);
                            }
                        }
                        data.push(best);
                    }
                }
            }
            Tensor { shape: out_shape, data }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d(
    x: &Tensor,
    weight: &[f64],
    bias: Option<&[f64]>,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    groups: usize,
    out_shape: [usize; 4],
) -> Tensor {
    let [n, c_in, h, w] = x.shape;
    let [_, _, oh, ow] = out_shape;
    let in_per_group = c_in / groups;
    let out_per_group = out_channels / groups;
    let mut out = Tensor::zeros(out_shape);
    let (h, w, pad) = (h as isize, w as isize, padding as isize);

    for b in 0..n {
        for o in 0..out_channels {
            let g = o / out_per_group;
            let b0 = bias.map_or(0.0, |bias| bias[o]);
            let out_base = (b * out_channels + o) * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b0;
                    for i in 0..in_per_group {
                        let ic = g * in_per_group + i;
                        let in_base = (b * c_in + ic) * (h * w) as usize;
                        let w_base = (o * in_per_group + i) * kernel * kernel;
                        for ky in 0..kernel {
                            let iy = (oy * stride + ky) as isize - pad;
                            if iy < 0 || iy >= h {
                                continue;
                            }
                            let row = in_base + (iy * w) as usize;
                            for kx in 0..kernel {
                                let ix = (ox * stride + kx) as isize - pad;
                                if ix < 0 || ix >= w {
                                    continue;
                                }
                                acc += weight[w_base + ky * kernel + kx] * x.data[row + ix as usize];
                            }
                        }
                    }
                    out.data[out_base + oy * ow + ox] = acc;
                }
            }
        }
    }
    out
}

/// Per-node tensors from one forward pass.
#[derive(Debug, Clone)]
pub struct Features {
    tensors: Vec<Tensor>,
    activation_inputs: Vec<Option<usize>>,
}

impl Features {
    pub fn post(&self, node: usize) -> &Tensor {
        &self.tensors[node]
    }

    /// For activation nodes, the tensor entering the norm-activation pair:
    /// the norm layer's input when one feeds the activation directly, else
    /// the activation's input. Other nodes return their own output.
    pub fn pre(&self, node: usize) -> &Tensor {
        match self.activation_inputs[node] {
            Some(input) => &self.tensors[input],
            None => &self.tensors[node],
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }
}
