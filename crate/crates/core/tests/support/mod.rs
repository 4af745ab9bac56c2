//! Shared helpers for the integration suites. The oracles never call into the
//! library's algorithms; each is the naive definition.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use archscreen::netgraph::{Activation, GraphSpec, NodeSpec, Op, Tensor};
use archscreen::cli::run;
use archscreen::pareto::ObjectivePoint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Definition-level dominance: no worse in both objectives, better in one.
/// A -inf accuracy never dominates and is dominated by every finite point.
pub fn naive_dominates(a: (f64, f64), b: (f64, f64)) -> bool {
    let (la, aa) = a;
    let (lb, ab) = b;
    if aa == f64::NEG_INFINITY {
        return false;
    }
    if ab == f64::NEG_INFINITY {
        return true;
    }
    la <= lb && aa >= ab && (la < lb || aa > ab)
}

/// All-pairs first front.
pub fn oracle_front(points: &[(f64, f64)], alive: &BTreeSet<usize>) -> BTreeSet<usize> {
    alive
        .iter()
        .copied()
        .filter(|&i| !alive.iter().any(|&j| j != i && naive_dominates(points[j], points[i])))
        .collect()
}

/// Peeling from an all-pairs dominance table: a point joins the next front
/// once every point dominating it has been assigned.
pub fn oracle_peel(points: &[(f64, f64)]) -> Vec<BTreeSet<usize>> {
    let n = points.len();
    let mut dominated_by = vec![0usize; n];
    let mut dominates_list = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i != j && naive_dominates(points[i], points[j]) {
                dominates_list[i].push(j);
                dominated_by[j] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: BTreeSet<usize> = (0..n).filter(|&i| dominated_by[i] == 0).collect();
    while !current.is_empty() {
        let mut next = BTreeSet::new();
        for &i in &current {
            for &j in &dominates_list[i] {
                dominated_by[j] -= 1;
                if dominated_by[j] == 0 {
                    next.insert(j);
                }
            }
        }
        fronts.push(current);
        current = next;
    }
    assert_eq!(fronts.iter().map(BTreeSet::len).sum::<usize>(), n, "oracle left points unassigned");
    fronts
}

/// Random points on a coarse grid so coordinate ties and exact duplicates
/// occur often.
pub fn tied_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            let lat = rng.gen_range(1..200) as f64 * 0.5;
            let acc = rng.gen_range(0..150) as f64 / 150.0;
            (lat, acc)
        })
        .collect();
    for _ in 0..n / 20 {
        let src = rng.gen_range(0..n);
        let dst = rng.gen_range(0..n);
        pts[dst] = pts[src];
    }
    pts
}

pub fn to_points(pts: &[(f64, f64)]) -> Vec<ObjectivePoint<usize>> {
    pts.iter()
        .enumerate()
        .map(|(i, &(l, a))| ObjectivePoint::new(l, a, i))
        .collect()
}

/// All-pairs Kendall tau-b.
pub fn oracle_tau_b(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut conc, mut disc, mut tie_x, mut tie_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 && dy == 0.0 {
                continue;
            }
            if dx == 0.0 {
                tie_x += 1;
            } else if dy == 0.0 {
                tie_y += 1;
            } else if (dx > 0.0) == (dy > 0.0) {
                conc += 1;
            } else {
                disc += 1;
            }
        }
    }
    let denom = (((conc + disc + tie_x) as f64) * ((conc + disc + tie_y) as f64)).sqrt();
    (conc - disc) as f64 / denom
}

/// Direct nested-loop convolution, NCHW, weight `[out, in/groups, k, k]`.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv(
    x: &Tensor,
    weight: &[f64],
    bias: Option<&[f64]>,
    out_c: usize,
    k: usize,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Tensor {
    let [n, c, h, w] = x.shape;
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let cin_g = c / groups;
    let cout_g = out_c / groups;
    let mut out = Tensor::zeros([n, out_c, oh, ow]);
    for b in 0..n {
        for o in 0..out_c {
            let g = o / cout_g;
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = bias.map_or(0.0, |bb| bb[o]);
                    for ci in 0..cin_g {
                        let ic = g * cin_g + ci;
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xx * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x.data[((b * c + ic) * h + iy as usize) * w + ix as usize];
                                let wv = weight[((o * cin_g + ci) * k + ky) * k + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out.data[((b * out_c + o) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    out
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(mut a: Vec<f64>, n: usize) -> Vec<f64> {
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off < 1e-22 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).collect()
}

/// Binary codes of one layer by definition: bit set iff value > 0.
pub fn sign_bits(t: &Tensor) -> Vec<Vec<bool>> {
    (0..t.batch()).map(|b| t.sample(b).iter().map(|&v| v > 0.0).collect()).collect()
}

/// Naive kernel K[i][j] = matching bits over concatenated codes.
pub fn naive_kernel(codes: &[Vec<bool>]) -> Vec<f64> {
    let n = codes.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            k[i * n + j] = codes[i].iter().zip(&codes[j]).filter(|(a, b)| a == b).count() as f64;
        }
    }
    k
}

/// All activations replaced by ReLU, which commutes with positive scaling.
pub fn relu_only(mut s: GraphSpec) -> GraphSpec {
    for n in &mut s.nodes {
        if let Op::Activation { kind } = &mut n.op {
            *kind = Activation::Relu;
        }
    }
    s
}

/// Multiplies each activation's input by `factor` and its output by
/// `1 / factor`, so recorded tensors are scaled while downstream layers see
/// the original values (bit-exact for powers of two).
pub fn with_scales(s: &GraphSpec, factor: f64) -> GraphSpec {
    let mut out = s.clone();
    out.nodes.clear();
    let mut renamed = Vec::new();
    for n in &s.nodes {
        if matches!(n.op, Op::Activation { .. }) {
            let scale_id = format!("{}__scale", n.id);
            let unscale_id = format!("{}__unscale", n.id);
            out.nodes.push(NodeSpec {
                id: scale_id.clone(),
                op: Op::Scale { factor },
                inputs: n.inputs.clone(),
                head: n.head,
            });
            let mut act = n.clone();
            act.inputs = vec![scale_id];
            out.nodes.push(act);
            out.nodes.push(NodeSpec {
                id: unscale_id.clone(),
                op: Op::Scale { factor: 1.0 / factor },
                inputs: vec![n.id.clone()],
                head: n.head,
            });
            renamed.push((n.id.clone(), unscale_id));
        } else {
            out.nodes.push(n.clone());
        }
    }
    for node in &mut out.nodes {
        if node.id.ends_with("__unscale") {
            continue;
        }
        for input in &mut node.inputs {
            if let Some((_, to)) = renamed.iter().find(|(from, _)| from == input) {
                *input = to.clone();
            }
        }
    }
    out
}

pub const GRAPH_FIXTURES: [&str; 3] = ["conv_bn_silu.json", "repvgg_block.json", "pan_concat.json"];

pub fn path(name: &str) -> String {
    fixture(name).to_string_lossy().into_owned()
}

/// Runs the CLI in-process; returns exit code, stdout bytes and stderr text.
pub fn invoke(args: &[String]) -> (i32, Vec<u8>, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run(std::iter::once("archscreen".to_string()).chain(args.iter().cloned()), &mut out, &mut err);
    (code, out, String::from_utf8(err).unwrap())
}

pub fn args(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

pub fn golden_cases() -> Vec<(&'static str, Vec<String>)> {
    let bench20 = path("bench20.csv");
    let mixed = path("bench_mixed.csv");
    let graphs = ["conv_bn_silu.json", "repvgg_block.json", "pan_concat.json"].map(path);
    vec![
        ("ingest.csv", args(&["ingest", "--data", &mixed])),
        ("ingest.json", args(&["ingest", "--data", &mixed, "--format", "json"])),
        ("ingest.md", args(&["ingest", "--data", &bench20, "--format", "markdown"])),
        ("pareto_nano_all.csv", args(&["pareto", "--data", &bench20, "--hw", "nano", "--fronts", "all"])),
        ("pareto_raspi4.md", args(&["pareto", "--data", &bench20, "--hw", "raspi4", "--fronts", "2", "--format", "markdown"])),
        ("pareto_vim3.json", args(&["pareto", "--data", &mixed, "--dataset", "VOC", "--hw", "vim3", "--format", "json"])),
        ("select_voc_nano.csv", args(&["select", "--data", &bench20, "--dataset", "VOC", "--hw", "nano", "--max-latency-ms", "100"])),
        ("select_table.md", args(&["select", "--data", &mixed, "--hw", "nano,vim3", "--max-latency-ms", "30,100", "--format", "markdown"])),
        ("select_table.json", args(&["select", "--data", &mixed, "--hw", "nano", "--max-latency-ms", "25,60", "--format", "json"])),
        ("rank_preact.csv", args(&["rank", "--data", &bench20, "--predictor", "zc_nwot_preact", "--hw", "nano", "--fronts", "5"])),
        ("rank_all.md", args(&["rank", "--data", &bench20, "--hw", "nano", "--format", "markdown"])),
        (
            "rank_macs_latency.json",
            args(&[
                "rank", "--data", &bench20, "--hw", "vim3", "--predictor", "zc_nwot", "--latency-source", "proxy:macs",
                "--resolution-agnostic", "--fronts", "3", "--format", "json",
            ]),
        ),
        (
            "score.csv",
            args(&[
                "score", "--graph", &graphs[0], "--graph", &graphs[1], "--graph", &graphs[2], "--batch-size", "8",
                "--batches", "2", "--seed", "3", "--baselines",
            ]),
        ),
        ("score_preact_nohead.md", args(&["score", "--graph", &graphs[2], "--mode", "pre", "--scope", "no-head", "--format", "markdown"])),
        (
            "profile.csv",
            args(&[
                "profile", "--graph", &graphs[0], "--graph", &graphs[1], "--reps", "20", "--warmup", "2", "--host", "ci",
                "--virtual-clock-us", "250",
            ]),
        ),
    ]
}
