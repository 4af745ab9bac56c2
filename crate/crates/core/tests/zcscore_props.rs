mod support;

use archscreen::netgraph::{GraphSpec, NetGraph, Tensor};
use archscreen::zcscore::{
    layers_in_scope, noise_batches, nwot_kernel, nwot_multibatch, nwot_score, CodeMode, Scope,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use support::{fixture, jacobi_eigenvalues, naive_kernel, relu_only, sign_bits, with_scales};

const FIXTURES: [&str; 3] = ["conv_bn_silu.json", "repvgg_block.json", "pan_concat.json"];
const MODES: [CodeMode; 2] = [CodeMode::PostActivation, CodeMode::PreActivation];

fn spec(name: &str) -> GraphSpec {
    GraphSpec::from_json(&std::fs::read_to_string(fixture(name)).unwrap()).unwrap()
}

fn load(name: &str) -> NetGraph {
    NetGraph::from_spec(&spec(name)).unwrap()
}

fn batch_for(g: &NetGraph, n: usize, seed: u64) -> Tensor {
    let [_, c, h, w] = g.input_shape();
    Tensor::uniform_noise([n, c, h, w], seed)
}

#[test]
fn kernel_matches_naive_codes_and_is_psd() {
    let mut evaluations = 0;
    for seed in 0..17u64 {
        for name in FIXTURES {
            for mode in MODES {
                let g = load(name);
                let batch = batch_for(&g, 8, seed);
                let k = nwot_kernel(&g, &batch, mode, Scope::AllLayers).unwrap();
                let features = g.forward(&batch).unwrap();
                let mut codes = vec![Vec::new(); 8];
                for layer in layers_in_scope(&g, Scope::AllLayers) {
                    let t = match mode {
                        CodeMode::PostActivation => features.post(layer),
                        CodeMode::PreActivation => features.pre(layer),
                    };
                    for (code, bits) in codes.iter_mut().zip(sign_bits(t)) {
                        code.extend(bits);
                    }
                }
                assert_eq!(k.entries(), naive_kernel(&codes).as_slice(), "{name} {seed}");
                let n_a = k.code_length() as f64;
                let min = jacobi_eigenvalues(k.entries().to_vec(), 8).into_iter().fold(f64::INFINITY, f64::min);
                assert!(min >= -1e-8 * n_a, "{name} seed {seed}: {min}");
                evaluations += 1;
            }
        }
    }
    assert!(evaluations >= 100);
}

#[test]
fn identical_inputs_give_sentinel() {
    for name in FIXTURES {
        let g = load(name);
        let one = batch_for(&g, 1, 3);
        let mut data = one.data.clone();
        data.extend_from_slice(&one.data);
        data.extend_from_slice(&one.data);
        let batch = Tensor::from_vec([3, one.shape[1], one.shape[2], one.shape[3]], data).unwrap();
        let s = nwot_score(&g, &batch, CodeMode::PostActivation, Scope::AllLayers).unwrap();
        assert_eq!(s.value, f64::NEG_INFINITY, "{name}");
        assert!(s.is_sentinel());
    }
}

#[test]
fn no_head_scope_equals_all_layers_without_heads() {
    for name in ["conv_bn_silu.json", "repvgg_block.json"] {
        let g = load(name);
        assert!(g.nodes().iter().all(|n| !n.head));
        for mode in MODES {
            let batch = batch_for(&g, 16, 7);
            let all = nwot_score(&g, &batch, mode, Scope::AllLayers).unwrap();
            let no_head = nwot_score(&g, &batch, mode, Scope::NoHead).unwrap();
            assert_eq!(all.value.to_bits(), no_head.value.to_bits(), "{name}");
        }
    }
    let g = load("pan_concat.json");
    let batch = batch_for(&g, 16, 7);
    let all = nwot_kernel(&g, &batch, CodeMode::PostActivation, Scope::AllLayers).unwrap();
    let no_head = nwot_kernel(&g, &batch, CodeMode::PostActivation, Scope::NoHead).unwrap();
    assert!(no_head.code_length() < all.code_length());
}

#[test]
fn multibatch_is_mean_of_single_batches() {
    let g = load("pan_concat.json");
    let batches = noise_batches(&g, 16, 5, 42);
    let multi = nwot_multibatch(&g, &batches, CodeMode::PostActivation, Scope::AllLayers).unwrap();
    let singles: Vec<f64> = batches
        .iter()
        .map(|b| nwot_score(&g, b, CodeMode::PostActivation, Scope::AllLayers).unwrap().value)
        .collect();
    let mean = singles.iter().sum::<f64>() / singles.len() as f64;
    assert_eq!(multi.value, mean);
}

#[test]
fn norm_layers_separate_pre_and_post_codes() {
    let g = load("conv_bn_silu.json");
    let batch = batch_for(&g, 8, 1);
    let post = nwot_kernel(&g, &batch, CodeMode::PostActivation, Scope::AllLayers).unwrap();
    let pre = nwot_kernel(&g, &batch, CodeMode::PreActivation, Scope::AllLayers).unwrap();
    assert_eq!(post.code_length(), pre.code_length());
    assert_ne!(post, pre);
}

#[test]
fn pre_codes_read_the_norm_input() {
    let g = load("conv_bn_silu.json");
    let batch = batch_for(&g, 4, 2);
    let f = g.forward(&batch).unwrap();
    let act = g.node_index("a1").unwrap();
    let conv = g.node_index("c1").unwrap();
    assert_eq!(f.pre(act), f.post(conv));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn score_ignores_batch_order(seed in 0u64..1000, fixture_idx in 0usize..3, perm_seed in any::<u64>()) {
        let g = load(FIXTURES[fixture_idx]);
        let batch = batch_for(&g, 12, seed);
        let mut order: Vec<usize> = (0..12).collect();
        order.shuffle(&mut support::rng(perm_seed));
        let permuted = batch.permute_batch(&order);
        for mode in MODES {
            let a = nwot_score(&g, &batch, mode, Scope::AllLayers).unwrap().value;
            let b = nwot_score(&g, &permuted, mode, Scope::AllLayers).unwrap().value;
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn score_ignores_positive_scaling(seed in 0u64..1000, fixture_idx in 0usize..3, exp in -20i32..20) {
        let base = relu_only(spec(FIXTURES[fixture_idx]));
        let plain = NetGraph::from_spec(&with_scales(&base, 1.0)).unwrap();
        let scaled = NetGraph::from_spec(&with_scales(&base, 2f64.powi(exp))).unwrap();
        let batch = batch_for(&plain, 8, seed);
        for mode in MODES {
            let a = nwot_score(&plain, &batch, mode, Scope::AllLayers).unwrap().value;
            let b = nwot_score(&scaled, &batch, mode, Scope::AllLayers).unwrap().value;
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn codes_ignore_scaling_of_recorded_features(seed in 0u64..1000, c in 1e-3f64..1e3) {
        let g = load("pan_concat.json");
        let batch = batch_for(&g, 4, seed);
        let features = g.forward(&batch).unwrap();
        for layer in layers_in_scope(&g, Scope::AllLayers) {
            let t = features.post(layer);
            let mut scaled = t.clone();
            scaled.data.iter_mut().for_each(|v| *v *= c);
            prop_assert_eq!(sign_bits(t), sign_bits(&scaled));
        }
    }
}
