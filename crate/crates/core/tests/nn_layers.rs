mod common;

use common::gradcheck::{check_store, random_tensor};
use fusionvote::nn::{
    global_average_pool, Aspp, Attention, BatchNorm, Dense, Forward, Mode, ParamBuilder,
    ParamStore, PatchEmbed, RegularizerSpec, SeBlock, TransformerBlock, ASPP_DILATIONS,
};
use fusionvote::tensor::{Activation, Tensor};
use fusionvote::{Error, Result};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn build<L>(seed: u64, f: impl FnOnce(&mut ParamBuilder<'_, f64>) -> Result<L>) -> (L, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layer = f(&mut ParamBuilder::new(&mut store, &mut rng)).unwrap();
    (layer, store)
}

fn set(store: &mut ParamStore<f64>, id: fusionvote::nn::ParamId, data: &[f64]) {
    store.get_mut(id).data_mut().copy_from_slice(data);
}

fn fill(store: &mut ParamStore<f64>, id: fusionvote::nn::ParamId, v: f64) {
    store.get_mut(id).data_mut().fill(v);
}

// ---- dense --------------------------------------------------------------

#[test]
fn dense_examples() {
    let (layer, mut store) = build(1, |pb| Dense::new(pb, 2, 2, Activation::Identity, None));
    set(&mut store, layer.w, &[1., 0., 0., 1.]);
    let x = random_tensor(&[3, 2], 5, 1.0);
    let mut ctx = Forward::new(&store, Mode::Eval);
    let xv = ctx.input(x.clone());
    let y = layer.forward(&mut ctx, xv).unwrap();
    assert_eq!(ctx.graph.value(y).data(), x.data());

    fill(&mut store, layer.w, 0.0);
    set(&mut store, layer.b, &[1., 2.]);
    let mut ctx = Forward::new(&store, Mode::Eval);
    let xv = ctx.input(x);
    let y = layer.forward(&mut ctx, xv).unwrap();
    assert_eq!(ctx.graph.value(y).data(), &[1., 2., 1., 2., 1., 2.]);

    let (layer, mut store) = build(1, |pb| Dense::new(pb, 2, 2, Activation::Relu, None));
    set(&mut store, layer.w, &[1., 2., 3., 4.]);
    let mut ctx = Forward::new(&store, Mode::Eval);
    let xv = ctx.input(Tensor::ones(vec![1, 2]));
    let y = layer.forward(&mut ctx, xv).unwrap();
    assert_eq!(ctx.graph.value(y).data(), &[4., 6.]);

    let xv = ctx.input(Tensor::ones(vec![1, 3]));
    assert!(matches!(layer.forward(&mut ctx, xv), Err(Error::Dimension(_))));
}

#[test]
fn dense_penalty_terms() {
    let reg = RegularizerSpec::default();
    assert_eq!((reg.l2_kernel, reg.l2_activity, reg.l1_bias), (0.016, 0.006, 0.006));

    // single kernel weight 2, no bias or activity -> 0.016 * 4
    let only_kernel = RegularizerSpec { l2_activity: 0.0, ..reg };
    let (layer, mut store) = build(1, |pb| Dense::new(pb, 1, 1, Activation::Identity, Some(only_kernel)));
    set(&mut store, layer.w, &[2.0]);
    let mut ctx = Forward::new(&store, Mode::Eval);
    let p = layer.penalty(&mut ctx).unwrap().unwrap();
    assert!((ctx.graph.value(p).data()[0] - 0.064).abs() < 1e-12);

    // bias [-3] -> 0.006 * 3
    fill(&mut store, layer.w, 0.0);
    set(&mut store, layer.b, &[-3.0]);
    let mut ctx = Forward::new(&store, Mode::Eval);
    let p = layer.penalty(&mut ctx).unwrap().unwrap();
    assert!((ctx.graph.value(p).data()[0] - 0.018).abs() < 1e-12);

    // activity: mean over the batch of Σa²
    let (layer, mut store) = build(1, |pb| Dense::new(pb, 1, 2, Activation::Identity, Some(reg)));
    set(&mut store, layer.w, &[1.0, 1.0]);
    let mut ctx = Forward::new(&store, Mode::Train);
    let x = ctx.input(Tensor::from_f64(vec![2, 1], &[1.0, 3.0]).unwrap());
    layer.forward(&mut ctx, x).unwrap();
    let p = layer.penalty(&mut ctx).unwrap().unwrap();
    let expected = 0.016 * 2.0 + 0.006 * (2.0 + 18.0) / 2.0;
    assert!((ctx.graph.value(p).data()[0] - expected).abs() < 1e-12);
}

#[test]
fn activity_penalty_needs_a_forward_pass() {
    let (layer, store) = build(1, |pb| Dense::new(pb, 2, 2, Activation::Relu, Some(RegularizerSpec::default())));
    let mut ctx = Forward::new(&store, Mode::Train);
    assert!(matches!(layer.penalty(&mut ctx), Err(Error::State(_))));
}

#[test]
fn zero_activity_coefficient_adds_nothing() {
    let reg = RegularizerSpec::none();
    let (layer, store) = build(3, |pb| Dense::new(pb, 3, 4, Activation::Relu, Some(reg)));
    let mut ctx = Forward::new(&store, Mode::Train);
    let x = ctx.input(random_tensor(&[5, 3], 9, 3.0));
    layer.forward(&mut ctx, x).unwrap();
    let p = layer.penalty(&mut ctx).unwrap().unwrap();
    assert_eq!(ctx.graph.value(p).data()[0], 0.0);
}

// ---- batch norm ---------------------------------------------------------

#[test]
fn batchnorm_examples() {
    let (bn, mut store) = build(1, |pb| BatchNorm::new(pb, 1));
    // mean 0, biased variance 1
    let x = Tensor::from_f64(vec![4, 1], &[1., -1., 1., -1.]).unwrap();
    let mut ctx = Forward::new(&store, Mode::Train);
    let xv = ctx.input(x.clone());
    let y = bn.forward(&mut ctx, xv).unwrap();
    let scale = 1.0 / 1.001f64.sqrt();
    for (o, i) in ctx.graph.value(y).data().iter().zip(x.data()) {
        assert!((o - i * scale).abs() < 1e-12);
    }

    fill(&mut store, bn.gamma, 0.0);
    set(&mut store, bn.beta, &[5.0]);
    let mut ctx = Forward::new(&store, Mode::Train);
    let xv = ctx.input(random_tensor(&[3, 1], 4, 2.0));
    let y = bn.forward(&mut ctx, xv).unwrap();
    assert!(ctx.graph.value(y).data().iter().all(|&v| v == 5.0));

    let (bn, store) = build(1, |pb| BatchNorm::new(pb, 2));
    let mut ctx = Forward::new(&store, Mode::Train);
    let xv = ctx.input(Tensor::full(vec![3, 2, 2, 2], 0.7));
    let y = bn.forward(&mut ctx, xv).unwrap();
    assert!(ctx.graph.value(y).data().iter().all(|v| v.abs() < 1e-9));
}

#[test]
fn batchnorm_training_needs_two_samples() {
    let (bn, store) = build(1, |pb| BatchNorm::new(pb, 3));
    let mut ctx = Forward::new(&store, Mode::Train);
    let xv = ctx.input(Tensor::ones(vec![1, 3]));
    assert!(matches!(bn.forward(&mut ctx, xv), Err(Error::Contract(_))));
    let mut ctx = Forward::new(&store, Mode::Eval);
    let xv = ctx.input(Tensor::ones(vec![1, 3]));
    assert!(bn.forward(&mut ctx, xv).is_ok());
}

#[test]
fn batchnorm_running_statistics() {
    let (bn, mut store) = build(1, |pb| BatchNorm::new(pb, 1));
    assert_eq!(bn.momentum, 0.99);
    assert_eq!(bn.epsilon, 0.001);
    let x = Tensor::from_f64(vec![2, 1], &[1.0, 3.0]).unwrap();
    let mut ctx = Forward::new(&store, Mode::Train);
    let xv = ctx.input(x);
    bn.forward(&mut ctx, xv).unwrap();
    let updates = ctx.into_bn_updates();
    for u in &updates {
        u.apply(&mut store);
    }
    // batch mean 2, variance 1
    assert!((store.get(bn.running_mean).data()[0] - 0.02).abs() < 1e-12);
    assert!((store.get(bn.running_var).data()[0] - 1.0).abs() < 1e-12);

    // inference uses the running statistics
    let mut ctx = Forward::new(&store, Mode::Eval);
    let xv = ctx.input(Tensor::from_f64(vec![1, 1], &[0.02]).unwrap());
    let y = bn.forward(&mut ctx, xv).unwrap();
    assert!(ctx.graph.value(y).data()[0].abs() < 1e-12);
}

#[test]
fn batchnorm_gradcheck() {
    let (bn, mut store) = build(1, |pb| BatchNorm::new(pb, 2));
    set(&mut store, bn.gamma, &[1.3, -0.7]);
    set(&mut store, bn.beta, &[0.2, 0.1]);
    let x = random_tensor(&[3, 2, 2, 2], 8, 1.0);
    let w = random_tensor(&[3, 2, 2, 2], 9, 1.0);
    let report = check_store(&store, Mode::Train, |ctx| {
        let xv = ctx.input(x.clone());
        let y = bn.forward(ctx, xv).unwrap();
        let wv = ctx.input(w.clone());
        let p = ctx.graph.mul(y, wv).unwrap();
        ctx.graph.sum(p)
    });
    assert!(report.passed(), "{report:?}");
}

// ---- global average pooling -------------------------------------------

fn gap_oracle(x: &Tensor<f64>) -> Vec<f64> {
    let s = x.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut out = vec![0.0; c];
    for (ci, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for i in 0..h {
            for j in 0..w {
                acc += x.data()[(ci * h + i) * w + j];
            }
        }
        *o = acc / (h * w) as f64;
    }
    out
}

#[test]
fn gap_examples() {
    let store = ParamStore::<f64>::new();
    let mut ctx = Forward::new(&store, Mode::Eval);
    let x = ctx.input(Tensor::full(vec![2, 3, 3], 4.5));
    let y = global_average_pool(&mut ctx, x).unwrap();
    assert_eq!(ctx.graph.value(y).data(), &[4.5, 4.5]);

    let x = ctx.input(Tensor::from_f64(vec![1, 2, 2], &[1., 2., 3., 4.]).unwrap());
    let y = global_average_pool(&mut ctx, x).unwrap();
    assert_eq!(ctx.graph.value(y).data(), &[2.5]);

    let x = ctx.input(Tensor::zeros(vec![3, 2, 5]));
    let y = global_average_pool(&mut ctx, x).unwrap();
    assert_eq!(ctx.graph.value(y).data(), &[0.0; 3]);
}

proptest! {
    #[test]
    fn gap_matches_double_loop(c in 1usize..4, h in 1usize..7, w in 1usize..7, seed in 0u64..1000) {
        let x = random_tensor(&[c, h, w], seed, 5.0);
        let store = ParamStore::<f32>::new();
        let mut ctx = Forward::new(&store, Mode::Eval);
        let xv = ctx.input(x.cast::<f32>());
        let y = global_average_pool(&mut ctx, xv).unwrap();
        let expected = gap_oracle(&x.cast::<f32>().cast::<f64>());
        for (a, b) in ctx.graph.value(y).data().iter().zip(&expected) {
            prop_assert!((*a as f64 - b).abs() <= 1e-6);
        }
    }
}

// ---- squeeze and excitation --------------------------------------------

#[test]
fn se_zero_weights_halve_the_input() {
    let (se, mut store) = build(1, |pb| SeBlock::new(pb, 4, 2));
    fill(&mut store, se.w1, 0.0);
    fill(&mut store, se.w2, 0.0);
    let f = random_tensor(&[4, 3, 3], 2, 3.0);
    let mut ctx = Forward::new(&store, Mode::Eval);
    let fv = ctx.input(f.clone());
    let out = se.forward(&mut ctx, fv).unwrap();
    assert_eq!(ctx.graph.value(out.gates).data(), &[0.5; 4]);
    for (o, i) in ctx.graph.value(out.output).data().iter().zip(f.data()) {
        assert!((o - 0.5 * i).abs() <= 1e-12);
    }
}

#[test]
fn se_zero_input_gives_zero_output() {
    let (se, store) = build(7, |pb| SeBlock::new(pb, 4, 4));
    let mut ctx = Forward::new(&store, Mode::Eval);
    let fv = ctx.input(Tensor::zeros(vec![2, 4, 3, 3]));
    let out = se.forward(&mut ctx, fv).unwrap();
    assert!(ctx.graph.value(out.output).data().iter().all(|&v| v == 0.0));
}

#[test]
fn se_gates_can_pass_or_block_channels() {
    // c = [1, 1]; hidden = relu(c · W1) = [2]; logits = [2·50, 2·-50]
    let (se, mut store) = build(1, |pb| SeBlock::new(pb, 2, 2));
    set(&mut store, se.w1, &[1.0, 1.0]);
    set(&mut store, se.w2, &[50.0, -50.0]);
    let f = Tensor::from_f64(vec![2, 1, 2], &[1.0, 1.0, 1.0, 1.0]).unwrap();
    let mut ctx = Forward::new(&store, Mode::Eval);
    let fv = ctx.input(f);
    let out = se.forward(&mut ctx, fv).unwrap();
    let v = ctx.graph.value(out.output).data();
    assert!((v[0] - 1.0).abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12);
    assert!(v[2].abs() < 1e-12 && v[3].abs() < 1e-12);
}

#[test]
fn se_rejects_bad_shapes() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert!(SeBlock::new(&mut ParamBuilder::new(&mut store, &mut rng), 6, 4).is_err());
    let (se, store) = build(1, |pb| SeBlock::new(pb, 4, 2));
    let mut ctx = Forward::new(&store, Mode::Eval);
    let fv = ctx.input(Tensor::zeros(vec![3, 2, 2]));
    assert!(matches!(se.forward(&mut ctx, fv), Err(Error::Shape { .. })));
}

proptest! {
    #[test]
    fn se_output_is_gated_copy_of_input(seed in 0u64..500) {
        let (se, store) = build(seed, |pb| SeBlock::new(pb, 4, 2));
        let f = random_tensor(&[2, 4, 3, 3], seed + 17, 4.0).cast::<f32>();
        let store = store.cast::<f32>();
        let mut ctx = Forward::new(&store, Mode::Eval);
        let fv = ctx.input(f.clone());
        let out = se.forward(&mut ctx, fv).unwrap();
        let gates = ctx.graph.value(out.gates).data().to_vec();
        let y = ctx.graph.value(out.output).data();
        for b in 0..2 {
            for c in 0..4 {
                let e = gates[b * 4 + c];
                prop_assert!(e > 0.0 && e < 1.0);
                for k in 0..9 {
                    let i = (b * 4 + c) * 9 + k;
                    prop_assert_eq!(y[i], f.data()[i] * e);
                    prop_assert!(y[i].abs() <= f.data()[i].abs());
                }
            }
        }
    }
}

#[test]
fn se_gradcheck() {
    let (se, store) = build(11, |pb| SeBlock::new(pb, 4, 2));
    let f = random_tensor(&[2, 4, 3, 3], 12, 1.0).map(|v| v + 0.3);
    let w = random_tensor(&[2, 4, 3, 3], 13, 1.0);
    let report = check_store(&store, Mode::Eval, |ctx| {
        let fv = ctx.input(f.clone());
        let y = se.forward(ctx, fv).unwrap().output;
        let wv = ctx.input(w.clone());
        let p = ctx.graph.mul(y, wv).unwrap();
        ctx.graph.sum(p)
    });
    assert!(report.passed(), "{report:?}");
}

// ---- ASPP ---------------------------------------------------------------

#[test]
fn aspp_branches_preserve_spatial_shape() {
    let (aspp, store) = build(1, |pb| Aspp::new(pb, 3, 2, 4));
    assert_eq!(ASPP_DILATIONS, [2, 3, 5, 7]);
    let mut ctx = Forward::new(&store, Mode::Eval);
    let x = ctx.input(random_tensor(&[2, 3, 8, 8], 1, 1.0));
    for b in aspp.branch_forward(&mut ctx, x).unwrap() {
        assert_eq!(ctx.graph.shape(b), &[2, 2, 8, 8]);
    }
    let y = aspp.forward(&mut ctx, x).unwrap();
    assert_eq!(ctx.graph.shape(y), &[2, 4, 8, 8]);
}

#[test]
fn aspp_zero_weights_give_zeros() {
    let (aspp, mut store) = build(1, |pb| Aspp::new(pb, 2, 2, 3));
    for b in &aspp.branches {
        fill(&mut store, b.weight, 0.0);
    }
    let mut ctx = Forward::new(&store, Mode::Eval);
    let x = ctx.input(random_tensor(&[2, 8, 8], 5, 1.0));
    let y = aspp.forward(&mut ctx, x).unwrap();
    assert!(ctx.graph.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn aspp_centered_unit_tap_is_identity() {
    let (aspp, mut store) = build(1, |pb| Aspp::new(pb, 1, 1, 1));
    let branch = &aspp.branches[3];
    let mut k = vec![0.0; 9];
    k[4] = 1.0;
    set(&mut store, branch.weight, &k);
    let mut impulse = Tensor::<f64>::zeros(vec![1, 9, 9]);
    impulse.data_mut()[4 * 9 + 4] = 1.0;
    let mut ctx = Forward::new(&store, Mode::Eval);
    let x = ctx.input(impulse.clone());
    let outs = aspp.branch_forward(&mut ctx, x).unwrap();
    assert_eq!(ctx.graph.value(outs[3]).data(), impulse.data());
}

#[test]
fn aspp_gradcheck() {
    let (aspp, store) = build(21, |pb| Aspp::new(pb, 2, 2, 2));
    let x = random_tensor(&[1, 2, 5, 5], 22, 1.0);
    let w = random_tensor(&[1, 2, 5, 5], 23, 1.0);
    let report = check_store(&store, Mode::Eval, |ctx| {
        let xv = ctx.input(x.clone());
        let y = aspp.forward(ctx, xv).unwrap();
        let wv = ctx.input(w.clone());
        let p = ctx.graph.mul(y, wv).unwrap();
        ctx.graph.sum(p)
    });
    assert!(report.passed(), "{report:?}");
}

// ---- patch embedding -----------------------------------------------------

#[test]
fn patch_embed_token_counts() {
    let (pe, store) = build(1, |pb| PatchEmbed::new(pb, 32, 3, 4, 8));
    assert_eq!(pe.num_tokens(), 64);
    let mut ctx = Forward::new(&store, Mode::Eval);
    let x = ctx.input(random_tensor(&[2, 3, 32, 32], 1, 1.0));
    let y = pe.forward(&mut ctx, x).unwrap();
    assert_eq!(ctx.graph.shape(y), &[2, 64, 8]);

    let (pe, store) = build(1, |pb| PatchEmbed::new(pb, 448, 3, 16, 4));
    assert_eq!(pe.num_tokens(), 784);
    let mut ctx = Forward::new(&store, Mode::Eval);
    let x = ctx.input(Tensor::zeros(vec![3, 448, 448]));
    let y = pe.forward(&mut ctx, x).unwrap();
    assert_eq!(ctx.graph.shape(y), &[784, 4]);
}

#[test]
fn patch_embed_zero_weights() {
    let (pe, mut store) = build(1, |pb| PatchEmbed::new(pb, 8, 3, 4, 5));
    fill(&mut store, pe.projection, 0.0);
    fill(&mut store, pe.positional, 0.0);
    let mut ctx = Forward::new(&store, Mode::Eval);
    let x = ctx.input(random_tensor(&[3, 8, 8], 1, 1.0));
    let y = pe.forward(&mut ctx, x).unwrap();
    assert!(ctx.graph.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn patch_embed_projects_flattened_patches() {
    let (pe, mut store) = build(1, |pb| PatchEmbed::new(pb, 4, 1, 2, 1));
    set(&mut store, pe.projection, &[1.0, 10.0, 100.0, 1000.0]);
    fill(&mut store, pe.positional, 0.0);
    let img = Tensor::from_f64(vec![1, 4, 4], &(0..16).map(|v| v as f64).collect::<Vec<_>>()).unwrap();
    let mut ctx = Forward::new(&store, Mode::Eval);
    let x = ctx.input(img);
    let y = pe.forward(&mut ctx, x).unwrap();
    // top-left patch [0, 1, 4, 5] -> 0 + 10 + 400 + 5000
    assert_eq!(ctx.graph.value(y).data(), &[5410.0, 7632.0, 14298.0, 16520.0]);
}

#[test]
fn patch_embed_rejects_indivisible_sizes() {
    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    match PatchEmbed::new(&mut ParamBuilder::new(&mut store, &mut rng), 30, 3, 4, 8) {
        Err(Error::Dimension(msg)) => assert!(msg.contains("28 or 32"), "{msg}"),
        other => panic!("expected dimension error, got {:?}", other.map(|_| ())),
    }
}

// ---- attention -----------------------------------------------------------

#[test]
fn single_token_attention_is_value_then_output_projection() {
    let (attn, store) = build(3, |pb| Attention::new(pb, 4, 2));
    let tok = random_tensor(&[1, 4], 4, 1.0);
    let mut ctx = Forward::new(&store, Mode::Eval);
    let x = ctx.input(tok.clone());
    let out = attn.forward(&mut ctx, x).unwrap();
    assert!(ctx.graph.value(out.weights).data().iter().all(|&w| w == 1.0));
    let wv = ctx.param(attn.wv);
    let wo = ctx.param(attn.wo);
    let x = ctx.input(tok);
    let v = ctx.graph.matmul(x, wv).unwrap();
    let expected = ctx.graph.matmul(v, wo).unwrap();
    let got = ctx.graph.value(out.output).data();
    for (a, b) in got.iter().zip(ctx.graph.value(expected).data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn zero_queries_give_uniform_attention() {
    let (attn, mut store) = build(5, |pb| Attention::new(pb, 4, 1));
    fill(&mut store, attn.wq, 0.0);
    set(&mut store, attn.wo, Tensor::<f64>::eye(4).data());
    set(&mut store, attn.wv, Tensor::<f64>::eye(4).data());
    let toks = random_tensor(&[3, 4], 6, 1.0);
    let mut ctx = Forward::new(&store, Mode::Eval);
    let x = ctx.input(toks.clone());
    let out = attn.forward(&mut ctx, x).unwrap();
    for w in ctx.graph.value(out.weights).data() {
        assert!((w - 1.0 / 3.0).abs() < 1e-12);
    }
    let mean: Vec<f64> = (0..4)
        .map(|j| (0..3).map(|i| toks.data()[i * 4 + j]).sum::<f64>() / 3.0)
        .collect();
    for row in ctx.graph.value(out.output).data().chunks(4) {
        for (a, b) in row.iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_rejects_indivisible_heads() {
    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert!(matches!(
        Attention::new(&mut ParamBuilder::new(&mut store, &mut rng), 6, 4),
        Err(Error::Config(_))
    ));
}

proptest! {
    #[test]
    fn attention_is_permutation_equivariant(seed in 0u64..200, shift in 1usize..5) {
        let (attn, store) = build(seed, |pb| Attention::new(pb, 4, 2));
        let toks = random_tensor(&[5, 4], seed + 1, 1.0);
        let perm: Vec<usize> = (0..5).map(|i| (i + shift) % 5).collect();
        let permuted = Tensor::from_fn(vec![5, 4], |k| toks.data()[perm[k / 4] * 4 + k % 4]);
        let mut ctx = Forward::new(&store, Mode::Eval);
        let a = ctx.input(toks);
        let b = ctx.input(permuted);
        let ya = attn.forward(&mut ctx, a).unwrap();
        let yb = attn.forward(&mut ctx, b).unwrap();
        let va = ctx.graph.value(ya.output).data();
        let vb = ctx.graph.value(yb.output).data();
        for k in 0..20 {
            prop_assert!((vb[k] - va[perm[k / 4] * 4 + k % 4]).abs() < 1e-12);
        }
        for row in ctx.graph.value(ya.weights).data().chunks(5) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
    }
}

// ---- transformer block ---------------------------------------------------

#[test]
fn zero_weight_block_is_identity() {
    let (block, mut store) = build(1, |pb| TransformerBlock::new(pb, 4, 2));
    for id in store.ids().collect::<Vec<_>>() {
        fill(&mut store, id, 0.0);
    }
    let toks = random_tensor(&[2, 3, 4], 1, 1.0);
    let mut ctx = Forward::new(&store, Mode::Eval);
    let x = ctx.input(toks.clone());
    let y = block.forward(&mut ctx, x).unwrap();
    assert_eq!(ctx.graph.value(y).data(), toks.data());
}

#[test]
fn block_preserves_shape() {
    for (t, d, h) in [(1, 4, 1), (5, 8, 2), (7, 12, 3)] {
        let (block, store) = build(2, |pb| TransformerBlock::new(pb, d, h));
        let mut ctx = Forward::new(&store, Mode::Eval);
        let x = ctx.input(random_tensor(&[t, d], 3, 1.0));
        let y = block.forward(&mut ctx, x).unwrap();
        assert_eq!(ctx.graph.shape(y), &[t, d]);
    }
}

#[test]
fn block_gradcheck_two_tokens() {
    let (block, store) = build(4, |pb| TransformerBlock::new(pb, 4, 2));
    let toks = random_tensor(&[2, 4], 5, 1.0);
    let w = random_tensor(&[2, 4], 6, 1.0);
    let report = check_store(&store, Mode::Eval, |ctx| {
        let x = ctx.input(toks.clone());
        let y = block.forward(ctx, x).unwrap();
        let wv = ctx.input(w.clone());
        let p = ctx.graph.mul(y, wv).unwrap();
        ctx.graph.sum(p)
    });
    assert!(report.passed(), "{report:?}");
}
