use fusionvote::data::{decode_ppm, encode_ppm, Image};
use fusionvote::explain::{cam_from_activations, grad_cam, AttentionMap, DEFAULT_LAYER};
use fusionvote::model::{Flavor, FusionModel, ModelConfig};
use fusionvote::nn::{global_average_pool, Conv2d, Dense, Forward, Mode, ParamBuilder, ParamStore};
use fusionvote::tensor::{argmax, Activation, Tensor};
use fusionvote::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small(flavor: Flavor) -> ModelConfig {
    ModelConfig {
        num_classes: 4,
        width_factor: 1.0 / 16.0,
        ..ModelConfig::default()
    }
    .with_flavor(flavor)
}

fn input(side: usize, seed: usize) -> Tensor<f32> {
    Tensor::from_fn(vec![3, side, side], |i| (((i + seed) * 7919) % 256) as f32 / 255.0)
}

#[test]
fn single_channel_with_unit_gradient_is_the_rectified_map() {
    let acts = Tensor::<f64>::new(vec![1, 2, 3], vec![1.0, -2.0, 4.0, 0.0, 2.0, -1.0]).unwrap();
    let grads = Tensor::<f64>::ones(vec![1, 2, 3]);
    let map = cam_from_activations(&acts, &grads, "x", 0).unwrap();
    assert_eq!(map.values, vec![0.25, 0.0, 1.0, 0.0, 0.5, 0.0]);
    assert!(!map.all_zero);
    assert_eq!((map.height, map.width), (2, 3));
}

#[test]
fn negative_gradients_annihilate_the_map() {
    let acts = Tensor::<f64>::new(vec![2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 0.5, 0.5, 0.5, 0.5]).unwrap();
    let grads = Tensor::<f64>::full(vec![2, 2, 2], -0.3);
    let map = cam_from_activations(&acts, &grads, "x", 1).unwrap();
    assert!(map.all_zero);
    assert!(map.values.iter().all(|&v| v == 0.0));
}

#[test]
fn mismatched_shapes_are_rejected() {
    let a = Tensor::<f64>::ones(vec![1, 2, 2]);
    let g = Tensor::<f64>::ones(vec![1, 2, 3]);
    assert!(matches!(cam_from_activations(&a, &g, "x", 0), Err(Error::Shape { .. })));
}

#[test]
fn map_shapes_follow_layer_and_input() {
    for flavor in Flavor::ALL {
        let model = FusionModel::<f32>::new(small(flavor), 3).unwrap();
        for layer in ["backbone", "aspp", "se"] {
            let map = grad_cam(&model, &input(32, 1), 2, layer).unwrap();
            // Two stride-2 stages: 32 -> 8.
            assert_eq!((map.height, map.width), (8, 8), "{flavor} {layer}");
            let (h, w, up) = map.upsampled.as_ref().unwrap();
            assert_eq!((*h, *w, up.len()), (32, 32, 32 * 32));
            assert!(map.values.iter().all(|v| (0.0..=1.0).contains(v)));
            if !map.all_zero {
                assert_eq!(map.values.iter().cloned().fold(0.0f32, f32::max), 1.0);
            }
            assert_eq!(map.target_layer, layer);
            assert_eq!(map.target_class, 2);
        }
    }
}

#[test]
fn default_layer_is_the_se_output() {
    assert_eq!(DEFAULT_LAYER, "se");
    let model = FusionModel::<f32>::new(small(Flavor::Residual), 3).unwrap();
    assert!(grad_cam(&model, &input(32, 2), 0, DEFAULT_LAYER).is_ok());
}

#[test]
fn unknown_layers_list_the_valid_ones() {
    let model = FusionModel::<f32>::new(small(Flavor::Plain), 3).unwrap();
    match grad_cam(&model, &input(32, 1), 0, "head") {
        Err(Error::Config(msg)) => {
            for name in ["backbone", "aspp", "se"] {
                assert!(msg.contains(name), "{msg}");
            }
        }
        other => panic!("expected a configuration error, got {other:?}"),
    }
    assert!(matches!(
        grad_cam(&model, &input(32, 1), 4, "se"),
        Err(Error::Contract(_))
    ));
}

#[test]
fn grad_cam_is_deterministic() {
    let model = FusionModel::<f32>::new(small(Flavor::Dense), 8).unwrap();
    let a = grad_cam(&model, &input(32, 5), 1, "se").unwrap();
    let b = grad_cam(&model, &input(32, 5), 1, "se").unwrap();
    let bits = |m: &AttentionMap| m.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a, b);
}

#[test]
fn frozen_models_still_produce_maps() {
    let mut model = FusionModel::<f32>::new(small(Flavor::Plain), 3).unwrap();
    model.freeze_extractors(true);
    let map = grad_cam(&model, &input(32, 1), 0, "backbone").unwrap();
    assert!(!map.all_zero);
}

#[test]
fn upsampling_tiles_cells() {
    let map = cam_from_activations(
        &Tensor::<f64>::new(vec![1, 2, 2], vec![1.0, 0.5, 0.25, 0.0]).unwrap(),
        &Tensor::<f64>::ones(vec![1, 2, 2]),
        "x",
        0,
    )
    .unwrap();
    assert_eq!(
        map.upsample(4, 4),
        vec![1.0, 1.0, 0.5, 0.5, 1.0, 1.0, 0.5, 0.5, 0.25, 0.25, 0.0, 0.0, 0.25, 0.25, 0.0, 0.0]
    );
}

#[test]
fn pgm_and_overlay_outputs() {
    let mut map = cam_from_activations(
        &Tensor::<f64>::new(vec![1, 1, 2], vec![1.0, 0.0]).unwrap(),
        &Tensor::<f64>::ones(vec![1, 1, 2]),
        "x",
        0,
    )
    .unwrap();
    assert_eq!(map.to_pgm().unwrap(), b"P5\n2 1\n255\n\xff\x00".to_vec());

    let img = Image::raw(1, 2, 3, vec![10, 20, 30, 40, 50, 60]).unwrap();
    let over = map.overlay(&img).unwrap();
    assert_eq!((over.height, over.width), (1, 4));
    let px = over.to_u8();
    assert_eq!(&px[..6], &[10, 20, 30, 40, 50, 60]);
    // (10 + 255) / 2 rounded, then halves of the other channels.
    assert_eq!(&px[6..], &[133, 10, 15, 20, 25, 30]);
    assert_eq!(decode_ppm(&encode_ppm(&over).unwrap()).unwrap(), over);

    map.upsampled = Some((2, 4, map.upsample(2, 4)));
    assert!(matches!(map.overlay(&img), Err(Error::Dimension(_))));
}

proptest! {
    #[test]
    fn maps_lie_in_the_unit_interval(
        acts in prop::collection::vec(-2.0f64..2.0, 2 * 3 * 3),
        grads in prop::collection::vec(-1.0f64..1.0, 2 * 3 * 3),
    ) {
        let a = Tensor::new(vec![2, 3, 3], acts).unwrap();
        let g = Tensor::new(vec![2, 3, 3], grads).unwrap();
        let map = cam_from_activations(&a, &g, "x", 0).unwrap();
        prop_assert!(map.values.iter().all(|v| (0.0..=1.0).contains(v)));
        if map.all_zero {
            prop_assert!(map.values.iter().all(|&v| v == 0.0));
        } else {
            prop_assert!(map.values.contains(&1.0));
        }
    }
}

/// Bias-free relu network: conv(relu) -> tap -> conv(relu) -> GAP -> dense.
/// Its logits are positively homogeneous in the input and its relu pattern
/// does not depend on the input scale.
fn piecewise_linear_net(seed: u64) -> (Conv2d, Conv2d, Dense, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pb = ParamBuilder::new(&mut store, &mut rng);
    let c1 = Conv2d::same(&mut pb.sub("c1"), 3, 4, 3, 1, Activation::Relu).unwrap();
    let c2 = Conv2d::same(&mut pb.sub("c2"), 4, 4, 3, 1, Activation::Relu).unwrap();
    let head = Dense::new(&mut pb.sub("head"), 4, 3, Activation::Identity, None).unwrap();
    for id in [c1.bias, c2.bias, head.b] {
        store.get_mut(id).data_mut().fill(0.0);
    }
    (c1, c2, head, store)
}

fn restricted_cam(x: &Tensor<f64>, class: usize, seed: u64) -> AttentionMap {
    let (c1, c2, head, store) = piecewise_linear_net(seed);
    let mut ctx = Forward::new(&store, Mode::Eval);
    let xv = ctx.input(x.clone());
    let tap = c1.forward(&mut ctx, xv).unwrap();
    let y = c2.forward(&mut ctx, tap).unwrap();
    let pooled = global_average_pool(&mut ctx, y).unwrap();
    let logits = head.forward(&mut ctx, pooled).unwrap();
    let sel = ctx.input(Tensor::from_fn(vec![1, 3], |i| if i == class { 1.0 } else { 0.0 }));
    let picked = ctx.graph.mul(logits, sel).unwrap();
    let score = ctx.graph.sum(picked);
    ctx.backward(score).unwrap();
    let shape = ctx.graph.shape(tap)[1..].to_vec();
    let acts = ctx.graph.value(tap).clone().reshape(shape.clone()).unwrap();
    let grads = Tensor::new(shape, ctx.graph.grad(tap).unwrap().to_vec()).unwrap();
    cam_from_activations(&acts, &grads, "c1", class).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn input_scale_keeps_the_peak_cell_in_piecewise_linear_nets(
        seed in 0u64..1000,
        class in 0usize..3,
        scale in 0.1f64..10.0,
    ) {
        let x = Tensor::<f64>::from_fn(vec![1, 3, 6, 6], |i| (((i as u64 + seed) * 2654435761) % 1000) as f64 / 1000.0);
        let base = restricted_cam(&x, class, seed);
        prop_assume!(!base.all_zero);
        let scaled = restricted_cam(&x.map(|v| v * scale), class, seed);
        prop_assert_eq!(argmax(&base.values), argmax(&scaled.values));
        for (a, b) in base.values.iter().zip(&scaled.values) {
            prop_assert!((a - b).abs() < 1e-5);
        }
    }
}
