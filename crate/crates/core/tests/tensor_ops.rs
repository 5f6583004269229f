mod common;

use common::gradcheck::{check_graph, random_tensor, TOLERANCE};
use fusionvote::tensor::{Activation, Conv2dSpec, Graph, Tensor};
use fusionvote::Error;
use proptest::prelude::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape.to_vec(), data).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn matmul_examples() {
    let mut g = Graph::<f64>::new();
    let a = g.leaf(t(&[2, 2], &[1., 2., 3., 4.]));
    let id = g.leaf(Tensor::eye(2));
    let out = g.matmul(id, a).unwrap();
    assert_eq!(g.value(out).data(), &[1., 2., 3., 4.]);

    let z = g.leaf(Tensor::zeros(vec![2, 3]));
    let out = g.matmul(id, z).unwrap();
    assert_eq!(g.value(out).shape(), &[2, 3]);
    assert!(g.value(out).data().iter().all(|&v| v == 0.0));

    let col = g.leaf(t(&[2, 1], &[5., 6.]));
    let out = g.matmul(a, col).unwrap();
    assert_eq!(g.value(out).data(), &[17., 39.]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut g = Graph::<f32>::new();
    let a = g.leaf(Tensor::zeros(vec![2, 3]));
    let b = g.leaf(Tensor::zeros(vec![2, 3]));
    match g.matmul(a, b) {
        Err(Error::Shape { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("expected shape error, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn conv2d_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::full(vec![1, 5, 5], 0.7));
    let k = g.leaf(Tensor::ones(vec![1, 1, 3, 3]));
    let y = g.conv2d(x, k, Conv2dSpec::default()).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 3, 3]);
    assert!(close(g.value(y).data(), &[9.0 * 0.7; 9], 1e-12));

    let img = random_tensor(&[2, 6, 7], 3, 1.0);
    let x = g.leaf(img.clone());
    let k = g.leaf(Tensor::from_f64(vec![2, 2, 1, 1], &[1., 0., 0., 1.]).unwrap());
    let y = g.conv2d(x, k, Conv2dSpec::default()).unwrap();
    assert_eq!(g.value(y), &img);

    let x = g.leaf(Tensor::ones(vec![1, 15, 15]));
    let k = g.leaf(Tensor::ones(vec![1, 1, 3, 3]));
    let y = g.conv2d(x, k, Conv2dSpec::new(1, 7, 0)).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 1, 1]);
    assert_eq!(g.value(y).data(), &[9.0]);
}

#[test]
fn conv2d_rejects_kernel_larger_than_padded_input() {
    let mut g = Graph::<f32>::new();
    let x = g.leaf(Tensor::ones(vec![1, 14, 14]));
    let k = g.leaf(Tensor::ones(vec![1, 1, 3, 3]));
    assert!(matches!(
        g.conv2d(x, k, Conv2dSpec::new(1, 7, 0)),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn conv2d_output_size_formula() {
    let mut g = Graph::<f32>::new();
    let x = g.leaf(Tensor::ones(vec![2, 3, 17, 12]));
    let k = g.leaf(Tensor::ones(vec![4, 3, 3, 3]));
    let y = g.conv2d(x, k, Conv2dSpec::new(2, 2, 1)).unwrap();
    // floor((17 + 2 - 5)/2) + 1 = 8, floor((12 + 2 - 5)/2) + 1 = 5
    assert_eq!(g.value(y).shape(), &[2, 4, 8, 5]);
}

/// A dilated kernel is the same as an undilated kernel of extent k_eff with
/// zeros between the taps.
#[test]
fn dilated_conv_equals_zero_inflated_kernel() {
    for &(dilation, padding, stride) in &[(2, 2, 1), (3, 3, 1), (5, 5, 2), (7, 7, 1)] {
        let img = random_tensor(&[2, 3, 16, 16], dilation as u64, 1.0);
        let kernel = random_tensor(&[4, 3, 3, 3], 100 + dilation as u64, 1.0);
        let k_eff = 3 + 2 * (dilation - 1);
        let mut inflated = Tensor::<f64>::zeros(vec![4, 3, k_eff, k_eff]);
        for o in 0..4 {
            for c in 0..3 {
                for i in 0..3 {
                    for j in 0..3 {
                        let src = ((o * 3 + c) * 3 + i) * 3 + j;
                        let dst = ((o * 3 + c) * k_eff + i * dilation) * k_eff + j * dilation;
                        inflated.data_mut()[dst] = kernel.data()[src];
                    }
                }
            }
        }
        let mut g = Graph::<f64>::new();
        let x = g.leaf(img);
        let kd = g.leaf(kernel);
        let ki = g.leaf(inflated);
        let a = g.conv2d(x, kd, Conv2dSpec::new(stride, dilation, padding)).unwrap();
        let b = g.conv2d(x, ki, Conv2dSpec::new(stride, 1, padding)).unwrap();
        assert_eq!(g.value(a), g.value(b), "dilation {dilation}");
    }
}

#[test]
fn softmax_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(t(&[3], &[0., 0., 0.]));
    let y = g.softmax(x).unwrap();
    assert!(close(g.value(y).data(), &[1. / 3.; 3], 1e-12));

    let x = g.leaf(t(&[2], &[0., 2f64.ln()]));
    let y = g.softmax(x).unwrap();
    assert!(close(g.value(y).data(), &[1. / 3., 2. / 3.], 1e-12));

    let mut g = Graph::<f32>::new();
    let x = g.leaf(Tensor::from_f64(vec![2], &[1000., 0.]).unwrap());
    let y = g.softmax(x).unwrap();
    let v = g.value(y).data();
    assert!(v.iter().all(|p| p.is_finite()));
    assert!((v[0] - 1.0).abs() < 1e-6 && v[1].abs() < 1e-6);

    let x = g.leaf(Tensor::from_f64(vec![2], &[f64::INFINITY, 0.]).unwrap());
    assert!(matches!(g.softmax(x), Err(Error::Numeric(_))));
}

#[test]
fn activation_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(t(&[3], &[-1., 0., 2.]));
    let y = g.activation(x, Activation::Relu);
    assert_eq!(g.value(y).data(), &[0., 0., 2.]);

    let x = g.leaf(t(&[2], &[0., 3f64.ln()]));
    let y = g.activation(x, Activation::Sigmoid);
    assert!(close(g.value(y).data(), &[0.5, 0.75], 1e-12));

    assert!(matches!("tanh".parse::<Activation>(), Err(Error::Config(_))));
    assert_eq!("relu".parse::<Activation>().unwrap(), Activation::Relu);
}

#[test]
fn backward_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(random_tensor(&[2, 3], 1, 1.0).with_requires_grad(true));
    let loss = g.sum(x);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);

    let mut g = Graph::<f64>::new();
    let x = g.leaf(t(&[2], &[1., -2.]).with_requires_grad(true));
    let sq = g.square(x);
    let loss = g.sum(sq);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2., -4.]);

    // softmax + cross-entropy at uniform logits: grad = 1/K - [i == j]
    let k = 5;
    let j = 2;
    let mut g = Graph::<f64>::new();
    let logits = g.leaf(Tensor::zeros(vec![1, k]).with_requires_grad(true));
    let target = g.constant(Tensor::from_fn(vec![1, k], |i| if i == j { 1.0 } else { 0.0 }));
    let p = g.softmax(logits).unwrap();
    let lp = g.log(p);
    let prod = g.mul(lp, target).unwrap();
    let s = g.sum(prod);
    let loss = g.scale(s, -1.0);
    g.backward(loss).unwrap();
    let expected: Vec<f64> = (0..k)
        .map(|i| 1.0 / k as f64 - if i == j { 1.0 } else { 0.0 })
        .collect();
    assert!(close(g.grad(logits).unwrap(), &expected, 1e-12));
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut g = Graph::<f32>::new();
    let x = g.leaf(Tensor::ones(vec![2]).with_requires_grad(true));
    assert!(matches!(g.backward(x), Err(Error::Contract(_))));
}

#[test]
fn gradients_accumulate_over_shared_inputs() {
    // loss = sum(x * x + x) -> 2x + 1
    let mut g = Graph::<f64>::new();
    let x = g.leaf(t(&[3], &[0.5, -1., 2.]).with_requires_grad(true));
    let sq = g.mul(x, x).unwrap();
    let s = g.add(sq, x).unwrap();
    let loss = g.sum(s);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2., -1., 5.]);
}

// ---- finite-difference checks, one per differentiable op ----------------

fn assert_gradcheck(
    name: &str,
    inputs: &[Tensor<f64>],
    build: impl Fn(&mut Graph<f64>, &[fusionvote::tensor::Var]) -> fusionvote::tensor::Var,
) {
    let report = check_graph(inputs, build);
    assert!(
        report.passed(),
        "{name}: max rel err {:.3e} (tolerance {TOLERANCE:e}), worst {:?}, checked {}",
        report.max_rel_err,
        report.worst,
        report.checked
    );
}

/// Weighted sum so every output element gets a distinct upstream gradient.
fn weighted_sum(g: &mut Graph<f64>, y: fusionvote::tensor::Var) -> fusionvote::tensor::Var {
    let shape = g.shape(y).to_vec();
    let w = g.constant(random_tensor(&shape, 999, 1.0));
    let p = g.mul(y, w).unwrap();
    g.sum(p)
}

#[test]
fn gradcheck_binary_ops() {
    let a = random_tensor(&[2, 3, 4], 1, 1.0);
    let b = random_tensor(&[3, 1], 2, 1.0);
    let pos = random_tensor(&[3, 1], 3, 1.0).map(|v| v.abs() + 0.5);
    assert_gradcheck("add", &[a.clone(), b.clone()], |g, v| {
        let y = g.add(v[0], v[1]).unwrap();
        weighted_sum(g, y)
    });
    assert_gradcheck("sub", &[a.clone(), b.clone()], |g, v| {
        let y = g.sub(v[1], v[0]).unwrap();
        weighted_sum(g, y)
    });
    assert_gradcheck("mul", &[a.clone(), b], |g, v| {
        let y = g.mul(v[0], v[1]).unwrap();
        weighted_sum(g, y)
    });
    assert_gradcheck("div", &[a, pos], |g, v| {
        let y = g.div(v[0], v[1]).unwrap();
        weighted_sum(g, y)
    });
}

#[test]
fn gradcheck_unary_ops() {
    let x = random_tensor(&[4, 5], 7, 2.0);
    let pos = x.map(|v| v.abs() + 0.2);
    assert_gradcheck("relu", std::slice::from_ref(&x), |g, v| {
        let y = g.relu(v[0]);
        weighted_sum(g, y)
    });
    assert_gradcheck("sigmoid", std::slice::from_ref(&x), |g, v| {
        let y = g.sigmoid(v[0]);
        weighted_sum(g, y)
    });
    assert_gradcheck("exp", std::slice::from_ref(&x), |g, v| {
        let y = g.exp(v[0]);
        weighted_sum(g, y)
    });
    assert_gradcheck("square/scale/offset", std::slice::from_ref(&x), |g, v| {
        let y = g.square(v[0]);
        let y = g.scale(y, 0.3);
        let y = g.add_scalar(y, 2.0);
        weighted_sum(g, y)
    });
    assert_gradcheck("abs", std::slice::from_ref(&x), |g, v| {
        let y = g.abs(v[0]);
        weighted_sum(g, y)
    });
    assert_gradcheck("clamp_min", &[x], |g, v| {
        let y = g.clamp_min(v[0], 0.1);
        weighted_sum(g, y)
    });
    assert_gradcheck("log/sqrt", &[pos], |g, v| {
        let a = g.log(v[0]);
        let b = g.sqrt(v[0]);
        let y = g.add(a, b).unwrap();
        weighted_sum(g, y)
    });
}

#[test]
fn gradcheck_shape_ops() {
    let x = random_tensor(&[2, 3, 4], 11, 1.0);
    let y = random_tensor(&[2, 2, 4], 12, 1.0);
    assert_gradcheck("sum_axes", std::slice::from_ref(&x), |g, v| {
        let s = g.sum_axes(v[0], &[0, 2]).unwrap();
        weighted_sum(g, s)
    });
    assert_gradcheck("mean_axes", std::slice::from_ref(&x), |g, v| {
        let s = g.mean_axes(v[0], &[1]).unwrap();
        weighted_sum(g, s)
    });
    assert_gradcheck("permute", std::slice::from_ref(&x), |g, v| {
        let p = g.permute(v[0], &[2, 0, 1]).unwrap();
        weighted_sum(g, p)
    });
    assert_gradcheck("reshape", std::slice::from_ref(&x), |g, v| {
        let p = g.reshape(v[0], vec![6, 4]).unwrap();
        weighted_sum(g, p)
    });
    assert_gradcheck("concat", &[x, y], |g, v| {
        let c = g.concat(&[v[0], v[1]], 1).unwrap();
        weighted_sum(g, c)
    });
    let img = random_tensor(&[2, 2, 4, 4], 13, 1.0);
    assert_gradcheck("patchify", &[img], |g, v| {
        let p = g.patchify(v[0], 2).unwrap();
        weighted_sum(g, p)
    });
}

#[test]
fn gradcheck_matmul_variants() {
    let a = random_tensor(&[2, 3, 4], 21, 1.0);
    let b = random_tensor(&[4, 5], 22, 1.0);
    let c = random_tensor(&[2, 4, 2], 23, 1.0);
    assert_gradcheck("matmul", &[a.clone(), b], |g, v| {
        let y = g.matmul(v[0], v[1]).unwrap();
        weighted_sum(g, y)
    });
    assert_gradcheck("batch matmul", &[a, c], |g, v| {
        let y = g.matmul(v[0], v[1]).unwrap();
        weighted_sum(g, y)
    });
}

#[test]
fn gradcheck_conv2d() {
    let x = random_tensor(&[2, 2, 6, 6], 31, 1.0);
    let w = random_tensor(&[3, 2, 3, 3], 32, 1.0);
    assert_gradcheck("conv2d stride 2 dilation 2", &[x.clone(), w], |g, v| {
        let y = g.conv2d(v[0], v[1], Conv2dSpec::new(2, 2, 2)).unwrap();
        weighted_sum(g, y)
    });
    let dw = random_tensor(&[2, 1, 3, 3], 33, 1.0);
    assert_gradcheck("depthwise conv2d", &[x, dw], |g, v| {
        let y = g
            .conv2d(v[0], v[1], Conv2dSpec::new(1, 1, 1).with_groups(2))
            .unwrap();
        weighted_sum(g, y)
    });
}

#[test]
fn gradcheck_softmax() {
    let x = random_tensor(&[3, 4], 41, 2.0);
    assert_gradcheck("softmax", &[x], |g, v| {
        let y = g.softmax(v[0]).unwrap();
        weighted_sum(g, y)
    });
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(values in prop::collection::vec(-50.0f32..50.0, 1..40), k in 1usize..6) {
        let rows = values.len() / k;
        prop_assume!(rows >= 1);
        let data = values[..rows * k].to_vec();
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::new(vec![rows, k], data).unwrap());
        let y = g.softmax(x).unwrap();
        for row in g.value(y).data().chunks(k) {
            let s: f64 = row.iter().map(|&p| p as f64).sum();
            prop_assert!((s - 1.0).abs() <= 1e-6);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn identity_matmul_is_bitwise(m in 1usize..6, n in 1usize..6, seed in 0u64..1000) {
        let a = random_tensor(&[m, n], seed, 10.0).cast::<f32>();
        let mut g = Graph::<f32>::new();
        let id = g.leaf(Tensor::eye(m));
        let av = g.leaf(a.clone());
        let y = g.matmul(id, av).unwrap();
        prop_assert_eq!(g.value(y).data(), a.data());
    }

    #[test]
    fn forward_ops_stay_nan_free(seed in 0u64..500) {
        let x = random_tensor(&[2, 3, 4, 4], seed, 5.0).cast::<f32>();
        let w = random_tensor(&[2, 3, 3, 3], seed + 1, 1.0).cast::<f32>();
        let mut g = Graph::<f32>::new();
        let xv = g.leaf(x);
        let wv = g.leaf(w);
        let y = g.conv2d(xv, wv, Conv2dSpec::new(1, 2, 2)).unwrap();
        let y = g.sigmoid(y);
        let y = g.reshape(y, vec![2, 32]).unwrap();
        let y = g.softmax(y).unwrap();
        prop_assert!(g.value(y).is_finite());
    }
}
