use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::tensor::Tensor;

fn t32(shape: &[usize], data: Vec<f32>) -> Tensor<f32> {
    Tensor::new(shape, data).unwrap()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn conv2d_sums_ones() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let w = g.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
    let b = g.constant(Tensor::zeros(&[1]));
    let y = g.conv2d(x, w, b, 1, 0).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 1, 2, 2]);
    assert!(g.value(y).data().iter().all(|&v| v == 4.0));
}

#[test]
fn conv2d_unit_kernel_is_identity() {
    let mut r = rng(1);
    let input = Tensor::<f32>::randn(&[2, 1, 5, 4], 1.0, &mut r);
    let mut g = Graph::new();
    let x = g.constant(input.clone());
    let w = g.constant(Tensor::full(&[1, 1, 1, 1], 1.0));
    let b = g.constant(Tensor::zeros(&[1]));
    let y = g.conv2d(x, w, b, 1, 0).unwrap();
    assert_eq!(g.value(y), &input);
}

#[test]
fn conv2d_weight_gradient_matches_finite_differences() {
    let mut r = rng(2);
    let input = Tensor::<f64>::randn(&[2, 3, 8, 8], 1.0, &mut r);
    let mut params = vec![
        Tensor::<f64>::randn(&[4, 3, 3, 3], 0.5, &mut r),
        Tensor::<f64>::randn(&[4], 0.5, &mut r),
    ];
    let err = grad_check_tensors(
        &mut params,
        |g, p| {
            let x = g.constant(input.clone());
            let y = g.conv2d(x, p[0], p[1], 1, 1)?;
            g.sum(y)
        },
        1e-5,
        usize::MAX,
    )
    .unwrap();
    assert!(err < 1e-4, "rel err {err}");
}

#[test]
fn conv_transpose_single_pixel() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::full(&[1, 1, 1, 1], 1.0));
    let w = g.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
    let b = g.constant(Tensor::zeros(&[1]));
    let y = g.conv_transpose2d(x, w, b, 1, 0).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 1, 2, 2]);
    assert!(g.value(y).data().iter().all(|&v| v == 1.0));
}

#[test]
fn conv_transpose_stride2_doubles() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros(&[1, 2, 8, 8]));
    let w = g.constant(Tensor::zeros(&[2, 3, 4, 4]));
    let b = g.constant(Tensor::zeros(&[3]));
    let y = g.conv_transpose2d(x, w, b, 2, 1).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 3, 16, 16]);
}

fn adjoint_gap(seed: u64, n: usize, cin: usize, cout: usize, hw: usize, k: usize, stride: usize, pad: usize) -> f64 {
    let mut r = rng(seed);
    let a = Tensor::<f64>::randn(&[n, cin, hw, hw], 1.0, &mut r);
    let w = Tensor::<f64>::randn(&[cout, cin, k, k], 1.0, &mut r);
    let mut g = Graph::new();
    let av = g.constant(a.clone());
    let wv = g.constant(w.clone());
    let bz = g.constant(Tensor::zeros(&[cout]));
    let conv = g.conv2d(av, wv, bz, stride, pad).unwrap();
    let b = Tensor::<f64>::randn(g.value(conv).shape(), 1.0, &mut r);
    let bv = g.constant(b.clone());
    let bz2 = g.constant(Tensor::zeros(&[cin]));
    let back = g.conv_transpose2d(bv, wv, bz2, stride, pad).unwrap();
    let lhs = g.value(conv).dot(&b);
    let tv = g.value(back);
    assert_eq!(tv.shape(), a.shape());
    let rhs = a.dot(tv);
    (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-12)
}

#[test]
fn conv_transpose_is_adjoint_of_conv() {
    assert!(adjoint_gap(5, 2, 3, 4, 8, 3, 1, 1) < 1e-6);
    assert!(adjoint_gap(6, 1, 2, 5, 8, 4, 2, 1) < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn adjointness_holds_for_conforming_shapes(
        seed in 0u64..1000,
        cin in 1usize..4,
        cout in 1usize..4,
        k in 1usize..4,
        stride in 1usize..3,
        extra in 0usize..3,
    ) {
        let pad = (k - 1) / 2;
        // (hw + 2·pad − k) divisible by stride, so the transposed output
        // covers the input grid exactly.
        let hw = k - 2 * pad + stride * (1 + extra);
        let gap = adjoint_gap(seed, 1, cin, cout, hw, k, stride, pad);
        prop_assert!(gap < 1e-6, "gap {gap}");
    }
}

#[test]
fn batchnorm_constant_channel_is_zero() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::full(&[2, 1, 3, 3], 7.5));
    let gamma = g.constant(Tensor::full(&[1], 1.0));
    let beta = g.constant(Tensor::zeros(&[1]));
    let (y, _) = g.batchnorm2d(x, gamma, beta, BnMode::Train, 1e-5).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn batchnorm_affine_identity() {
    let mut r = rng(7);
    let raw = Tensor::<f64>::randn(&[4, 2, 5, 5], 3.0, &mut r);
    let mut g = Graph::<f64>::new();
    let x = g.constant(raw);
    let gamma = g.constant(Tensor::full(&[2], 2.0));
    let beta = g.constant(Tensor::full(&[2], 3.0));
    let (y, stats) = g.batchnorm2d(x, gamma, beta, BnMode::Train, 1e-10).unwrap();
    assert!(stats.is_some());
    let yd = g.value(y).data();
    for ch in 0..2 {
        let vals: Vec<f64> = (0..4)
            .flat_map(|s| yd[(s * 2 + ch) * 25..(s * 2 + ch + 1) * 25].to_vec())
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64).sqrt();
        assert!((m - 3.0).abs() < 1e-5, "mean {m}");
        assert!((sd - 2.0).abs() < 1e-5, "std {sd}");
    }
}

#[test]
fn batchnorm_train_output_has_zero_batch_mean() {
    let mut r = rng(8);
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::randn(&[3, 4, 6, 6], 1.0, &mut r).map(|v| v + 2.0));
    let gamma = g.constant(Tensor::randn(&[4], 1.0, &mut r));
    let beta = g.constant(Tensor::zeros(&[4]));
    let (y, _) = g.batchnorm2d(x, gamma, beta, BnMode::Train, 1e-5).unwrap();
    let yd = g.value(y).data();
    for ch in 0..4 {
        let m: f64 = (0..3)
            .flat_map(|s| yd[(s * 4 + ch) * 36..(s * 4 + ch + 1) * 36].iter())
            .map(|&v| v as f64)
            .sum::<f64>()
            / 108.0;
        assert!(m.abs() < 1e-6, "channel {ch} mean {m}");
    }
}

#[test]
fn batchnorm_single_value_is_degenerate() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::full(&[1, 2, 1, 1], 1.0));
    let gamma = g.constant(Tensor::full(&[2], 1.0));
    let beta = g.constant(Tensor::zeros(&[2]));
    let err = g.batchnorm2d(x, gamma, beta, BnMode::Train, 1e-5).unwrap_err();
    assert!(matches!(err, Error::Degenerate { .. }));
    // Eval mode with running stats is fine.
    let (m, v) = ([0.0f32; 2], [1.0f32; 2]);
    assert!(g
        .batchnorm2d(x, gamma, beta, BnMode::Eval { mean: &m, var: &v }, 1e-5)
        .is_ok());
}

#[test]
fn activation_values() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t32(&[3], vec![-1.0, 0.0, 2.0]).cast());
    let leaky = g.activation(x, Activation::LeakyRelu(0.2)).unwrap();
    assert!((g.value(leaky).data()[0] + 0.2).abs() < 1e-12);
    let z = g.constant(Tensor::scalar(0.0));
    let th = g.activation(z, Activation::Tanh).unwrap();
    let sg = g.activation(z, Activation::Sigmoid).unwrap();
    assert_eq!(g.value(th).data()[0], 0.0);
    assert_eq!(g.value(sg).data()[0], 0.5);
    assert!(g.activation(x, Activation::LeakyRelu(1.5)).is_err());
}

#[test]
fn sigmoid_gradient_at_zero() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::scalar(0.0));
    let y = g.activation(x, Activation::Sigmoid).unwrap();
    g.backward(y).unwrap();
    let analytic = g.grad(x).unwrap().data()[0];
    assert!((analytic - 0.25).abs() < 1e-12);
    let h = 1e-6;
    let s = |v: f64| 1.0 / (1.0 + (-v).exp());
    let numeric = (s(h) - s(-h)) / (2.0 * h);
    assert!(rel_error(analytic, numeric) < 1e-8);
}

#[test]
fn relu_subgradient_at_kink_is_zero() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::scalar(0.0));
    let y = g.activation(x, Activation::Relu).unwrap();
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).unwrap().data()[0], 0.0);
}

#[test]
fn pooling_examples() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(t32(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
    let gap = g.pool(x, Pool::GlobalAvg).unwrap();
    assert_eq!(g.value(gap).shape(), &[1, 1]);
    assert_eq!(g.value(gap).data()[0], 2.5);

    let one = g.constant(t32(&[1, 1, 1, 1], vec![1.0]));
    let up = g.pool(one, Pool::NearestUpsample2).unwrap();
    assert_eq!(g.value(up).data(), &[1.0, 1.0, 1.0, 1.0]);

    let odd = g.constant(Tensor::zeros(&[1, 1, 3, 2]));
    assert!(matches!(g.pool(odd, Pool::AvgPool2), Err(Error::Dimension { .. })));
}

#[test]
fn pool_then_upsample_preserves_block_means() {
    let mut r = rng(9);
    let raw = Tensor::<f64>::randn(&[1, 2, 6, 4], 1.0, &mut r);
    let mut g = Graph::<f64>::new();
    let x = g.constant(raw.clone());
    let p = g.pool(x, Pool::AvgPool2).unwrap();
    let u = g.pool(p, Pool::NearestUpsample2).unwrap();
    let (ud, xd) = (g.value(u).data(), raw.data());
    for c in 0..2 {
        for by in 0..3 {
            for bx in 0..2 {
                let block = |d: &[f64]| {
                    let mut s = 0.0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            s += d[c * 24 + (2 * by + dy) * 4 + 2 * bx + dx];
                        }
                    }
                    s / 4.0
                };
                assert!((block(ud) - block(xd)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn loss_examples() {
    let mut g = Graph::<f64>::new();
    let p = g.constant(Tensor::scalar(0.5));
    let l = g.bce(p, &Tensor::scalar(1.0)).unwrap();
    assert!((g.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-12);

    let x = g.constant(Tensor::from_fn(&[2, 3], |i| i as f64));
    let l2 = g.l2(x, x).unwrap();
    assert_eq!(g.value(l2).data()[0], 0.0);

    let logits = g.constant(Tensor::zeros(&[2, 4]));
    let xe = g.softmax_xent(logits, &[0, 3]).unwrap();
    assert!((g.value(xe).data()[0] - 4f64.ln()).abs() < 1e-12);
    assert!(matches!(g.softmax_xent(logits, &[0, 4]), Err(Error::Label(_))));
}

#[test]
fn bce_clamps_extremes() {
    let mut g = Graph::<f64>::new();
    let p = g.param(Tensor::new(&[2], vec![0.0, 1.0]).unwrap());
    let l = g.bce(p, &Tensor::new(&[2], vec![1.0, 0.0]).unwrap()).unwrap();
    let v = g.value(l).data()[0];
    assert!((v - (-(PROB_CLAMP.ln()))).abs() < 1e-6, "{v}");
    g.backward(l).unwrap();
    assert!(g.grad(p).unwrap().all_finite());
}

#[test]
fn backward_simple_expressions() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::scalar(3.0));
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data()[0], 6.0);

    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::scalar(2.0));
    let y = g.param(Tensor::scalar(5.0));
    let xy = g.mul(x, y).unwrap();
    g.backward(xy).unwrap();
    assert_eq!(g.grad(x).unwrap().data()[0], 5.0);
    assert_eq!(g.grad(y).unwrap().data()[0], 2.0);
}

#[test]
fn repeated_backward_accumulates_leaf_grads() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::scalar(3.0));
    let sq = g.mul(x, x).unwrap();
    g.backward(sq).unwrap();
    g.backward(sq).unwrap();
    assert_eq!(g.grad(x).unwrap().data()[0], 12.0);
    g.zero_grad();
    g.backward(sq).unwrap();
    assert_eq!(g.grad(x).unwrap().data()[0], 6.0);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::zeros(&[2]));
    assert!(matches!(g.backward(x), Err(Error::Contract(_))));
}

#[test]
fn no_implicit_broadcasting() {
    let mut g = Graph::<f32>::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[3]));
    assert!(matches!(g.add(a, b), Err(Error::Dimension { .. })));
}

#[test]
fn non_finite_forward_is_an_error() {
    let mut g = Graph::<f32>::new();
    let a = g.constant(Tensor::full(&[2], f32::MAX));
    assert!(matches!(g.add(a, a), Err(Error::Numeric { .. })));
}

/// Per-layer finite-difference checks (the gradient suite's layer half).
mod layer_grads {
    use super::*;

    fn check(mut params: Vec<Tensor<f64>>, f: impl FnMut(&mut Graph<f64>, &[Var]) -> crate::Result<Var>) -> f64 {
        grad_check_tensors(&mut params, f, 1e-6, 200).unwrap()
    }

    fn weights(seed: u64, shapes: &[&[usize]]) -> Vec<Tensor<f64>> {
        let mut r = rng(seed);
        shapes.iter().map(|s| Tensor::randn(s, 0.7, &mut r)).collect()
    }

    /// Nonlinear scalar readout so that every upstream gradient is generic.
    fn readout(g: &mut Graph<f64>, y: Var, seed: u64) -> crate::Result<Var> {
        let mut r = rng(seed);
        let proj = g.constant(Tensor::randn(g.value(y).shape(), 1.0, &mut r));
        let p = g.mul(y, proj)?;
        let t = g.activation(p, Activation::Tanh)?;
        g.sum(t)
    }

    #[test]
    fn conv2d() {
        let e = check(weights(10, &[&[2, 3, 6, 6], &[4, 3, 3, 3], &[4]]), |g, p| {
            let y = g.conv2d(p[0], p[1], p[2], 2, 1)?;
            readout(g, y, 1)
        });
        assert!(e < 1e-4, "{e}");
    }

    #[test]
    fn conv_transpose2d() {
        let e = check(weights(11, &[&[2, 3, 4, 4], &[3, 2, 4, 4], &[2]]), |g, p| {
            let y = g.conv_transpose2d(p[0], p[1], p[2], 2, 1)?;
            readout(g, y, 2)
        });
        assert!(e < 1e-4, "{e}");
    }

    #[test]
    fn batchnorm_train_and_eval() {
        let e = check(weights(12, &[&[3, 2, 3, 3], &[2], &[2]]), |g, p| {
            let (y, _) = g.batchnorm2d(p[0], p[1], p[2], BnMode::Train, 1e-5)?;
            readout(g, y, 3)
        });
        assert!(e < 1e-4, "{e}");
        let (m, v) = ([0.1, -0.2], [0.5, 1.5]);
        let e = check(weights(13, &[&[3, 2, 3, 3], &[2], &[2]]), move |g, p| {
            let (y, _) = g.batchnorm2d(p[0], p[1], p[2], BnMode::Eval { mean: &m, var: &v }, 1e-5)?;
            readout(g, y, 4)
        });
        assert!(e < 1e-4, "{e}");
    }

    #[test]
    fn activations() {
        for (i, kind) in [
            Activation::Relu,
            Activation::LeakyRelu(0.2),
            Activation::Tanh,
            Activation::Sigmoid,
        ]
        .into_iter()
        .enumerate()
        {
            let e = check(weights(20 + i as u64, &[&[2, 3, 4]]), |g, p| {
                let y = g.activation(p[0], kind)?;
                readout(g, y, 5)
            });
            assert!(e < 1e-4, "{kind:?}: {e}");
        }
    }

    #[test]
    fn pools() {
        for (i, kind) in [Pool::AvgPool2, Pool::GlobalAvg, Pool::NearestUpsample2].into_iter().enumerate() {
            let e = check(weights(30 + i as u64, &[&[2, 2, 4, 4]]), |g, p| {
                let y = g.pool(p[0], kind)?;
                readout(g, y, 6)
            });
            assert!(e < 1e-4, "{kind:?}: {e}");
        }
    }

    #[test]
    fn linear_and_reshape() {
        let e = check(weights(40, &[&[3, 8], &[5, 8], &[5]]), |g, p| {
            let y = g.linear(p[0], p[1], p[2])?;
            let y = g.reshape(y, &[3, 5, 1, 1])?;
            readout(g, y, 7)
        });
        assert!(e < 1e-4, "{e}");
    }

    #[test]
    fn elementwise_and_reductions() {
        let e = check(weights(41, &[&[2, 3], &[2, 3]]), |g, p| {
            let a = g.add(p[0], p[1])?;
            let s = g.sub(a, p[1])?;
            let m = g.mul(s, p[1])?;
            let k = g.scale(m, -1.5)?;
            let t = g.activation(k, Activation::Tanh)?;
            g.mean(t)
        });
        assert!(e < 1e-4, "{e}");
    }

    #[test]
    fn losses() {
        let e = check(weights(50, &[&[4, 1]]), |g, p| {
            let s = g.activation(p[0], Activation::Sigmoid)?;
            g.bce(s, &Tensor::new(&[4, 1], vec![1.0, 0.0, 1.0, 0.0]).unwrap())
        });
        assert!(e < 1e-4, "bce {e}");
        let e = check(weights(51, &[&[3, 4]]), |g, p| g.softmax_xent(p[0], &[0, 3, 1]));
        assert!(e < 1e-4, "xent {e}");
        let e = check(weights(52, &[&[3, 4], &[3, 4]]), |g, p| g.l2(p[0], p[1]));
        assert!(e < 1e-4, "l2 {e}");
    }

    #[test]
    fn constant_loss_has_zero_error() {
        let e = check(weights(60, &[&[3]]), |g, _| Ok(g.constant(Tensor::scalar(1.0))));
        assert_eq!(e, 0.0);
    }

    #[test]
    fn eps_outside_range_is_rejected() {
        let mut p = weights(61, &[&[3]]);
        assert!(grad_check_tensors(&mut p, |g, v| g.sum(v[0]), 1e-2, 10).is_err());
    }
}
