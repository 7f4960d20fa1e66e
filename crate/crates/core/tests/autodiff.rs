use lxl_core::autodiff::check::layer_suite;
use lxl_core::autodiff::{conv2d, GraphBuilder, Init, ParamStore};
use lxl_core::{LxlError, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn store(entries: &[(&str, Tensor<f64>)]) -> ParamStore<f64> {
    entries.iter().map(|(n, t)| (n.to_string(), t.clone())).collect()
}

#[test]
fn square_forward_and_backward() {
    let mut g = GraphBuilder::<f64>::new();
    let w = g.param("w", &[1], Init::Zeros);
    let y = g.mul(w, w);
    g.output("y", y);
    let mut graph = g.build(store(&[("w", Tensor::new(vec![1], vec![3.0]).unwrap())])).unwrap();
    let out = graph.forward([]).unwrap();
    assert_eq!(out["y"].data(), &[9.0]);
    let grads = graph.backward(&Tensor::new(vec![1], vec![1.0]).unwrap()).unwrap();
    assert_eq!(grads.params["w"].data(), &[6.0]);
}

#[test]
fn zero_node_graph_is_identity() {
    let mut g = GraphBuilder::<f32>::new();
    let x = g.input("x", &[4]);
    g.output("y", x);
    let graph = g.build(ParamStore::new()).unwrap();
    assert_eq!(graph.op_count(), 0);
    let x = Tensor::new(vec![2, 4], (0..8).map(|i| i as f32).collect()).unwrap();
    assert_eq!(graph.evaluate([("x", x.clone())]).unwrap()["y"], x);
}

#[test]
fn constant_output_has_zero_gradients() {
    let mut g = GraphBuilder::<f64>::new();
    let _w = g.param("w", &[2, 2], Init::Normal(1.0));
    let c = g.constant(Tensor::full(&[3], 1.5));
    let y = g.relu(c);
    g.output("y", y);
    let mut graph = g.build_init(ParamStore::new(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    graph.forward([]).unwrap();
    let grads = graph.backward(&Tensor::full(&[3], 1.0)).unwrap();
    assert_eq!(grads.params["w"].shape(), &[2, 2]);
    assert!(grads.params["w"].data().iter().all(|&v| v == 0.0));
}

#[test]
fn backward_before_forward_is_state_error() {
    let mut g = GraphBuilder::<f32>::new();
    let x = g.input("x", &[1]);
    let y = g.sigmoid(x);
    g.output("y", y);
    let graph = g.build(ParamStore::new()).unwrap();
    let err = graph.backward(&Tensor::zeros(&[1, 1])).unwrap_err();
    assert!(matches!(err, LxlError::State(_)));
}

#[test]
fn shape_mismatch_names_node() {
    let mut g = GraphBuilder::<f32>::new();
    let x = g.input("x", &[3]);
    let h = g.dense("hidden", x, 4, 2);
    g.output("y", h);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut graph = g.build_init(ParamStore::new(), &mut rng).unwrap();
    match graph.forward([("x", Tensor::zeros(&[1, 3]))]).unwrap_err() {
        LxlError::Shape { node, .. } => assert_eq!(node, "hidden"),
        other => panic!("unexpected {other}"),
    }
    match graph.forward([("x", Tensor::zeros(&[1, 5]))]).unwrap_err() {
        LxlError::Shape { node, .. } => assert!(node.contains("input x")),
        other => panic!("unexpected {other}"),
    }
}

/// Two-layer sigmoid MLP compared against the same arithmetic written out by hand.
#[test]
fn sigmoid_mlp_matches_straight_line_arithmetic() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut g = GraphBuilder::<f64>::new();
    let x = g.input("x", &[3]);
    let h = g.dense("l1", x, 3, 4);
    let h = g.sigmoid(h);
    let o = g.dense("l2", h, 4, 2);
    let o = g.sigmoid(o);
    g.output("y", o);
    let graph = g.build_init(ParamStore::new(), &mut rng).unwrap();
    let xs = Tensor::<f64>::randn(&[5, 3], 1.0, &mut rng);
    let out = graph.evaluate([("x", xs.clone())]).unwrap().remove("y").unwrap();

    let p = graph.params();
    let (w1, b1) = (p.get("l1.w").unwrap().data(), p.get("l1.b").unwrap().data());
    let (w2, b2) = (p.get("l2.w").unwrap().data(), p.get("l2.b").unwrap().data());
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    for n in 0..5 {
        let xr = &xs.data()[n * 3..n * 3 + 3];
        let mut hidden = [0.0; 4];
        for j in 0..4 {
            let mut acc = b1[j];
            for i in 0..3 {
                acc += xr[i] * w1[i * 4 + j];
            }
            hidden[j] = sig(acc);
        }
        for k in 0..2 {
            let mut acc = b2[k];
            for j in 0..4 {
                acc += hidden[j] * w2[j * 2 + k];
            }
            assert!((out.data()[n * 2 + k] - sig(acc)).abs() < 1e-12);
        }
    }
}

#[test]
fn forward_is_bitwise_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut g = GraphBuilder::<f32>::new();
    let x = g.input("x", &[2, 6, 6]);
    let c = g.conv2d("c", x, 2, 3, 3, 1, 1);
    let r = g.leaky_relu(c, 0.2);
    let p = g.global_avg_pool(r);
    g.output("y", p);
    let graph = g.build_init(ParamStore::new(), &mut rng).unwrap();
    let xs = Tensor::<f32>::randn(&[2, 2, 6, 6], 1.0, &mut rng);
    let a = graph.evaluate([("x", xs.clone())]).unwrap();
    let b = graph.evaluate([("x", xs)]).unwrap();
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a["y"]), bits(&b["y"]));
}

#[test]
fn conv_scaling_by_unit_kernel() {
    let x = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
    let k = Tensor::<f32>::full(&[1, 1, 1, 1], 2.0);
    let y = conv2d(&x, &k, 1, 0).unwrap();
    assert_eq!(y.shape(), &[1, 1, 3, 3]);
    assert!(y.data().iter().all(|&v| v == 2.0));
}

#[test]
fn conv_direct_sum() {
    let x = Tensor::<f32>::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let k = Tensor::<f32>::full(&[1, 1, 2, 2], 1.0);
    let y = conv2d(&x, &k, 1, 0).unwrap();
    assert_eq!(y.shape(), &[1, 1, 1, 1]);
    assert_eq!(y.data(), &[10.0]);
}

#[test]
fn conv_inconsistent_channels_is_shape_error() {
    let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
    let k = Tensor::<f32>::zeros(&[1, 3, 3, 3]);
    assert!(matches!(conv2d(&x, &k, 1, 0), Err(LxlError::Shape { .. })));
}

/// Six nested loops over output channel, row, column, input channel and kernel offsets.
fn naive_conv(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, kk) = (k.shape()[0], k.shape()[2]);
    let ho = (h + 2 * pad - kk) / stride + 1;
    let wo = (w + 2 * pad - kk) / stride + 1;
    let mut out = Tensor::zeros(&[n, o, ho, wo]);
    for s in 0..n {
        for oc in 0..o {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = 0.0;
                    for ic in 0..c {
                        for ki in 0..kk {
                            for kj in 0..kk {
                                let yi = (i * stride + ki) as isize - pad as isize;
                                let xj = (j * stride + kj) as isize - pad as isize;
                                if yi < 0 || xj < 0 || yi as usize >= h || xj as usize >= w {
                                    continue;
                                }
                                acc += x.data()[((s * c + ic) * h + yi as usize) * w + xj as usize]
                                    * k.data()[((oc * c + ic) * kk + ki) * kk + kj];
                            }
                        }
                    }
                    out.data_mut()[((s * o + oc) * ho + i) * wo + j] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn conv_matches_naive_loops_8x8x3() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = Tensor::<f32>::randn(&[1, 3, 8, 8], 1.0, &mut rng);
    let k = Tensor::<f32>::randn(&[4, 3, 3, 3], 1.0, &mut rng);
    let got = conv2d(&x, &k, 1, 0).unwrap();
    let want = naive_conv(&x.cast(), &k.cast(), 1, 0);
    assert_eq!(got.shape(), want.shape());
    for (a, b) in got.data().iter().zip(want.data()) {
        assert!((*a as f64 - b).abs() < 1e-5 * (1.0 + b.abs()), "{a} vs {b}");
    }
    // f64 path pins the 1e-6 elementwise bound without single-precision rounding.
    let got64 = conv2d(&x.cast::<f64>(), &k.cast::<f64>(), 1, 0).unwrap();
    for (a, b) in got64.data().iter().zip(want.data()) {
        assert!((a - b).abs() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn conv_matches_naive_loops_sweep(
        c in 1usize..4, o in 1usize..4, h in 1usize..=8, w in 1usize..=8,
        k in 1usize..=3, stride in 1usize..=2, pad in 0usize..=1, seed in any::<u64>()
    ) {
        prop_assume!(h + 2 * pad >= k && w + 2 * pad >= k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::randn(&[2, c, h, w], 1.0, &mut rng);
        let kern = Tensor::<f64>::randn(&[o, c, k, k], 1.0, &mut rng);
        let got = conv2d(&x, &kern, stride, pad).unwrap();
        let want = naive_conv(&x, &kern, stride, pad);
        prop_assert_eq!(got.shape(), want.shape());
        for (a, b) in got.data().iter().zip(want.data()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn gradients_match_finite_differences_per_layer() {
    for seed in 0..10 {
        let suite = layer_suite(seed).unwrap();
        assert_eq!(suite.len(), 13);
        for (name, report) in &suite {
            assert!(report.entries_checked > 0, "{name}");
            assert!(report.max_rel_error < 1e-4, "{name}: max relative error {:e} at {:?}", report.max_rel_error, report.worst);
        }
    }
}
