//! Reverse-mode automatic differentiation over static graphs.

mod graph;
pub(crate) mod kernels;

pub use graph::{Gradients, Graph, GraphBuilder, Init, Op, Outputs, ParamStore, ValueId};
pub use kernels::sigmoid;

use crate::error::Result;
use crate::tensor::{Element, Tensor};

/// Standalone convolution, `x [N,C,H,W]` against `kernels [O,C,K,K]` with zero bias.
pub fn conv2d<T: Element>(input: &Tensor<T>, kernels_: &Tensor<T>, stride: usize, padding: usize) -> Result<Tensor<T>> {
    let mut g = GraphBuilder::<T>::new();
    let s = input.shape();
    if s.len() != 4 {
        return Err(crate::LxlError::shape("conv2d input", "rank 4", s));
    }
    let x = g.input("x", &s[1..]);
    let w = g.fixed_input("w", kernels_.shape());
    let b = g.constant(Tensor::zeros(&[kernels_.shape()[0]]));
    let y = g.op("conv2d", Op::Conv2d { stride, padding }, &[x, w, b]);
    g.output("y", y);
    let graph = g.build(ParamStore::new())?;
    let mut out = graph.evaluate([("x", input.clone()), ("w", kernels_.clone())])?;
    Ok(out.remove("y").expect("declared output"))
}

/// Finite-difference gradient checking.
pub mod check {
    use std::collections::BTreeMap;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[derive(Debug, Clone)]
    pub struct GradCheckReport {
        pub max_rel_error: f64,
        /// Name and flat index of the worst entry.
        pub worst: (String, usize),
        pub entries_checked: usize,
    }

    /// Magnitude floor in the relative-error denominator, so entries where both gradients are
    /// essentially zero compare absolutely.
    pub const REL_FLOOR: f64 = 1e-3;

    pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
    }

    /// Compares backward gradients of the scalar loss `Σ r ⊙ output` (fixed random `r`) with
    /// central differences of step `eps`, over every parameter entry and every input listed in
    /// `check_inputs`.
    pub fn gradient_check(
        graph: &mut Graph<f64>,
        output: &str,
        inputs: &BTreeMap<String, Tensor<f64>>,
        check_inputs: &[&str],
        eps: f64,
        seed: u64,
    ) -> Result<GradCheckReport> {
        fn feed(ins: &BTreeMap<String, Tensor<f64>>) -> Vec<(&str, Tensor<f64>)> {
            ins.iter().map(|(k, v)| (k.as_str(), v.clone())).collect()
        }
        let out = graph.forward(feed(inputs))?.remove(output).expect("named output");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = Tensor::<f64>::randn(out.shape(), 1.0, &mut rng);
        let loss = |o: &Tensor<f64>| -> f64 { o.data().iter().zip(r.data()).map(|(a, b)| a * b).sum() };
        let grads = graph.backward_from(&[(output, &r)])?;

        let mut worst = (String::new(), 0usize);
        let mut max_rel = 0.0f64;
        let mut checked = 0usize;
        let mut note = |name: &str, i: usize, analytic: f64, numeric: f64| {
            let e = relative_error(analytic, numeric);
            checked += 1;
            if e > max_rel || worst.0.is_empty() {
                max_rel = max_rel.max(e);
                worst = (name.to_string(), i);
            }
        };

        let names: Vec<String> = graph.params().names().cloned().collect();
        for name in &names {
            let n = graph.params().get(name).expect("present").len();
            for i in 0..n {
                let orig = graph.params().get(name).expect("present").data()[i];
                graph.params_mut().get_mut(name).expect("present").data_mut()[i] = orig + eps;
                let plus = loss(&graph.evaluate(feed(inputs))?[output]);
                graph.params_mut().get_mut(name).expect("present").data_mut()[i] = orig - eps;
                let minus = loss(&graph.evaluate(feed(inputs))?[output]);
                graph.params_mut().get_mut(name).expect("present").data_mut()[i] = orig;
                note(name, i, grads.params[name].data()[i], (plus - minus) / (2.0 * eps));
            }
        }
        for &name in check_inputs {
            let mut ins = inputs.clone();
            let n = inputs[name].len();
            for i in 0..n {
                let orig = inputs[name].data()[i];
                ins.get_mut(name).expect("input").data_mut()[i] = orig + eps;
                let plus = loss(&graph.evaluate(feed(&ins))?[output]);
                ins.get_mut(name).expect("input").data_mut()[i] = orig - eps;
                let minus = loss(&graph.evaluate(feed(&ins))?[output]);
                ins.get_mut(name).expect("input").data_mut()[i] = orig;
                note(name, i, grads.inputs[name].data()[i], (plus - minus) / (2.0 * eps));
            }
        }
        Ok(GradCheckReport {
            max_rel_error: max_rel,
            worst,
            entries_checked: checked,
        })
    }

    /// Random tensor with every entry at least `margin` away from zero, which keeps
    /// piecewise-linear ops away from their kinks during finite differencing.
    pub fn away_from_zero(shape: &[usize], margin: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::<f64>::randn(shape, 1.0, rng).map(|v| if v.abs() < margin { v.signum() * margin + v } else { v })
    }

    fn check_graph(
        build: impl FnOnce(&mut GraphBuilder<f64>),
        inputs: BTreeMap<String, Tensor<f64>>,
        check: &[&str],
        seed: u64,
    ) -> Result<GradCheckReport> {
        let mut g = GraphBuilder::<f64>::new();
        build(&mut g);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut graph = g.build_init(ParamStore::new(), &mut rng)?;
        gradient_check(&mut graph, "y", &inputs, check, 1e-3, seed)
    }

    /// Gradient check of one small randomized graph per layer type, with ε = 1e-3, in f64.
    pub fn layer_suite(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let one = |name: &str, t: Tensor<f64>| -> BTreeMap<String, Tensor<f64>> { [(name.to_string(), t)].into_iter().collect() };
        let mut out = Vec::new();

        let x = one("x", away_from_zero(&[2, 2, 4, 4], 0.05, &mut rng));
        out.push(("conv2d", check_graph(|g| {
            let x = g.input("x", &[2, 4, 4]);
            let y = g.conv2d("c", x, 2, 3, 3, 2, 1);
            g.output("y", y);
        }, x, &["x"], seed)?));

        let x = one("x", away_from_zero(&[3, 5], 0.05, &mut rng));
        out.push(("dense", check_graph(|g| {
            let x = g.input("x", &[5]);
            let y = g.dense("d", x, 5, 3);
            g.output("y", y);
        }, x, &["x"], seed)?));

        for (name, op) in [
            ("relu", Op::Relu),
            ("leaky_relu", Op::LeakyRelu(0.2)),
            ("sigmoid", Op::Sigmoid),
            ("silu", Op::Silu),
            ("tanh", Op::Tanh),
        ] {
            let x = one("x", away_from_zero(&[3, 5], 0.05, &mut rng));
            out.push((name, check_graph(|g| {
                let x = g.input("x", &[5]);
                let y = g.op(name, op, &[x]);
                g.output("y", y);
            }, x, &["x"], seed)?));
        }

        let x = one("x", away_from_zero(&[3, 5], 0.05, &mut rng));
        out.push(("add+mul", check_graph(|g| {
            let x = g.input("x", &[5]);
            let w = g.param("w", &[3, 5], Init::Normal(1.0));
            let m = g.mul(x, w);
            let y = g.add(m, x);
            g.output("y", y);
        }, x, &["x"], seed)?));

        let mut x = one("x", away_from_zero(&[2, 2, 4, 4], 0.05, &mut rng));
        x.insert("alpha".into(), Tensor::scalar(0.3));
        out.push(("blend", check_graph(|g| {
            let x = g.input("x", &[2, 4, 4]);
            let a = g.scalar_input("alpha");
            let u = g.avgpool2(x);
            let u = g.upsample2(u);
            let c = g.conv2d("c", x, 2, 2, 1, 1, 0);
            let y = g.blend(u, c, a);
            g.output("y", y);
        }, x, &["x", "alpha"], seed)?));

        let x = one("x", away_from_zero(&[2, 2, 4, 4], 0.05, &mut rng));
        out.push(("upsample2", check_graph(|g| {
            let x = g.input("x", &[2, 4, 4]);
            let y = g.upsample2(x);
            let y = g.conv2d("c", y, 2, 1, 3, 1, 1);
            g.output("y", y);
        }, x, &["x"], seed)?));

        let x = one("x", away_from_zero(&[2, 2, 4, 4], 0.05, &mut rng));
        out.push(("avgpool2+global_avg_pool", check_graph(|g| {
            let x = g.input("x", &[2, 4, 4]);
            let p = g.avgpool2(x);
            let y = g.global_avg_pool(p);
            g.output("y", y);
        }, x, &["x"], seed)?));

        let x = one("x", away_from_zero(&[2, 2, 4, 4], 0.05, &mut rng));
        out.push(("flatten+reshape", check_graph(|g| {
            let x = g.input("x", &[2, 4, 4]);
            let f = g.flatten(x);
            let d = g.dense("d", f, 32, 8);
            let y = g.reshape(d, &[2, 2, 2]);
            g.output("y", y);
        }, x, &["x"], seed)?));

        // The L1 kernel has kinks where two projected rows agree, so inputs are redrawn until
        // every pairwise projected difference is at least 0.05 away from zero.
        let mbd = |g: &mut GraphBuilder<f64>| {
            let x = g.input("x", &[5]);
            let y = g.minibatch_disc("mbd", x, 5, 3, 2);
            g.output("y", y);
        };
        let mut g = GraphBuilder::<f64>::new();
        mbd(&mut g);
        let t = g.build_init(ParamStore::new(), &mut ChaCha8Rng::seed_from_u64(seed))?.params().get("mbd.t").cloned();
        let t = t.ok_or_else(|| crate::LxlError::State("minibatch layer lacks its projection".into()))?;
        let x = loop {
            let x = Tensor::<f64>::randn(&[4, 5], 1.0, &mut rng);
            let m = |i: usize, c: usize| (0..5).map(|a| x.data()[i * 5 + a] * t.data()[a * 6 + c]).sum::<f64>();
            let clear = (0..4).all(|i| (i + 1..4).all(|j| (0..6).all(|c| (m(i, c) - m(j, c)).abs() >= 0.05)));
            if clear {
                break x;
            }
        };
        out.push(("minibatch_disc", check_graph(mbd, one("x", x), &["x"], seed)?));

        Ok(out)
    }
}
