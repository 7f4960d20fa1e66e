use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use super::kernels;
use crate::error::{LxlError, Result};
use crate::tensor::{Element, Tensor};

pub type ValueId = usize;

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// Inputs: x `[N,C,H,W]`, kernels `[O,C,K,K]`, bias `[O]`.
    Conv2d { stride: usize, padding: usize },
    /// Inputs: x `[N,F]`, weights `[F,O]`, bias `[O]`.
    Dense,
    Add,
    Mul,
    /// `a + alpha·(b − a)`; inputs: a, b, scalar alpha.
    Blend,
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    /// `x·sigmoid(x)`.
    Silu,
    Tanh,
    Upsample2,
    AvgPool2,
    GlobalAvgPool,
    Flatten,
    /// Per-sample target shape; the leading batch axis is kept.
    Reshape(Vec<usize>),
    /// Inputs: x `[N,A]`, projection `[A, kernels·kernel_dim]`.
    MinibatchDisc { kernels: usize, kernel_dim: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Conv2d { .. } => "conv2d",
            Op::Dense => "dense",
            Op::Add => "add",
            Op::Mul => "mul",
            Op::Blend => "blend",
            Op::Relu => "relu",
            Op::LeakyRelu(_) => "leaky_relu",
            Op::Sigmoid => "sigmoid",
            Op::Silu => "silu",
            Op::Tanh => "tanh",
            Op::Upsample2 => "upsample2",
            Op::AvgPool2 => "avgpool2",
            Op::GlobalAvgPool => "global_avg_pool",
            Op::Flatten => "flatten",
            Op::Reshape(_) => "reshape",
            Op::MinibatchDisc { .. } => "minibatch_disc",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Op::Conv2d { .. } | Op::Dense | Op::Blend => 3,
            Op::Add | Op::Mul | Op::MinibatchDisc { .. } => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Const(f64),
    Normal(f64),
}

#[derive(Debug, Clone)]
enum ValueDef<T> {
    Input {
        name: String,
        shape: Vec<usize>,
        batched: bool,
    },
    Param {
        name: String,
    },
    Constant(Tensor<T>),
    Node {
        label: String,
        op: Op,
        args: Vec<ValueId>,
    },
}

/// Named trainable tensors, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            tensors: BTreeMap::new(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Option<Tensor<T>> {
        self.tensors.insert(name.into(), t)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<T>> {
        self.tensors.remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }
}

impl<T> FromIterator<(String, Tensor<T>)> for ParamStore<T> {
    fn from_iter<I: IntoIterator<Item = (String, Tensor<T>)>>(iter: I) -> Self {
        ParamStore {
            tensors: iter.into_iter().collect(),
        }
    }
}

pub struct GraphBuilder<T = f32> {
    values: Vec<ValueDef<T>>,
    outputs: Vec<(String, ValueId)>,
    params: HashMap<String, ValueId>,
    decls: BTreeMap<String, (Vec<usize>, Init)>,
}

impl<T: Element> Default for GraphBuilder<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> GraphBuilder<T> {
    pub fn new() -> Self {
        GraphBuilder {
            values: Vec::new(),
            outputs: Vec::new(),
            params: HashMap::new(),
            decls: BTreeMap::new(),
        }
    }

    fn push(&mut self, def: ValueDef<T>) -> ValueId {
        self.values.push(def);
        self.values.len() - 1
    }

    /// Batched input; `shape` excludes the leading batch axis.
    pub fn input(&mut self, name: &str, shape: &[usize]) -> ValueId {
        self.push(ValueDef::Input {
            name: name.to_string(),
            shape: shape.to_vec(),
            batched: true,
        })
    }

    /// Unbatched scalar input, e.g. a fade weight.
    pub fn scalar_input(&mut self, name: &str) -> ValueId {
        self.fixed_input(name, &[])
    }

    /// Unbatched input whose full shape is fixed.
    pub fn fixed_input(&mut self, name: &str, shape: &[usize]) -> ValueId {
        self.push(ValueDef::Input {
            name: name.to_string(),
            shape: shape.to_vec(),
            batched: false,
        })
    }

    /// Declares (or re-references) a named parameter.
    ///
    /// Panics if the same name is declared twice with different shapes.
    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> ValueId {
        if let Some(&id) = self.params.get(name) {
            assert_eq!(self.decls[name].0, shape, "parameter {name} redeclared with a new shape");
            return id;
        }
        let id = self.push(ValueDef::Param { name: name.to_string() });
        self.params.insert(name.to_string(), id);
        self.decls.insert(name.to_string(), (shape.to_vec(), init));
        id
    }

    pub fn constant(&mut self, t: Tensor<T>) -> ValueId {
        self.push(ValueDef::Constant(t))
    }

    pub fn op(&mut self, label: impl Into<String>, op: Op, args: &[ValueId]) -> ValueId {
        assert_eq!(args.len(), op.arity(), "{} takes {} inputs", op.name(), op.arity());
        assert!(args.iter().all(|&a| a < self.values.len()), "argument refers to a later value");
        self.push(ValueDef::Node {
            label: label.into(),
            op,
            args: args.to_vec(),
        })
    }

    fn auto(&mut self, op: Op, args: &[ValueId]) -> ValueId {
        let label = format!("{}#{}", op.name(), self.values.len());
        self.op(label, op, args)
    }

    /// Convolution layer with He-initialised kernels `{name}.w` and zero bias `{name}.b`.
    #[allow(clippy::too_many_arguments)]
    pub fn conv2d(&mut self, name: &str, x: ValueId, in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize) -> ValueId {
        self.conv2d_scaled(name, x, in_ch, out_ch, kernel, stride, padding, 1.0)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv2d_scaled(
        &mut self,
        name: &str,
        x: ValueId,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        gain: f64,
    ) -> ValueId {
        let fan_in = (in_ch * kernel * kernel) as f64;
        let w = self.param(&format!("{name}.w"), &[out_ch, in_ch, kernel, kernel], Init::Normal(gain * (2.0 / fan_in).sqrt()));
        let b = self.param(&format!("{name}.b"), &[out_ch], Init::Zeros);
        self.op(name, Op::Conv2d { stride, padding }, &[x, w, b])
    }

    pub fn dense(&mut self, name: &str, x: ValueId, inputs: usize, outputs: usize) -> ValueId {
        self.dense_scaled(name, x, inputs, outputs, 1.0)
    }

    pub fn dense_scaled(&mut self, name: &str, x: ValueId, inputs: usize, outputs: usize, gain: f64) -> ValueId {
        let w = self.param(&format!("{name}.w"), &[inputs, outputs], Init::Normal(gain * (2.0 / inputs as f64).sqrt()));
        let b = self.param(&format!("{name}.b"), &[outputs], Init::Zeros);
        self.op(name, Op::Dense, &[x, w, b])
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.auto(Op::Add, &[a, b])
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.auto(Op::Mul, &[a, b])
    }

    pub fn blend(&mut self, a: ValueId, b: ValueId, alpha: ValueId) -> ValueId {
        self.auto(Op::Blend, &[a, b, alpha])
    }

    pub fn relu(&mut self, x: ValueId) -> ValueId {
        self.auto(Op::Relu, &[x])
    }

    pub fn leaky_relu(&mut self, x: ValueId, slope: f64) -> ValueId {
        self.auto(Op::LeakyRelu(slope), &[x])
    }

    pub fn sigmoid(&mut self, x: ValueId) -> ValueId {
        self.auto(Op::Sigmoid, &[x])
    }

    pub fn silu(&mut self, x: ValueId) -> ValueId {
        self.auto(Op::Silu, &[x])
    }

    pub fn tanh(&mut self, x: ValueId) -> ValueId {
        self.auto(Op::Tanh, &[x])
    }

    pub fn upsample2(&mut self, x: ValueId) -> ValueId {
        self.auto(Op::Upsample2, &[x])
    }

    pub fn avgpool2(&mut self, x: ValueId) -> ValueId {
        self.auto(Op::AvgPool2, &[x])
    }

    pub fn global_avg_pool(&mut self, x: ValueId) -> ValueId {
        self.auto(Op::GlobalAvgPool, &[x])
    }

    pub fn flatten(&mut self, x: ValueId) -> ValueId {
        self.auto(Op::Flatten, &[x])
    }

    pub fn reshape(&mut self, x: ValueId, per_sample: &[usize]) -> ValueId {
        self.auto(Op::Reshape(per_sample.to_vec()), &[x])
    }

    pub fn minibatch_disc(&mut self, name: &str, x: ValueId, features: usize, kernels: usize, kernel_dim: usize) -> ValueId {
        let t = self.param(&format!("{name}.t"), &[features, kernels * kernel_dim], Init::Normal(0.1));
        self.op(name, Op::MinibatchDisc { kernels, kernel_dim }, &[x, t])
    }

    pub fn output(&mut self, name: &str, id: ValueId) {
        self.outputs.push((name.to_string(), id));
    }

    /// Declared parameters with their shapes, in name order.
    pub fn param_shapes(&self) -> impl Iterator<Item = (&String, &Vec<usize>)> {
        self.decls.iter().map(|(k, (s, _))| (k, s))
    }

    /// Finalises the graph; every declared parameter must be present in `params` with its shape.
    pub fn build(self, params: ParamStore<T>) -> Result<Graph<T>> {
        for (name, (shape, _)) in &self.decls {
            match params.get(name) {
                None => return Err(LxlError::Validation(format!("missing parameter {name}"))),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(LxlError::shape(format!("param {name}"), shape, t.shape()))
                }
                Some(_) => {}
            }
        }
        let mut params = params;
        // Parameters the graph does not reference are dropped so gradients cover exactly the store.
        let stale: Vec<String> = params.names().filter(|n| !self.decls.contains_key(*n)).cloned().collect();
        for n in stale {
            params.remove(&n);
        }
        Ok(Graph {
            values: self.values,
            outputs: self.outputs,
            params,
            cache: None,
        })
    }

    /// Like [`build`](Self::build), initialising any declared parameter that `params` lacks.
    pub fn build_init<R: Rng + ?Sized>(self, mut params: ParamStore<T>, rng: &mut R) -> Result<Graph<T>> {
        for (name, (shape, init)) in &self.decls {
            if params.get(name).is_none() {
                let t = match *init {
                    Init::Zeros => Tensor::zeros(shape),
                    Init::Const(v) => Tensor::full(shape, T::of(v)),
                    Init::Normal(std) => Tensor::randn(shape, std, rng),
                };
                params.insert(name.clone(), t);
            }
        }
        self.build(params)
    }
}

/// Gradients from one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients<T = f32> {
    pub params: BTreeMap<String, Tensor<T>>,
    pub inputs: BTreeMap<String, Tensor<T>>,
}

/// A static computation graph with its parameters.
///
/// [`forward`](Graph::forward) caches every intermediate so [`backward`](Graph::backward) can run;
/// [`evaluate`](Graph::evaluate) borrows immutably and caches nothing, so a frozen graph can be
/// shared across threads.
#[derive(Debug, Clone)]
pub struct Graph<T = f32> {
    values: Vec<ValueDef<T>>,
    outputs: Vec<(String, ValueId)>,
    params: ParamStore<T>,
    cache: Option<Vec<Option<Tensor<T>>>>,
}

pub type Outputs<T> = BTreeMap<String, Tensor<T>>;

impl<T: Element> Graph<T> {
    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    /// Mutable parameter access; invalidates any cached forward pass.
    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        self.cache = None;
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    /// Number of op nodes (inputs, parameters and constants excluded).
    pub fn op_count(&self) -> usize {
        self.values.iter().filter(|v| matches!(v, ValueDef::Node { .. })).count()
    }

    pub fn output_names(&self) -> impl Iterator<Item = &str> {
        self.outputs.iter().map(|(n, _)| n.as_str())
    }

    pub fn forward<'a>(&mut self, inputs: impl IntoIterator<Item = (&'a str, Tensor<T>)>) -> Result<Outputs<T>> {
        self.cache = None;
        let values = self.run(inputs)?;
        let outs = self.collect_outputs(&values);
        self.cache = Some(values);
        Ok(outs)
    }

    pub fn evaluate<'a>(&self, inputs: impl IntoIterator<Item = (&'a str, Tensor<T>)>) -> Result<Outputs<T>> {
        let values = self.run(inputs)?;
        Ok(self.collect_outputs(&values))
    }

    fn collect_outputs(&self, values: &[Option<Tensor<T>>]) -> Outputs<T> {
        self.outputs
            .iter()
            .map(|(name, id)| (name.clone(), self.value(values, *id).clone()))
            .collect()
    }

    fn value<'s>(&'s self, values: &'s [Option<Tensor<T>>], id: ValueId) -> &'s Tensor<T> {
        match &self.values[id] {
            ValueDef::Param { name } => self.params.get(name).expect("validated at build"),
            ValueDef::Constant(t) => t,
            _ => values[id].as_ref().expect("computed in topological order"),
        }
    }

    fn run<'a>(&self, inputs: impl IntoIterator<Item = (&'a str, Tensor<T>)>) -> Result<Vec<Option<Tensor<T>>>> {
        let mut fed: HashMap<&str, Tensor<T>> = inputs.into_iter().collect();
        let mut values: Vec<Option<Tensor<T>>> = Vec::with_capacity(self.values.len());
        let mut batch: Option<usize> = None;
        for def in &self.values {
            let v = match def {
                ValueDef::Input { name, shape, batched } => {
                    let t = fed
                        .remove(name.as_str())
                        .ok_or_else(|| LxlError::Validation(format!("missing graph input {name}")))?;
                    if *batched {
                        let ok = t.shape().len() == shape.len() + 1 && &t.shape()[1..] == shape.as_slice() && t.shape()[0] > 0;
                        if !ok {
                            let mut expected = vec![batch.unwrap_or(0)];
                            expected.extend_from_slice(shape);
                            return Err(LxlError::shape(format!("input {name}"), expected, t.shape()));
                        }
                        match batch {
                            Some(b) if b != t.shape()[0] => {
                                return Err(LxlError::shape(format!("input {name} batch"), b, t.shape()[0]))
                            }
                            _ => batch = Some(t.shape()[0]),
                        }
                    } else if t.shape() != shape.as_slice() {
                        return Err(LxlError::shape(format!("input {name}"), shape, t.shape()));
                    }
                    if !t.all_finite() {
                        return Err(LxlError::NonFinite(format!("input {name}")));
                    }
                    Some(t)
                }
                ValueDef::Param { .. } | ValueDef::Constant(_) => None,
                ValueDef::Node { label, op, args } => {
                    let a: Vec<&Tensor<T>> = args.iter().map(|&i| self.value(&values, i)).collect();
                    let out = eval_op(label, op, &a)?;
                    if !out.all_finite() {
                        return Err(LxlError::NonFinite(label.clone()));
                    }
                    Some(out)
                }
            };
            values.push(v);
        }
        if let Some(extra) = fed.keys().next() {
            return Err(LxlError::Validation(format!("unknown graph input {extra}")));
        }
        Ok(values)
    }

    /// Backpropagates `output_grad` from the graph's single output.
    pub fn backward(&self, output_grad: &Tensor<T>) -> Result<Gradients<T>> {
        match self.outputs.as_slice() {
            [(name, _)] => self.backward_from(&[(name.as_str(), output_grad)]),
            _ => Err(LxlError::State(format!(
                "backward needs a named output on a graph with {} outputs",
                self.outputs.len()
            ))),
        }
    }

    /// Backpropagates gradients seeded at one or more named outputs.
    pub fn backward_from(&self, seeds: &[(&str, &Tensor<T>)]) -> Result<Gradients<T>> {
        let values = self
            .cache
            .as_ref()
            .ok_or_else(|| LxlError::State("backward called before forward".into()))?;
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.values.len()];
        for (name, g) in seeds {
            let id = self
                .outputs
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, id)| *id)
                .ok_or_else(|| LxlError::Validation(format!("unknown output {name}")))?;
            let expected = self.value(values, id).shape();
            if g.shape() != expected {
                return Err(LxlError::shape(format!("output grad {name}"), expected, g.shape()));
            }
            accumulate(&mut grads[id], (*g).clone());
        }
        for id in (0..self.values.len()).rev() {
            let ValueDef::Node { op, args, .. } = &self.values[id] else {
                continue;
            };
            let Some(dy) = grads[id].take() else {
                continue;
            };
            let a: Vec<&Tensor<T>> = args.iter().map(|&i| self.value(values, i)).collect();
            let y = self.value(values, id);
            let dargs = backward_op(op, &a, y, &dy);
            for (&arg, d) in args.iter().zip(dargs) {
                if let Some(d) = d {
                    accumulate(&mut grads[arg], d);
                }
            }
        }
        let mut out = Gradients {
            params: BTreeMap::new(),
            inputs: BTreeMap::new(),
        };
        for (id, def) in self.values.iter().enumerate() {
            match def {
                ValueDef::Param { name } => {
                    let shape = self.params.get(name).expect("validated").shape();
                    let g = grads[id].take().unwrap_or_else(|| Tensor::zeros(shape));
                    out.params.insert(name.clone(), g);
                }
                ValueDef::Input { name, .. } => {
                    let shape = values[id].as_ref().expect("input cached").shape();
                    let g = grads[id].take().unwrap_or_else(|| Tensor::zeros(shape));
                    out.inputs.insert(name.clone(), g);
                }
                _ => {}
            }
        }
        Ok(out)
    }
}

fn accumulate<T: Element>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn eval_op<T: Element>(label: &str, op: &Op, a: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let rank = |t: &Tensor<T>, r: usize, what: &str| -> Result<()> {
        if t.shape().len() != r {
            return Err(LxlError::shape(format!("{label} ({what})"), format!("rank {r}"), t.shape()));
        }
        Ok(())
    };
    Ok(match op {
        Op::Conv2d { stride, padding } => {
            let (x, w, b) = (a[0], a[1], a[2]);
            rank(x, 4, "input")?;
            rank(w, 4, "kernels")?;
            if w.shape()[1] != x.shape()[1] || w.shape()[2] != w.shape()[3] || b.shape() != [w.shape()[0]] {
                return Err(LxlError::shape(
                    label,
                    format!("kernels [_, {}, k, k] and bias [{}]", x.shape()[1], w.shape()[0]),
                    format!("kernels {:?}, bias {:?}", w.shape(), b.shape()),
                ));
            }
            let k = w.shape()[2];
            for &e in &x.shape()[2..] {
                if kernels::conv_out_extent(e, k, *stride, *padding).is_none() {
                    return Err(LxlError::shape(label, format!("extent ≥ {}", k.saturating_sub(2 * padding)), x.shape()));
                }
            }
            kernels::conv2d(x, w, b, *stride, *padding)
        }
        Op::Dense => {
            let (x, w, b) = (a[0], a[1], a[2]);
            rank(x, 2, "input")?;
            rank(w, 2, "weights")?;
            if w.shape()[0] != x.shape()[1] || b.shape() != [w.shape()[1]] {
                return Err(LxlError::shape(label, format!("weights [{}, _]", x.shape()[1]), w.shape()));
            }
            kernels::dense(x, w, b)
        }
        Op::Add | Op::Mul => {
            if a[0].shape() != a[1].shape() {
                return Err(LxlError::shape(label, a[0].shape(), a[1].shape()));
            }
            let f: fn(T, T) -> T = if *op == Op::Add { |x, y| x + y } else { |x, y| x * y };
            Tensor::new(a[0].shape().to_vec(), a[0].data().iter().zip(a[1].data()).map(|(&x, &y)| f(x, y)).collect())?
        }
        Op::Blend => {
            if a[0].shape() != a[1].shape() {
                return Err(LxlError::shape(label, a[0].shape(), a[1].shape()));
            }
            if a[2].len() != 1 {
                return Err(LxlError::shape(format!("{label} (alpha)"), "scalar", a[2].shape()));
            }
            let alpha = a[2].data()[0];
            Tensor::new(
                a[0].shape().to_vec(),
                a[0].data().iter().zip(a[1].data()).map(|(&x, &y)| x + alpha * (y - x)).collect(),
            )?
        }
        Op::Relu => a[0].map(|v| if v > T::zero() { v } else { T::zero() }),
        Op::LeakyRelu(slope) => {
            let s = T::of(*slope);
            a[0].map(|v| if v > T::zero() { v } else { s * v })
        }
        Op::Sigmoid => a[0].map(kernels::sigmoid),
        Op::Silu => a[0].map(|v| v * kernels::sigmoid(v)),
        Op::Tanh => a[0].map(|v| v.tanh()),
        Op::Upsample2 => {
            rank(a[0], 4, "input")?;
            kernels::upsample2(a[0])
        }
        Op::AvgPool2 => {
            rank(a[0], 4, "input")?;
            if !a[0].shape()[2].is_multiple_of(2) || !a[0].shape()[3].is_multiple_of(2) {
                return Err(LxlError::shape(label, "even spatial extents", a[0].shape()));
            }
            kernels::avgpool2(a[0])
        }
        Op::GlobalAvgPool => {
            rank(a[0], 4, "input")?;
            kernels::global_avg_pool(a[0])
        }
        Op::Flatten => {
            let n = a[0].shape()[0];
            let rest: usize = a[0].shape()[1..].iter().product();
            a[0].clone().reshape(&[n, rest])?
        }
        Op::Reshape(per_sample) => {
            let mut shape = vec![a[0].shape()[0]];
            shape.extend_from_slice(per_sample);
            a[0].clone().reshape(&shape).map_err(|_| LxlError::shape(label, &shape, a[0].shape()))?
        }
        Op::MinibatchDisc { kernels: kb, kernel_dim } => {
            let (x, t) = (a[0], a[1]);
            rank(x, 2, "input")?;
            if x.shape()[0] < 2 {
                return Err(LxlError::shape(format!("{label} (batch)"), "≥ 2 rows", x.shape()));
            }
            if t.shape() != [x.shape()[1], kb * kernel_dim] {
                return Err(LxlError::shape(label, [x.shape()[1], kb * kernel_dim], t.shape()));
            }
            kernels::minibatch_disc(x, t, *kb, *kernel_dim)
        }
    })
}

/// Returns one optional gradient per op input.
fn backward_op<T: Element>(op: &Op, a: &[&Tensor<T>], y: &Tensor<T>, dy: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
    let zip = |f: &dyn Fn(T, T) -> T, base: &Tensor<T>| -> Tensor<T> {
        Tensor::new(base.shape().to_vec(), base.data().iter().zip(dy.data()).map(|(&v, &g)| f(v, g)).collect())
            .expect("same shape")
    };
    match op {
        Op::Conv2d { stride, padding } => {
            let (dx, dw, db) = kernels::conv2d_backward(a[0], a[1], dy, *stride, *padding);
            vec![Some(dx), Some(dw), Some(db)]
        }
        Op::Dense => {
            let (dx, dw, db) = kernels::dense_backward(a[0], a[1], dy);
            vec![Some(dx), Some(dw), Some(db)]
        }
        Op::Add => vec![Some(dy.clone()), Some(dy.clone())],
        Op::Mul => vec![Some(zip(&|v, g| v * g, a[1])), Some(zip(&|v, g| v * g, a[0]))],
        Op::Blend => {
            let alpha = a[2].data()[0];
            let one = T::one();
            let da = dy.map(|g| (one - alpha) * g);
            let db = dy.map(|g| alpha * g);
            let dalpha: T = a[0].data().iter().zip(a[1].data()).zip(dy.data()).map(|((&x, &z), &g)| g * (z - x)).sum();
            vec![Some(da), Some(db), Some(Tensor::new(a[2].shape().to_vec(), vec![dalpha]).expect("scalar"))]
        }
        Op::Relu => vec![Some(zip(&|v, g| if v > T::zero() { g } else { T::zero() }, a[0]))],
        Op::LeakyRelu(slope) => {
            let s = T::of(*slope);
            vec![Some(zip(&|v, g| if v > T::zero() { g } else { s * g }, a[0]))]
        }
        Op::Sigmoid => vec![Some(zip(&|s, g| g * s * (T::one() - s), y))],
        Op::Silu => vec![Some(zip(
            &|v, g| {
                let s = kernels::sigmoid(v);
                g * s * (T::one() + v * (T::one() - s))
            },
            a[0],
        ))],
        Op::Tanh => vec![Some(zip(&|t, g| g * (T::one() - t * t), y))],
        Op::Upsample2 => vec![Some(kernels::upsample2_backward(dy))],
        Op::AvgPool2 => vec![Some(kernels::avgpool2_backward(dy))],
        Op::GlobalAvgPool => vec![Some(kernels::global_avg_pool_backward(a[0].shape(), dy))],
        Op::Flatten | Op::Reshape(_) => vec![Some(dy.clone().reshape(a[0].shape()).expect("same numel"))],
        Op::MinibatchDisc { kernels: kb, kernel_dim } => {
            let (dx, dt) = kernels::minibatch_disc_backward(a[0], a[1], dy, *kb, *kernel_dim);
            vec![Some(dx), Some(dt)]
        }
    }
}
