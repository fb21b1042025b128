use std::collections::HashMap;

use super::{Gradients, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Pointwise operations accepted by [`Graph::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Sigmoid,
    Tanh,
    Relu,
    Square,
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    Row { param: ParamId, row: usize },
    MatMul(Var, Var),
    MatVec(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Neg(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Square(Var),
    Sum(Var),
    Softmax(Var),
    LogSoftmax { input: Var, valid: Option<Vec<bool>> },
    StraightThrough(Var),
    Slice { input: Var, start: usize },
    Concat(Vec<Var>),
    Index { input: Var, index: usize },
    Stack(Vec<Var>),
    WeightedSum { weights: Var, items: Vec<Var> },
}

struct Node {
    op: Op,
    // `None` for parameter nodes, which read straight from the store.
    value: Option<Tensor>,
}

/// Append-only computation tape. Node `k` only ever refers to nodes `< k`,
/// so reverse append order is a valid topological order for backward.
///
/// Parameters are borrowed read-only from a [`ParamStore`]; their gradients
/// are written into a caller-supplied [`Gradients`] by [`Graph::backward`].
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

/// Node-level gradients produced by [`Graph::backward`].
pub struct Backward {
    grads: Vec<Option<Vec<f64>>>,
}

impl Backward {
    /// Gradient of the loss with respect to `var`, if any flowed there.
    pub fn wrt(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0)?.as_deref()
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in values.iter_mut() {
        *v /= total;
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        let node = &self.nodes[var.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            (None, _) => unreachable!("only parameter nodes borrow their value"),
        }
    }

    pub fn data(&self, var: Var) -> &[f64] {
        self.value(var).data()
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.value(var).shape()
    }

    /// Value of a one-element node.
    pub fn scalar(&self, var: Var) -> f64 {
        self.value(var).data()[0]
    }

    /// Constant leaf. Gradients still flow into it and can be read back via
    /// [`Backward::wrt`].
    pub fn input(&mut self, tensor: Tensor) -> Var {
        self.push(Op::Input, tensor)
    }

    pub fn zeros(&mut self, len: usize) -> Var {
        self.input(Tensor::zeros(&[len]))
    }

    /// The node for a stored parameter. Repeated calls share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    /// Gathers one row of a matrix parameter (embedding lookup).
    pub fn row(&mut self, id: ParamId, row: usize) -> Result<Var> {
        let table = self.params.get(id);
        if table.shape().len() != 2 || row >= table.rows() {
            return Err(Error::contract(format!(
                "row {row} out of range for parameter {} with shape {:?}",
                self.params.name(id),
                table.shape()
            )));
        }
        let value = Tensor::vector(table.row(row).to_vec());
        Ok(self.push(Op::Row { param: id, row }, value))
    }

    /// General matrix product `[m,k]·[k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::Shape {
                op: "matmul",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let (da, db) = (ta.data(), tb.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let x = da[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let row = &db[p * n..(p + 1) * n];
                for (o, y) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                    *o += x * y;
                }
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    /// Matrix-vector product `[m,k]·[k] -> [m]`.
    pub fn matvec(&mut self, a: Var, x: Var) -> Result<Var> {
        let (ta, tx) = (self.value(a), self.value(x));
        if ta.shape().len() != 2 || tx.shape().len() != 1 || ta.shape()[1] != tx.shape()[0] {
            return Err(Error::Shape {
                op: "matvec",
                left: ta.shape().to_vec(),
                right: tx.shape().to_vec(),
            });
        }
        let k = ta.shape()[1];
        let xs = tx.data();
        let out: Vec<f64> = ta
            .data()
            .chunks_exact(k)
            .map(|row| row.iter().zip(xs).map(|(w, x)| w * x).sum())
            .collect();
        Ok(self.push(Op::MatVec(a, x), Tensor::vector(out)))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(name, ta, tb)?;
        let out = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        Ok(self.push(op, value))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x);
        let out = t.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(t.shape().to_vec(), out).expect("shape preserved");
        self.push(op, value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.unary(x, |v| v * factor, Op::Scale(x, factor))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, |v| -v, Op::Neg(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    /// Dispatches a pointwise op by kind. Unary kinds take one argument,
    /// binary kinds two.
    pub fn elementwise(&mut self, op: Elementwise, args: &[Var]) -> Result<Var> {
        let arity = match op {
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul => 2,
            _ => 1,
        };
        if args.len() != arity {
            return Err(Error::contract(format!(
                "{op:?} takes {arity} argument(s), got {}",
                args.len()
            )));
        }
        Ok(match op {
            Elementwise::Add => self.add(args[0], args[1])?,
            Elementwise::Sub => self.sub(args[0], args[1])?,
            Elementwise::Mul => self.mul(args[0], args[1])?,
            Elementwise::Sigmoid => self.sigmoid(args[0]),
            Elementwise::Tanh => self.tanh(args[0]),
            Elementwise::Relu => self.relu(args[0]),
            Elementwise::Square => self.square(args[0]),
        })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.data(x).iter().sum();
        self.push(Op::Sum(x), Tensor::scalar(total))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let prod = self.mul(a, b)?;
        Ok(self.sum(prod))
    }

    fn require_vector(&self, op: &'static str, x: Var) -> Result<()> {
        let t = self.value(x);
        if t.shape().len() != 1 || t.is_empty() {
            return Err(Error::Shape {
                op,
                left: t.shape().to_vec(),
                right: vec![],
            });
        }
        Ok(())
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.require_vector("softmax", x)?;
        let mut out = self.data(x).to_vec();
        softmax_in_place(&mut out);
        Ok(self.push(Op::Softmax(x), Tensor::vector(out)))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        self.log_softmax_inner(x, None)
    }

    /// Log-softmax restricted to entries where `valid` is true. Masked entries
    /// come out as `-inf` and receive no gradient.
    pub fn log_softmax_masked(&mut self, x: Var, valid: &[bool]) -> Result<Var> {
        if valid.len() != self.value(x).len() || !valid.iter().any(|&v| v) {
            return Err(Error::contract(format!(
                "mask {valid:?} does not fit input of shape {:?}",
                self.shape(x)
            )));
        }
        self.log_softmax_inner(x, Some(valid.to_vec()))
    }

    fn log_softmax_inner(&mut self, x: Var, valid: Option<Vec<bool>>) -> Result<Var> {
        self.require_vector("log_softmax", x)?;
        let data = self.data(x);
        let keep = |i: usize| valid.as_ref().is_none_or(|m| m[i]);
        let max = (0..data.len())
            .filter(|&i| keep(i))
            .map(|i| data[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let log_total = (0..data.len())
            .filter(|&i| keep(i))
            .map(|i| (data[i] - max).exp())
            .sum::<f64>()
            .ln();
        let out = (0..data.len())
            .map(|i| {
                if keep(i) {
                    data[i] - max - log_total
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        Ok(self.push(Op::LogSoftmax { input: x, valid }, Tensor::vector(out)))
    }

    /// Forward: one-hot at the argmax of `weights` (lowest index on ties).
    /// Backward: identity, so the gradient reaches whatever produced
    /// `weights` as if the one-hot had not been there.
    pub fn straight_through(&mut self, weights: Var) -> Result<Var> {
        self.require_vector("straight_through", weights)?;
        let data = self.data(weights);
        let mut out = vec![0.0; data.len()];
        out[argmax(data)] = 1.0;
        Ok(self.push(Op::StraightThrough(weights), Tensor::vector(out)))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.require_vector("slice", x)?;
        let data = self.data(x);
        if start + len > data.len() {
            return Err(Error::Shape {
                op: "slice",
                left: vec![data.len()],
                right: vec![start, len],
            });
        }
        let out = data[start..start + len].to_vec();
        Ok(self.push(Op::Slice { input: x, start }, Tensor::vector(out)))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut out = Vec::new();
        for &p in parts {
            self.require_vector("concat", p)?;
            out.extend_from_slice(self.data(p));
        }
        Ok(self.push(Op::Concat(parts.to_vec()), Tensor::vector(out)))
    }

    /// Selects one entry as a scalar.
    pub fn index(&mut self, x: Var, index: usize) -> Result<Var> {
        let data = self.data(x);
        if index >= data.len() {
            return Err(Error::contract(format!(
                "index {index} out of range for length {}",
                data.len()
            )));
        }
        let v = data[index];
        Ok(self.push(Op::Index { input: x, index }, Tensor::scalar(v)))
    }

    /// Packs scalars into a vector.
    pub fn stack(&mut self, scalars: &[Var]) -> Result<Var> {
        let mut out = Vec::with_capacity(scalars.len());
        for &s in scalars {
            let t = self.value(s);
            if t.len() != 1 {
                return Err(Error::Shape {
                    op: "stack",
                    left: t.shape().to_vec(),
                    right: vec![],
                });
            }
            out.push(t.data()[0]);
        }
        if out.is_empty() {
            return Err(Error::contract("stack of zero scalars"));
        }
        Ok(self.push(Op::Stack(scalars.to_vec()), Tensor::vector(out)))
    }

    /// `Σ_k weights[k] · items[k]`. Terms with an exactly-zero weight are
    /// skipped, so a one-hot weighting returns the selected item bit-for-bit.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var> {
        let w = self.data(weights);
        if w.len() != items.len() || items.is_empty() {
            return Err(Error::Shape {
                op: "weighted_sum",
                left: vec![w.len()],
                right: vec![items.len()],
            });
        }
        let first = self.value(items[0]);
        let mut out: Option<Vec<f64>> = None;
        for (k, &item) in items.iter().enumerate() {
            let t = self.value(item);
            same_shape("weighted_sum", first, t)?;
            if w[k] == 0.0 {
                continue;
            }
            match &mut out {
                None => out = Some(t.data().iter().map(|x| w[k] * x).collect()),
                Some(acc) => {
                    for (a, x) in acc.iter_mut().zip(t.data()) {
                        *a += w[k] * x;
                    }
                }
            }
        }
        let out = out.unwrap_or_else(|| vec![0.0; first.len()]);
        let value = Tensor::new(first.shape().to_vec(), out)?;
        Ok(self.push(
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
            value,
        ))
    }

    /// Reverse sweep from a scalar `loss`. Parameter gradients are added into
    /// `grads`, so repeated calls accumulate.
    pub fn backward(&self, loss: Var, grads: &mut Gradients) -> Result<Backward> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut node_grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        node_grads[loss.0] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = node_grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            let out = node.value.as_ref();
            match &node.op {
                Op::Input => {}
                Op::Param(id) => grads.add_dense(*id, &g),
                Op::Row { param, row } => grads.add_row(*param, *row, &g),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                    let (da, db) = (ta.data(), tb.data());
                    {
                        let ga = acc(&mut node_grads, *a, m * k);
                        for r in 0..m {
                            for p in 0..k {
                                let mut s = 0.0;
                                for c in 0..n {
                                    s += g[r * n + c] * db[p * n + c];
                                }
                                ga[r * k + p] += s;
                            }
                        }
                    }
                    let gb = acc(&mut node_grads, *b, k * n);
                    for r in 0..m {
                        for p in 0..k {
                            let x = da[r * k + p];
                            for c in 0..n {
                                gb[p * n + c] += x * g[r * n + c];
                            }
                        }
                    }
                }
                Op::MatVec(a, x) => {
                    let (ta, tx) = (self.value(*a), self.value(*x));
                    let k = ta.shape()[1];
                    let xs = tx.data();
                    {
                        let ga = acc(&mut node_grads, *a, ta.len());
                        for (row, &gi) in ga.chunks_exact_mut(k).zip(&g) {
                            if gi == 0.0 {
                                continue;
                            }
                            for (w, &xv) in row.iter_mut().zip(xs) {
                                *w += gi * xv;
                            }
                        }
                    }
                    let gx = acc(&mut node_grads, *x, k);
                    for (row, &gi) in ta.data().chunks_exact(k).zip(&g) {
                        if gi == 0.0 {
                            continue;
                        }
                        for (s, &w) in gx.iter_mut().zip(row) {
                            *s += gi * w;
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        let ga = acc(&mut node_grads, v, g.len());
                        ga.iter_mut().zip(&g).for_each(|(s, x)| *s += x);
                    }
                }
                Op::Sub(a, b) => {
                    let ga = acc(&mut node_grads, *a, g.len());
                    ga.iter_mut().zip(&g).for_each(|(s, x)| *s += x);
                    let gb = acc(&mut node_grads, *b, g.len());
                    gb.iter_mut().zip(&g).for_each(|(s, x)| *s -= x);
                }
                Op::Mul(a, b) => {
                    let (da, db) = (self.data(*a), self.data(*b));
                    let ga = acc(&mut node_grads, *a, g.len());
                    for ((s, gi), y) in ga.iter_mut().zip(&g).zip(db) {
                        *s += gi * y;
                    }
                    let gb = acc(&mut node_grads, *b, g.len());
                    for ((s, gi), x) in gb.iter_mut().zip(&g).zip(da) {
                        *s += gi * x;
                    }
                }
                Op::Scale(x, f) => {
                    let gx = acc(&mut node_grads, *x, g.len());
                    gx.iter_mut().zip(&g).for_each(|(s, gi)| *s += gi * f);
                }
                Op::Neg(x) => {
                    let gx = acc(&mut node_grads, *x, g.len());
                    gx.iter_mut().zip(&g).for_each(|(s, gi)| *s -= gi);
                }
                Op::Sigmoid(x) => {
                    let y = out.expect("owned").data();
                    let gx = acc(&mut node_grads, *x, g.len());
                    for ((s, gi), yi) in gx.iter_mut().zip(&g).zip(y) {
                        *s += gi * yi * (1.0 - yi);
                    }
                }
                Op::Tanh(x) => {
                    let y = out.expect("owned").data();
                    let gx = acc(&mut node_grads, *x, g.len());
                    for ((s, gi), yi) in gx.iter_mut().zip(&g).zip(y) {
                        *s += gi * (1.0 - yi * yi);
                    }
                }
                Op::Relu(x) => {
                    let input = self.data(*x);
                    let gx = acc(&mut node_grads, *x, g.len());
                    for ((s, gi), xi) in gx.iter_mut().zip(&g).zip(input) {
                        if *xi > 0.0 {
                            *s += gi;
                        }
                    }
                }
                Op::Square(x) => {
                    let input = self.data(*x);
                    let gx = acc(&mut node_grads, *x, g.len());
                    for ((s, gi), xi) in gx.iter_mut().zip(&g).zip(input) {
                        *s += 2.0 * gi * xi;
                    }
                }
                Op::Sum(x) => {
                    let len = self.value(*x).len();
                    let gx = acc(&mut node_grads, *x, len);
                    gx.iter_mut().for_each(|s| *s += g[0]);
                }
                Op::Softmax(x) => {
                    let y = out.expect("owned").data();
                    let inner: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                    let gx = acc(&mut node_grads, *x, g.len());
                    for ((s, gi), yi) in gx.iter_mut().zip(&g).zip(y) {
                        *s += yi * (gi - inner);
                    }
                }
                Op::LogSoftmax { input, valid } => {
                    let y = out.expect("owned").data();
                    let keep = |j: usize| valid.as_ref().is_none_or(|m| m[j]);
                    let total: f64 = (0..g.len()).filter(|&j| keep(j)).map(|j| g[j]).sum();
                    let gx = acc(&mut node_grads, *input, g.len());
                    for j in 0..g.len() {
                        if keep(j) {
                            gx[j] += g[j] - y[j].exp() * total;
                        }
                    }
                }
                Op::StraightThrough(x) => {
                    let gx = acc(&mut node_grads, *x, g.len());
                    gx.iter_mut().zip(&g).for_each(|(s, gi)| *s += gi);
                }
                Op::Slice { input, start } => {
                    let len = self.value(*input).len();
                    let gx = acc(&mut node_grads, *input, len);
                    for (s, gi) in gx[*start..*start + g.len()].iter_mut().zip(&g) {
                        *s += gi;
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        let gp = acc(&mut node_grads, p, len);
                        for (s, gi) in gp.iter_mut().zip(&g[offset..offset + len]) {
                            *s += gi;
                        }
                        offset += len;
                    }
                }
                Op::Index { input, index } => {
                    let len = self.value(*input).len();
                    acc(&mut node_grads, *input, len)[*index] += g[0];
                }
                Op::Stack(scalars) => {
                    for (k, &s) in scalars.iter().enumerate() {
                        acc(&mut node_grads, s, 1)[0] += g[k];
                    }
                }
                Op::WeightedSum { weights, items } => {
                    let w = self.data(*weights).to_vec();
                    let mut gw = vec![0.0; items.len()];
                    for (k, &item) in items.iter().enumerate() {
                        let x = self.data(item);
                        gw[k] = g.iter().zip(x).map(|(a, b)| a * b).sum();
                        if w[k] != 0.0 {
                            let gx = acc(&mut node_grads, item, g.len());
                            for (s, gi) in gx.iter_mut().zip(&g) {
                                *s += w[k] * gi;
                            }
                        }
                    }
                    let gws = acc(&mut node_grads, *weights, items.len());
                    gws.iter_mut().zip(&gw).for_each(|(s, x)| *s += x);
                }
            }
            node_grads[i] = Some(g);
        }
        Ok(Backward { grads: node_grads })
    }
}
