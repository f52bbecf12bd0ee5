//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every primitive applied to its variables together with
//! whatever the backward pass needs. Nodes are appended in evaluation order,
//! so the node list is always topologically sorted and backward is a single
//! reverse sweep. A graph supports exactly one backward pass; build a new one
//! for the next step.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeometry, Padding};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddBias(Var, Var),
    MulRows(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    SumAxis { x: Var, outer: usize, axis: usize, inner: usize },
    Square(Var),
    Sqrt(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Powf(Var, T),
    Relu(Var),
    Sigmoid(Var),
    ClampMin(Var, T),
    Reshape(Var),
    Concat { parts: Vec<Var>, outer: usize, inner: usize },
    SliceRows { x: Var, start: usize },
    Conv2d { x: Var, kernel: Var, geometry: ConvGeometry, cols: Vec<T> },
    MaxPool { x: Var, argmax: Vec<usize> },
    Upsample(Var),
    Softmax(Var),
    PairwiseSqDist(Var, Var),
    Grl(Var),
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => Vec::new(),
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | AddBias(a, b) | MulRows(a, b)
            | MatMul(a, b) | PairwiseSqDist(a, b) => vec![*a, *b],
            Scale(x, _) | Powf(x, _) | ClampMin(x, _) => vec![*x],
            AddScalar(x) | Transpose(x) | Sum(x) | Mean(x) | Square(x) | Sqrt(x) | Exp(x)
            | Log(x) | Abs(x) | Relu(x) | Sigmoid(x) | Reshape(x) | Upsample(x) | Softmax(x)
            | Grl(x) => vec![*x],
            SumAxis { x, .. } | SliceRows { x, .. } | MaxPool { x, .. } => vec![*x],
            Conv2d { x, kernel, .. } => vec![*x, *kernel],
            Concat { parts, .. } => parts.clone(),
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    parameter: bool,
    /// Whether a parameter is upstream, so gradients are worth computing.
    tracked: bool,
}

/// Gradients of a scalar loss with respect to every parameter leaf.
#[derive(Clone, Debug)]
pub struct GradientMap<T> {
    grads: BTreeMap<Var, Tensor<T>>,
}

impl<T: Real> GradientMap<T> {
    /// Gradient for a parameter leaf. Panics if `v` is not a parameter of the
    /// graph that produced this map.
    pub fn get(&self, v: Var) -> &Tensor<T> {
        self.grads
            .get(&v)
            .unwrap_or_else(|| panic!("{v:?} is not a parameter leaf"))
    }

    pub fn try_get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(&v)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor<T>)> {
        self.grads.iter().map(|(v, t)| (*v, t))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.remove(&v)
    }
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::shape(op, a, b))
    }
}

fn zip_map<T: Real>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let tracked = op.inputs().iter().any(|v| self.nodes[v.0].tracked);
        self.nodes.push(Node {
            value,
            op,
            parameter: false,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(x).map(f);
        self.push(value, op)
    }

    /// Trainable leaf; receives an entry in the [`GradientMap`].
    pub fn parameter(&mut self, value: Tensor<T>) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].parameter = true;
        self.nodes[v.0].tracked = true;
        v
    }

    /// Non-trainable leaf (inputs, labels, fixed masks).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.shape(a), self.shape(b))?;
        let data = zip_map(self.data(a), self.data(b), |x, y| x + y);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.shape(a), self.shape(b))?;
        let data = zip_map(self.data(a), self.data(b), |x, y| x - y);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.shape(a), self.shape(b))?;
        let data = zip_map(self.data(a), self.data(b), |x, y| x * y);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("div", self.shape(a), self.shape(b))?;
        let data = zip_map(self.data(a), self.data(b), |x, y| x / y);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Div(a, b)))
    }

    /// Adds `bias` (shape `[c]`) along the trailing axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x);
        let bs = self.shape(bias);
        if bs.len() != 1 || xs[xs.len() - 1] != bs[0] {
            return Err(Error::shape("add_bias", xs, bs));
        }
        let c = bs[0];
        let b = self.data(bias);
        let data: Vec<T> = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[i % c])
            .collect();
        let shape = xs.to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::AddBias(x, bias)))
    }

    /// Multiplies each leading-axis row of `x` by the matching entry of `s`
    /// (shape `[n]` or `[n, 1]`).
    pub fn mul_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let xs = self.shape(x);
        let ss = self.shape(s);
        let n = xs[0];
        if self.value(s).len() != n || ss[0] != n {
            return Err(Error::shape("mul_rows", xs, ss));
        }
        let w = self.value(x).row_len();
        let sv = self.data(s);
        let data: Vec<T> = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v * sv[i / w])
            .collect();
        let shape = xs.to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::MulRows(x, s)))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -T::one())
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.data(a),
            (k, 1),
            self.data(b),
            (n, 1),
            T::zero(),
            &mut out,
            (n, 1),
        );
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::shape("transpose", s, &[]));
        }
        let (r, c) = (s[0], s[1]);
        let d = self.data(x);
        let mut out = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                out.push(d[i * c + j]);
            }
        }
        Ok(self.push(Tensor::from_parts(vec![c, r], out), Op::Transpose(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.data(x).iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::from_usize(self.value(x).len()).unwrap();
        let s: T = self.data(x).iter().copied().sum();
        self.push(Tensor::scalar(s / n), Op::Mean(x))
    }

    /// Sums over `axis`, removing it. A rank-1 input yields shape `[1]`.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::shape("sum_axis", &s, &[axis]));
        }
        let outer: usize = s[..axis].iter().product();
        let len = s[axis];
        let inner: usize = s[axis + 1..].iter().product();
        let d = self.data(x);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let src = &d[(o * len + a) * inner..(o * len + a + 1) * inner];
                for (dst, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *dst += v;
                }
            }
        }
        let mut shape: Vec<usize> = s[..axis].iter().chain(&s[axis + 1..]).copied().collect();
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::SumAxis {
                x,
                outer,
                axis: len,
                inner,
            },
        ))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let len = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| Error::shape("mean_axis", self.shape(x), &[axis]))?;
        let s = self.sum_axis(x, axis)?;
        Ok(self.scale(s, T::one() / T::from_usize(len).unwrap()))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.sqrt(), Op::Sqrt(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.ln(), Op::Log(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.abs(), Op::Abs(x))
    }

    pub fn powf(&mut self, x: Var, p: T) -> Var {
        self.unary(x, |v| v.powf(p), Op::Powf(x, p))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, stable_sigmoid, Op::Sigmoid(x))
    }

    /// `max(x, floor)`; gradient flows only where `x > floor`.
    pub fn clamp_min(&mut self, x: Var, floor: T) -> Var {
        self.unary(x, |v| if v > floor { v } else { floor }, Op::ClampMin(x, floor))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    /// Flattens everything but the leading axis.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let shape = [t.rows(), t.row_len()];
        self.reshape(x, &shape)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", &base, &[axis]));
        }
        for &p in &parts[1..] {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let total_axis: usize = parts.iter().map(|&p| self.shape(p)[axis]).sum();
        let mut out = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for &p in parts {
                let w = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.data(p)[o * w..(o + 1) * w]);
            }
        }
        let mut shape = base;
        shape[axis] = total_axis;
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Concat {
                parts: parts.to_vec(),
                outer,
                inner,
            },
        ))
    }

    /// Leading-axis slice `[start, end)`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x).slice_rows(start, end)?;
        Ok(self.push(t, Op::SliceRows { x, start }))
    }

    /// Stride-1 cross-correlation of NHWC `x` with a `[kh, kw, c_in, c_out]`
    /// kernel.
    pub fn conv2d(&mut self, x: Var, kernel: Var, padding: Padding) -> Result<Var> {
        let (xs, ks) = (self.shape(x), self.shape(kernel));
        let geometry = ConvGeometry::new(xs, ks, padding)
            .ok_or_else(|| Error::shape("conv2d", xs, ks))?;
        let (out, cols) = kernels::conv2d_forward(self.data(x), self.data(kernel), &geometry);
        Ok(self.push(
            Tensor::from_parts(geometry.output_shape(), out),
            Op::Conv2d {
                x,
                kernel,
                geometry,
                cols,
            },
        ))
    }

    /// 2x2 max pooling with stride 2 over NHWC.
    pub fn maxpool2x2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || s[1] < 2 || s[2] < 2 {
            return Err(Error::shape("maxpool2x2", &s, &[2, 2]));
        }
        let (out, argmax) = kernels::maxpool2x2_forward(self.data(x), &s);
        let shape = vec![s[0], s[1] / 2, s[2] / 2, s[3]];
        Ok(self.push(Tensor::from_parts(shape, out), Op::MaxPool { x, argmax }))
    }

    /// Nearest-neighbour 2x upsampling over NHWC.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::shape("upsample2x", &s, &[4]));
        }
        let out = kernels::upsample2x_forward(self.data(x), &s);
        let shape = vec![s[0], s[1] * 2, s[2] * 2, s[3]];
        Ok(self.push(Tensor::from_parts(shape, out), Op::Upsample(x)))
    }

    /// Softmax over the trailing axis, computed with the log-sum-exp shift.
    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let c = t.shape()[t.rank() - 1];
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(c) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        let shape = t.shape().to_vec();
        self.push(Tensor::from_parts(shape, out), Op::Softmax(x))
    }

    /// Squared Euclidean distances between the rows of `a` (`n x d`) and the
    /// rows of `b` (`m x d`), giving `n x m`.
    pub fn pairwise_sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::shape("pairwise_sq_dist", sa, sb));
        }
        let (n, m, d) = (sa[0], sb[0], sa[1]);
        let (da, db) = (self.data(a), self.data(b));
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let ra = &da[i * d..(i + 1) * d];
            for j in 0..m {
                let rb = &db[j * d..(j + 1) * d];
                out.push(ra.iter().zip(rb).map(|(&x, &y)| (x - y) * (x - y)).sum());
            }
        }
        Ok(self.push(Tensor::from_parts(vec![n, m], out), Op::PairwiseSqDist(a, b)))
    }

    /// Gradient reversal: identity forward, negated gradient backward.
    pub fn gradient_reversal(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.push(value, Op::Grl(x))
    }

    /// Reverse sweep from a scalar `loss`. Every parameter leaf of the graph
    /// gets an entry; leaves the loss does not reach get zeros.
    pub fn backward(&mut self, loss: Var) -> Result<GradientMap<T>> {
        if self.consumed {
            return Err(Error::Graph(
                "backward already ran on this graph; rebuild the forward pass".into(),
            ));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::Graph(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].parameter {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, g, &mut grads);
        }

        let mut out = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.parameter {
                continue;
            }
            let shape = node.value.shape().to_vec();
            let data = grads
                .get_mut(i)
                .and_then(Option::take)
                .unwrap_or_else(|| vec![T::zero(); node.value.len()]);
            out.insert(Var(i), Tensor::from_parts(shape, data));
        }
        Ok(GradientMap { grads: out })
    }

    fn propagate(&self, i: usize, g: Vec<T>, grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(grads, *b, &g);
                accumulate_owned(grads, *a, g);
            }
            Op::Sub(a, b) => {
                let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                accumulate(grads, *b, &neg);
                accumulate_owned(grads, *a, g);
            }
            Op::Mul(a, b) => {
                let ga = zip_map(&g, val(*b), |gv, bv| gv * bv);
                let gb = zip_map(&g, val(*a), |gv, av| gv * av);
                accumulate_owned(grads, *a, ga);
                accumulate_owned(grads, *b, gb);
            }
            Op::Div(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let ga = zip_map(&g, bv, |gv, d| gv / d);
                let gb: Vec<T> = (0..g.len()).map(|k| -g[k] * av[k] / (bv[k] * bv[k])).collect();
                accumulate_owned(grads, *a, ga);
                accumulate_owned(grads, *b, gb);
            }
            Op::AddBias(x, b) => {
                let c = self.nodes[b.0].value.len();
                let mut gb = vec![T::zero(); c];
                for (k, &gv) in g.iter().enumerate() {
                    gb[k % c] += gv;
                }
                accumulate_owned(grads, *b, gb);
                accumulate_owned(grads, *x, g);
            }
            Op::MulRows(x, s) => {
                let xt = &self.nodes[x.0].value;
                let w = xt.row_len();
                let (xv, sv) = (xt.data(), val(*s));
                let mut gs = vec![T::zero(); sv.len()];
                let mut gx = vec![T::zero(); g.len()];
                for k in 0..g.len() {
                    gx[k] = g[k] * sv[k / w];
                    gs[k / w] += g[k] * xv[k];
                }
                accumulate_owned(grads, *s, gs);
                accumulate_owned(grads, *x, gx);
            }
            Op::Scale(x, c) => {
                let c = *c;
                accumulate_owned(grads, *x, g.into_iter().map(|v| v * c).collect());
            }
            Op::AddScalar(x) | Op::Reshape(x) => accumulate_owned(grads, *x, g),
            Op::Grl(x) => accumulate_owned(grads, *x, g.into_iter().map(|v| -v).collect()),
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                // dA = dC · Bᵀ
                if self.nodes[a.0].tracked {
                    let mut ga = vec![T::zero(); m * k];
                    T::gemm(m, n, k, T::one(), &g, (n, 1), val(*b), (1, n), T::zero(), &mut ga, (k, 1));
                    accumulate_owned(grads, *a, ga);
                }
                // dB = Aᵀ · dC
                if self.nodes[b.0].tracked {
                    let mut gb = vec![T::zero(); k * n];
                    T::gemm(k, m, n, T::one(), val(*a), (1, k), &g, (n, 1), T::zero(), &mut gb, (n, 1));
                    accumulate_owned(grads, *b, gb);
                }
            }
            Op::Transpose(x) => {
                let s = self.nodes[x.0].value.shape();
                let (r, c) = (s[0], s[1]);
                // g has shape [c, r]
                let mut gx = vec![T::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] = g[j * r + i];
                    }
                }
                accumulate_owned(grads, *x, gx);
            }
            Op::Sum(x) => {
                let n = self.nodes[x.0].value.len();
                accumulate_owned(grads, *x, vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.len();
                let v = g[0] / T::from_usize(n).unwrap();
                accumulate_owned(grads, *x, vec![v; n]);
            }
            Op::SumAxis {
                x,
                outer,
                axis,
                inner,
            } => {
                let (outer, len, inner) = (*outer, *axis, *inner);
                let mut gx = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    for _ in 0..len {
                        gx.extend_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                accumulate_owned(grads, *x, gx);
            }
            Op::Square(x) => {
                let gx = zip_map(&g, val(*x), |gv, xv| gv * (xv + xv));
                accumulate_owned(grads, *x, gx);
            }
            Op::Sqrt(x) => {
                let half = T::lit(0.5);
                let gx = zip_map(&g, y, |gv, yv| if gv == T::zero() { gv } else { gv * half / yv });
                accumulate_owned(grads, *x, gx);
            }
            Op::Exp(x) => {
                let gx = zip_map(&g, y, |gv, yv| gv * yv);
                accumulate_owned(grads, *x, gx);
            }
            Op::Log(x) => {
                let gx = zip_map(&g, val(*x), |gv, xv| gv / xv);
                accumulate_owned(grads, *x, gx);
            }
            Op::Abs(x) => {
                let gx = zip_map(&g, val(*x), |gv, xv| {
                    if xv > T::zero() {
                        gv
                    } else if xv < T::zero() {
                        -gv
                    } else {
                        T::zero()
                    }
                });
                accumulate_owned(grads, *x, gx);
            }
            Op::Powf(x, p) => {
                let p = *p;
                let gx = zip_map(&g, val(*x), |gv, xv| gv * p * xv.powf(p - T::one()));
                accumulate_owned(grads, *x, gx);
            }
            Op::Relu(x) => {
                let gx = zip_map(&g, val(*x), |gv, xv| if xv > T::zero() { gv } else { T::zero() });
                accumulate_owned(grads, *x, gx);
            }
            Op::Sigmoid(x) => {
                let gx = zip_map(&g, y, |gv, yv| gv * yv * (T::one() - yv));
                accumulate_owned(grads, *x, gx);
            }
            Op::ClampMin(x, floor) => {
                let floor = *floor;
                let gx = zip_map(&g, val(*x), |gv, xv| if xv > floor { gv } else { T::zero() });
                accumulate_owned(grads, *x, gx);
            }
            Op::Concat {
                parts,
                outer,
                inner,
            } => {
                let total: usize = node.value.shape().iter().product::<usize>() / outer;
                let mut offset = 0;
                for &p in parts {
                    let w = self.nodes[p.0].value.len() / outer;
                    let mut gp = Vec::with_capacity(w * outer);
                    for o in 0..*outer {
                        gp.extend_from_slice(&g[o * total + offset..o * total + offset + w]);
                    }
                    offset += w;
                    accumulate_owned(grads, p, gp);
                }
                debug_assert_eq!(offset, total);
                let _ = inner;
            }
            Op::SliceRows { x, start } => {
                let xt = &self.nodes[x.0].value;
                let w = xt.row_len();
                let mut gx = vec![T::zero(); xt.len()];
                gx[start * w..start * w + g.len()].copy_from_slice(&g);
                accumulate_owned(grads, *x, gx);
            }
            Op::Conv2d {
                x,
                kernel,
                geometry,
                cols,
            } => {
                let need_x = self.nodes[x.0].tracked;
                let (gx, gk) = kernels::conv2d_backward(&g, cols, val(*kernel), geometry, need_x);
                if let Some(gx) = gx {
                    accumulate_owned(grads, *x, gx);
                }
                accumulate_owned(grads, *kernel, gk);
            }
            Op::MaxPool { x, argmax } => {
                let mut gx = vec![T::zero(); self.nodes[x.0].value.len()];
                for (&src, &gv) in argmax.iter().zip(&g) {
                    gx[src] += gv;
                }
                accumulate_owned(grads, *x, gx);
            }
            Op::Upsample(x) => {
                let gx = kernels::upsample2x_backward(&g, self.nodes[x.0].value.shape());
                accumulate_owned(grads, *x, gx);
            }
            Op::Softmax(x) => {
                let c = node.value.shape()[node.value.rank() - 1];
                let mut gx = vec![T::zero(); g.len()];
                for ((gr, yr), out) in g.chunks(c).zip(y.chunks(c)).zip(gx.chunks_mut(c)) {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for k in 0..c {
                        out[k] = yr[k] * (gr[k] - dot);
                    }
                }
                accumulate_owned(grads, *x, gx);
            }
            Op::PairwiseSqDist(a, b) => {
                let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
                let (n, m, d) = (sa[0], sb[0], sa[1]);
                let (da, db) = (val(*a), val(*b));
                let mut ga = vec![T::zero(); n * d];
                let mut gb = vec![T::zero(); m * d];
                let two = T::lit(2.0);
                for i in 0..n {
                    for j in 0..m {
                        let gij = g[i * m + j] * two;
                        if gij == T::zero() {
                            continue;
                        }
                        for k in 0..d {
                            let diff = gij * (da[i * d + k] - db[j * d + k]);
                            ga[i * d + k] += diff;
                            gb[j * d + k] -= diff;
                        }
                    }
                }
                accumulate_owned(grads, *a, ga);
                accumulate_owned(grads, *b, gb);
            }
        }
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, g: &[T]) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn accumulate_owned<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

fn stable_sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let eye = g.constant(t(&[2, 2], &[1., 0., 0., 1.]));
        let b = g.constant(t(&[2, 2], &[5., 6., 7., 8.]));
        let p = g.matmul(a, eye).unwrap();
        assert_eq!(g.value(p).data(), &[1., 2., 3., 4.]);
        let q = g.matmul(a, b).unwrap();
        assert_eq!(g.value(q).data(), &[19., 22., 43., 50.]);
    }

    #[test]
    fn maxpool_example() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 2, 2, 1], &[1., 2., 3., 4.]));
        let y = g.maxpool2x2(x).unwrap();
        assert_eq!(g.value(y).data(), &[4.]);
        assert_eq!(g.shape(y), &[1, 1, 1, 1]);
    }

    #[test]
    fn shape_errors_name_primitive_and_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 2]));
        let msg = g.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
        let msg = g.add(a, b).unwrap_err().to_string();
        assert!(msg.starts_with("add"), "{msg}");
    }

    #[test]
    fn grl_examples() {
        let mut g = Graph::<f64>::new();
        let u = g.parameter(t(&[1], &[3.0]));
        let r = g.gradient_reversal(u);
        assert_eq!(g.value(r).data(), &[3.0]);
        let sq = g.square(r);
        let l = g.sum(sq);
        assert_eq!(g.backward(l).unwrap().get(u).data(), &[-6.0]);

        let mut g = Graph::<f64>::new();
        let u = g.parameter(t(&[1], &[3.0]));
        let c = g.constant(t(&[1], &[5.0]));
        let r = g.gradient_reversal(u);
        let m = g.mul(r, c).unwrap();
        let l = g.sum(m);
        assert_eq!(g.backward(l).unwrap().get(u).data(), &[-5.0]);
    }

    #[test]
    fn backward_examples() {
        let mut g = Graph::<f64>::new();
        let x = g.parameter(t(&[3], &[1., 2., 3.]));
        let sq = g.square(x);
        let l = g.sum(sq);
        assert_eq!(g.backward(l).unwrap().get(x).data(), &[2., 4., 6.]);

        let mut g = Graph::<f64>::new();
        let x = g.parameter(Tensor::full(&[2, 3, 4], 0.7));
        let l = g.sum(x);
        assert_eq!(g.backward(l).unwrap().get(x), &Tensor::ones(&[2, 3, 4]));

        let mut g = Graph::<f64>::new();
        let x = g.parameter(t(&[3], &[-1., 2., 0.]));
        let r = g.relu(x);
        let l = g.sum(r);
        assert_eq!(g.backward(l).unwrap().get(x).data(), &[0., 1., 0.]);
    }

    #[test]
    fn reused_leaf_accumulates() {
        let mut g = Graph::<f64>::new();
        let x = g.parameter(t(&[2], &[1.5, -2.0]));
        let p = g.mul(x, x).unwrap();
        let s = g.add(p, x).unwrap();
        let l = g.sum(s);
        assert_eq!(g.backward(l).unwrap().get(x).data(), &[4.0, -3.0]);
    }

    #[test]
    fn untouched_parameters_get_zeros() {
        let mut g = Graph::<f64>::new();
        let x = g.parameter(t(&[2], &[1., 2.]));
        let unused = g.parameter(Tensor::ones(&[3, 2]));
        let l = g.sum(x);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(unused), &Tensor::zeros(&[3, 2]));
        assert_eq!(grads.len(), 2);
    }

    #[test]
    fn second_backward_is_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.parameter(t(&[2], &[1., 2.]));
        let l = g.sum(x);
        g.backward(l).unwrap();
        assert!(matches!(g.backward(l), Err(Error::Graph(_))));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.parameter(t(&[2], &[1., 2.]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[2, 3], &[1000., 999., 998., -1e3, -1e3, -1e3]));
        let y = g.softmax(x);
        for row in g.value(y).data().chunks(3) {
            assert!(row.iter().all(|&p| p > 0.0 && p.is_finite()));
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn concat_and_slice_roundtrip() {
        let mut g = Graph::<f64>::new();
        let a = g.parameter(t(&[1, 2], &[1., 2.]));
        let b = g.parameter(t(&[2, 2], &[3., 4., 5., 6.]));
        let c = g.concat(&[a, b], 0).unwrap();
        assert_eq!(g.value(c).data(), &[1., 2., 3., 4., 5., 6.]);
        let d = g.concat(&[b, b], 1).unwrap();
        assert_eq!(g.value(d).data(), &[3., 4., 3., 4., 5., 6., 5., 6.]);
        let s = g.slice_rows(c, 1, 3).unwrap();
        let l = g.sum(s);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(a).data(), &[0., 0.]);
        assert_eq!(grads.get(b).data(), &[1., 1., 1., 1.]);
    }

    #[test]
    fn generic_over_f32() {
        let mut g = Graph::<f32>::new();
        let x = g.parameter(Tensor::from_f64(&[2], &[1.0, -3.0]).unwrap());
        let sq = g.square(x);
        let l = g.sum(sq);
        assert_eq!(g.backward(l).unwrap().get(x).data(), &[2.0f32, -6.0]);
    }
}
