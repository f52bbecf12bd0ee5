//! Layer specifications, initialization and parameter groups.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{GradientMap, Graph, Var};
use crate::error::{Error, Result};
use crate::kernels::Padding;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// One layer of a feed-forward stack. Shapes are per sample; the batch axis
/// is implicit.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        units: usize,
    },
    Conv2d {
        kernel: (usize, usize),
        c_in: usize,
        c_out: usize,
        padding: Padding,
    },
    MaxPool,
    Upsample,
    Relu,
    Sigmoid,
    Softmax,
    Grl,
    Flatten,
    Reshape(Vec<usize>),
}

impl LayerSpec {
    pub fn dense(inputs: usize, units: usize) -> Self {
        LayerSpec::Dense { inputs, units }
    }

    pub fn conv3x3(c_in: usize, c_out: usize) -> Self {
        LayerSpec::Conv2d {
            kernel: (3, 3),
            c_in,
            c_out,
            padding: Padding::Same,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool => "maxpool",
            LayerSpec::Upsample => "upsample",
            LayerSpec::Relu => "relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Softmax => "softmax",
            LayerSpec::Grl => "grl",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Reshape(_) => "reshape",
        }
    }

    /// Shapes of the trainable tensors, weight first then bias.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Dense { inputs, units } => vec![vec![inputs, units], vec![units]],
            LayerSpec::Conv2d {
                kernel: (kh, kw),
                c_in,
                c_out,
                ..
            } => vec![vec![kh, kw, c_in, c_out], vec![c_out]],
            _ => Vec::new(),
        }
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, .. } => inputs,
            LayerSpec::Conv2d {
                kernel: (kh, kw),
                c_in,
                ..
            } => kh * kw * c_in,
            _ => 0,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }

    /// Per-sample output shape, or an error naming the layer kind.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = || Error::shape(self.kind(), input, &self.expected_input());
        match self {
            LayerSpec::Dense { inputs, units } => {
                if input != [*inputs] {
                    return Err(bad());
                }
                Ok(vec![*units])
            }
            LayerSpec::Conv2d {
                kernel: (kh, kw),
                c_in,
                c_out,
                padding,
            } => {
                let [h, w, c] = *input else { return Err(bad()) };
                if c != *c_in {
                    return Err(bad());
                }
                match padding {
                    Padding::Same => Ok(vec![h, w, *c_out]),
                    Padding::Valid if h >= *kh && w >= *kw => {
                        Ok(vec![h - kh + 1, w - kw + 1, *c_out])
                    }
                    Padding::Valid => Err(bad()),
                }
            }
            LayerSpec::MaxPool => match *input {
                [h, w, c] if h >= 2 && w >= 2 => Ok(vec![h / 2, w / 2, c]),
                _ => Err(bad()),
            },
            LayerSpec::Upsample => match *input {
                [h, w, c] => Ok(vec![2 * h, 2 * w, c]),
                _ => Err(bad()),
            },
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Reshape(shape) => {
                if shape.iter().product::<usize>() != input.iter().product::<usize>() {
                    return Err(bad());
                }
                Ok(shape.clone())
            }
            LayerSpec::Relu | LayerSpec::Sigmoid | LayerSpec::Softmax | LayerSpec::Grl => {
                Ok(input.to_vec())
            }
        }
    }

    fn expected_input(&self) -> Vec<usize> {
        match self {
            LayerSpec::Dense { inputs, .. } => vec![*inputs],
            LayerSpec::Conv2d { c_in, .. } => vec![*c_in],
            LayerSpec::Reshape(s) => vec![s.iter().product()],
            _ => Vec::new(),
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Dense { inputs, units } => write!(f, "dense({inputs}->{units})"),
            LayerSpec::Conv2d {
                kernel: (kh, kw),
                c_in,
                c_out,
                padding,
            } => write!(f, "conv{kh}x{kw}x{c_in}x{c_out}({padding:?})"),
            LayerSpec::Reshape(s) => write!(f, "reshape({s:?})"),
            other => f.write_str(other.kind()),
        }
    }
}

/// Output shape of a whole stack for a per-sample input shape.
pub fn stack_output_shape(specs: &[LayerSpec], input: &[usize]) -> Result<Vec<usize>> {
    specs
        .iter()
        .enumerate()
        .try_fold(input.to_vec(), |shape, (index, layer)| {
            layer.output_shape(&shape).map_err(|e| Error::Layer {
                index,
                kind: layer.to_string(),
                source: Box::new(e),
            })
        })
}

pub fn stack_parameter_count(specs: &[LayerSpec]) -> usize {
    specs.iter().map(LayerSpec::parameter_count).sum()
}

/// Std of a standard normal truncated to [-2, 2].
const TRUNCATED_STD: f64 = 0.879_625_661_034_239_8;

/// He initialization: truncated normal (cut at two standard deviations of the
/// underlying normal) whose resulting std is `sqrt(2 / fan_in)`; biases zero.
pub fn init_stack<T: Real, R: Rng>(specs: &[LayerSpec], rng: &mut R) -> Vec<Tensor<T>> {
    let mut out = Vec::new();
    for layer in specs {
        let shapes = layer.param_shapes();
        if shapes.is_empty() {
            continue;
        }
        let std = (2.0 / layer.fan_in() as f64).sqrt() / TRUNCATED_STD;
        let normal = Normal::new(0.0, std).expect("finite positive std");
        let n: usize = shapes[0].iter().product();
        let weights: Vec<T> = (0..n)
            .map(|_| loop {
                let v: f64 = normal.sample(rng);
                if v.abs() <= 2.0 * std {
                    break T::lit(v);
                }
            })
            .collect();
        out.push(Tensor::new(&shapes[0], weights).expect("shape from spec"));
        out.push(Tensor::zeros(&shapes[1]));
    }
    out
}

/// Applies `specs` in order to a batched input. `params` holds the weight and
/// bias variables of the parametric layers, in layer order.
pub fn apply_stack<T: Real>(
    g: &mut Graph<T>,
    specs: &[LayerSpec],
    params: &[Var],
    input: Var,
) -> Result<Var> {
    let needed: usize = specs.iter().map(|l| l.param_shapes().len()).sum();
    if needed != params.len() {
        return Err(Error::invalid(format!(
            "stack needs {needed} parameter tensors, got {}",
            params.len()
        )));
    }
    let mut x = input;
    let mut next = 0;
    for (index, layer) in specs.iter().enumerate() {
        let wrap = |e: Error| Error::Layer {
            index,
            kind: layer.to_string(),
            source: Box::new(e),
        };
        let batch = g.shape(x)[0];
        let per_sample = &g.shape(x)[1..];
        layer.output_shape(per_sample).map_err(wrap)?;
        x = match layer {
            LayerSpec::Dense { .. } => {
                let (w, b) = (params[next], params[next + 1]);
                next += 2;
                let h = g.matmul(x, w).map_err(wrap)?;
                g.add_bias(h, b).map_err(wrap)?
            }
            LayerSpec::Conv2d { padding, .. } => {
                let (w, b) = (params[next], params[next + 1]);
                next += 2;
                let h = g.conv2d(x, w, *padding).map_err(wrap)?;
                g.add_bias(h, b).map_err(wrap)?
            }
            LayerSpec::MaxPool => g.maxpool2x2(x).map_err(wrap)?,
            LayerSpec::Upsample => g.upsample2x(x).map_err(wrap)?,
            LayerSpec::Relu => g.relu(x),
            LayerSpec::Sigmoid => g.sigmoid(x),
            LayerSpec::Softmax => g.softmax(x),
            LayerSpec::Grl => g.gradient_reversal(x),
            LayerSpec::Flatten => g.flatten(x).map_err(wrap)?,
            LayerSpec::Reshape(shape) => {
                let mut full = vec![batch];
                full.extend_from_slice(shape);
                g.reshape(x, &full).map_err(wrap)?
            }
        };
    }
    Ok(x)
}

/// Trainable parameter groups of a domain separation network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    /// Shared encoder (θ_c).
    Shared,
    /// Source private encoder (θ_p^s).
    PrivateSource,
    /// Target private encoder (θ_p^t).
    PrivateTarget,
    /// Shared decoder (θ_d).
    Decoder,
    /// Task head (θ_g).
    Task,
    /// Domain classifier (θ_z).
    Domain,
}

impl Group {
    pub const ALL: [Group; 6] = [
        Group::Shared,
        Group::PrivateSource,
        Group::PrivateTarget,
        Group::Decoder,
        Group::Task,
        Group::Domain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Group::Shared => "shared",
            Group::PrivateSource => "private_source",
            Group::PrivateTarget => "private_target",
            Group::Decoder => "decoder",
            Group::Task => "task",
            Group::Domain => "domain",
        }
    }

    pub fn from_name(name: &str) -> Option<Group> {
        Group::ALL.into_iter().find(|g| g.name() == name)
    }

    pub(crate) fn slot(self) -> usize {
        self as usize
    }
}

/// Disjoint parameter groups; each group is an ordered list of tensors.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParameterSet<T> {
    groups: [Vec<Tensor<T>>; 6],
}

/// Graph variables for every tensor of a [`ParameterSet`], same layout.
#[derive(Clone, Debug, Default)]
pub struct BoundParams {
    groups: [Vec<Var>; 6],
}

impl BoundParams {
    pub fn group(&self, g: Group) -> &[Var] {
        &self.groups[g.slot()]
    }

    pub fn set_group(&mut self, g: Group, vars: Vec<Var>) {
        self.groups[g.slot()] = vars;
    }
}

impl<T: Real> ParameterSet<T> {
    pub fn new() -> Self {
        ParameterSet {
            groups: Default::default(),
        }
    }

    pub fn group(&self, g: Group) -> &[Tensor<T>] {
        &self.groups[g.slot()]
    }

    pub fn group_mut(&mut self, g: Group) -> &mut Vec<Tensor<T>> {
        &mut self.groups[g.slot()]
    }

    pub fn set_group(&mut self, g: Group, tensors: Vec<Tensor<T>>) {
        self.groups[g.slot()] = tensors;
    }

    /// `(group, index, tensor)` in group order.
    pub fn iter(&self) -> impl Iterator<Item = (Group, usize, &Tensor<T>)> {
        Group::ALL.into_iter().flat_map(move |g| {
            self.groups[g.slot()]
                .iter()
                .enumerate()
                .map(move |(i, t)| (g, i, t))
        })
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (Group, usize, &mut Tensor<T>)> {
        self.groups
            .iter_mut()
            .zip(Group::ALL)
            .flat_map(|(ts, g)| ts.iter_mut().enumerate().map(move |(i, t)| (g, i, t)))
    }

    pub fn parameter_count(&self) -> usize {
        self.iter().map(|(_, _, t)| t.len()).sum()
    }

    pub fn tensor_count(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    /// Zero tensors with the same layout.
    pub fn zeros_like(&self) -> Self {
        let mut out = Self::new();
        for g in Group::ALL {
            out.groups[g.slot()] = self
                .group(g)
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect();
        }
        out
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        Group::ALL.into_iter().all(|g| {
            let (a, b) = (self.group(g), other.group(g));
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.shape() == y.shape())
        })
    }

    /// Registers every tensor as a parameter leaf of `g`.
    pub fn bind(&self, g: &mut Graph<T>) -> BoundParams {
        let mut bound = BoundParams::default();
        for grp in Group::ALL {
            bound.groups[grp.slot()] = self
                .group(grp)
                .iter()
                .map(|t| g.parameter(t.clone()))
                .collect();
        }
        bound
    }

    /// Collects per-parameter gradients into the same layout.
    pub fn gradients(bound: &BoundParams, grads: &mut GradientMap<T>) -> Self {
        let mut out = Self::new();
        for g in Group::ALL {
            out.groups[g.slot()] = bound
                .group(g)
                .iter()
                .map(|&v| grads.take(v).expect("bound variables are parameters"))
                .collect();
        }
        out
    }

    /// Flat names like `shared.0`, matching [`ParameterSet::iter`] order.
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        self.iter()
            .map(|(g, i, t)| (format!("{}.{i}", g.name()), t))
            .collect()
    }

    pub fn from_named(records: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut out = Self::new();
        for (name, t) in records {
            let (g, i) = name
                .split_once('.')
                .and_then(|(g, i)| Some((Group::from_name(g)?, i.parse::<usize>().ok()?)))
                .ok_or_else(|| Error::Checkpoint(format!("bad parameter name `{name}`")))?;
            let slot = &mut out.groups[g.slot()];
            if slot.len() != i {
                return Err(Error::Checkpoint(format!("parameter `{name}` out of order")));
            }
            slot.push(t);
        }
        Ok(out)
    }
}
