//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] is built fresh for every forward pass. Each op evaluates eagerly,
//! appends a node recording its inputs, and [`Tape::backward`] walks the nodes
//! in reverse, accumulating vector-Jacobian products. Parameters are bound into
//! a tape with [`Tape::param`] and their gradients are copied back with
//! [`crate::params::ParamStore::accumulate_grads`].

mod conv;
mod deform;
pub(crate) mod gemm;
mod loss_ops;
mod norm;

pub use norm::BatchStats;

use std::collections::HashMap;

pub use deform::{bilinear_sample, bilinear_sample_grad};

use crate::error::{Error, Result};
use crate::params::ParamId;
use crate::pooling::directional::{pool_plane_tracked, Direction};
use crate::tensor::{Shape, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CombineMode {
    Sum,
    ConcatChannels,
}

pub(crate) enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    },
    TransposeConv2d {
        input: Var,
        kernel: Var,
        stride: usize,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ChannelAffine {
        input: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Concat(Var, Var),
    Scale(Var, f64),
    Pool {
        input: Var,
        src: Vec<u32>,
    },
    DeformConv {
        input: Var,
        offsets: Var,
        kernel: Var,
        bias: Option<Var>,
    },
    Sum(Var),
    WeightedSum(Var, Vec<f64>),
    FocalLoss {
        pred: Var,
        dpred: Vec<f64>,
    },
    SmoothL1 {
        pred: Var,
        dpred: Vec<f64>,
    },
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op,
}

#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    params: HashMap<ParamId, Var>,
    track_branches: bool,
    signature: u64,
    pool_scans: usize,
}

#[inline]
fn mix(h: u64, v: u64) -> u64 {
    let mut z = h ^ v.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape that hashes every discrete branch decision (ReLU masks, max
    /// routes, sampling cells, loss branches) into [`Tape::branch_signature`].
    pub fn with_branch_tracking() -> Self {
        Tape {
            track_branches: true,
            ..Self::default()
        }
    }

    pub fn branch_signature(&self) -> u64 {
        self.signature
    }

    pub(crate) fn tracking(&self) -> bool {
        self.track_branches
    }

    pub(crate) fn note_branches(&mut self, bits: impl IntoIterator<Item = u64>) {
        if self.track_branches {
            let mut h = self.signature;
            for b in bits {
                h = mix(h, b);
            }
            self.signature = h;
        }
    }

    /// Number of directional max-scans recorded so far.
    pub fn pool_scans(&self) -> usize {
        self.pool_scans
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite value produced");
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Binds a stored parameter as a gradient-tracked leaf, once per tape.
    pub fn param(&mut self, id: ParamId, value: &Tensor) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.leaf(value.clone(), true);
        self.params.insert(id, v);
        v
    }

    /// Makes later `param(id, ..)` lookups resolve to `var`, e.g. to
    /// differentiate a model with respect to one of its parameters.
    pub fn bind_param_var(&mut self, id: ParamId, var: Var) {
        self.params.insert(id, var);
    }

    pub(crate) fn bound_params(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.params.iter().map(|(&p, &v)| (p, v))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub(crate) fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of the last `backward` target w.r.t. `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn grad_tensor(&self, v: Var) -> Tensor {
        let shape = self.shape(v);
        match self.grad(v) {
            Some(g) => Tensor::from_vec(shape, g.to_vec()).expect("grad shape"),
            None => Tensor::zeros(shape),
        }
    }

    /// Clears accumulated gradients, keeping the graph.
    pub fn zero_grad(&mut self) {
        self.grads.clear();
    }

    // ---- elementwise and structural ops ----

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let xv = self.value(x);
        let rg = self.rg(x);
        match kind {
            Activation::Relu => {
                let out = xv.map(|v| v.max(0.0));
                if self.track_branches {
                    let bits: Vec<u64> = xv.data().iter().map(|&v| (v > 0.0) as u64).collect();
                    self.note_branches(bits);
                }
                self.push(out, Op::Relu(x), rg)
            }
            Activation::Sigmoid => {
                let out = xv.map(sigmoid);
                self.push(out, Op::Sigmoid(x), rg)
            }
        }
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn combine(&mut self, a: Var, b: Var, mode: CombineMode) -> Result<Var> {
        match mode {
            CombineMode::Sum => self.add(a, b),
            CombineMode::ConcatChannels => self.concat(a, b),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.n() != sb.n() || sa.h() != sb.h() || sa.w() != sb.w() {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                lhs: sa,
                rhs: sb,
            });
        }
        let shape = sa.with_c(sa.c() + sb.c());
        let (ca, cb) = (sa.c() * sa.plane(), sb.c() * sb.plane());
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..sa.n() {
            data.extend_from_slice(&self.value(a).data()[n * ca..(n + 1) * ca]);
            data.extend_from_slice(&self.value(b).data()[n * cb..(n + 1) * cb]);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_vec(shape, data)?, Op::Concat(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).map(|v| v * factor);
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, factor), rg)
    }

    /// Sum of all elements as a `[1,1,1,1]` scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// `sum(w * x)` for a fixed weight vector.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<f64>) -> Result<Var> {
        if weights.len() != self.value(x).numel() {
            return Err(Error::invalid("weighted_sum: weight length mismatch"));
        }
        let s = self
            .value(x)
            .data()
            .iter()
            .zip(&weights)
            .map(|(a, b)| a * b)
            .sum();
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum(x, weights), rg))
    }

    /// One directional max-scan; see [`crate::pooling::directional`].
    pub fn directional_pool(&mut self, x: Var, dir: Direction) -> Var {
        let xv = self.value(x);
        let s = xv.shape();
        let mut out = Tensor::zeros(s);
        let mut src = vec![0u32; s.numel()];
        let p = s.plane();
        if p > 0 {
            for ((inp, o), sr) in xv
                .data()
                .chunks(p)
                .zip(out.data_mut().chunks_mut(p))
                .zip(src.chunks_mut(p))
            {
                pool_plane_tracked(inp, s.h(), s.w(), dir, o, sr);
            }
        }
        if self.track_branches {
            let bits: Vec<u64> = src.iter().map(|&v| v as u64).collect();
            self.note_branches(bits);
        }
        self.pool_scans += 1;
        let rg = self.rg(x);
        self.push(out, Op::Pool { input: x, src }, rg)
    }

    // ---- backward ----

    /// Reverse-mode pass from a scalar `loss`. Gradients accumulate across
    /// calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        if self.grads.len() < grads.len() {
            self.grads.resize_with(grads.len(), || None);
        }
        for (acc, g) in self.grads.iter_mut().zip(grads) {
            if let Some(g) = g {
                match acc {
                    Some(a) => a.iter_mut().zip(&g).for_each(|(x, y)| *x += y),
                    None => *acc = Some(g),
                }
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let d: Vec<f64> = g
                    .iter()
                    .zip(xv)
                    .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                self.acc(*x, d, grads);
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                let d: Vec<f64> = g.iter().zip(y).map(|(&g, &y)| g * y * (1.0 - y)).collect();
                self.acc(*x, d, grads);
            }
            Op::Add(a, b) => {
                self.acc_slice(*a, g, grads);
                self.acc_slice(*b, g, grads);
            }
            Op::Concat(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (ca, cb) = (sa.c() * sa.plane(), sb.c() * sb.plane());
                let mut ga = Vec::with_capacity(sa.numel());
                let mut gb = Vec::with_capacity(sb.numel());
                for n in 0..sa.n() {
                    let base = n * (ca + cb);
                    ga.extend_from_slice(&g[base..base + ca]);
                    gb.extend_from_slice(&g[base + ca..base + ca + cb]);
                }
                self.acc(*a, ga, grads);
                self.acc(*b, gb, grads);
            }
            Op::Scale(x, f) => {
                let d = g.iter().map(|v| v * f).collect();
                self.acc(*x, d, grads);
            }
            Op::Sum(x) => {
                let d = vec![g[0]; self.value(*x).numel()];
                self.acc(*x, d, grads);
            }
            Op::WeightedSum(x, w) => {
                let d = w.iter().map(|v| v * g[0]).collect();
                self.acc(*x, d, grads);
            }
            Op::Pool { input, src } => {
                let p = node.value.shape().plane();
                let mut d = vec![0.0; g.len()];
                for (k, (gc, sc)) in g.chunks(p).zip(src.chunks(p)).enumerate() {
                    let dc = &mut d[k * p..(k + 1) * p];
                    for (&gv, &s) in gc.iter().zip(sc) {
                        dc[s as usize] += gv;
                    }
                }
                self.acc(*input, d, grads);
            }
            Op::FocalLoss { pred, dpred } | Op::SmoothL1 { pred, dpred } => {
                let d = dpred.iter().map(|v| v * g[0]).collect();
                self.acc(*pred, d, grads);
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            } => self.conv2d_backward(*input, *kernel, *bias, *stride, *padding, g, grads),
            Op::TransposeConv2d {
                input,
                kernel,
                stride,
            } => self.transpose_conv2d_backward(*input, *kernel, *stride, g, grads),
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            } => self.batch_norm_backward(*input, *gamma, *beta, xhat, inv_std, g, grads),
            Op::ChannelAffine {
                input,
                gamma,
                beta,
                mean,
                inv_std,
            } => self.channel_affine_backward(*input, *gamma, *beta, mean, inv_std, g, grads),
            Op::DeformConv {
                input,
                offsets,
                kernel,
                bias,
            } => self.deform_conv_backward(*input, *offsets, *kernel, *bias, g, grads),
        }
    }

    pub(crate) fn acc(&self, v: Var, d: Vec<f64>, grads: &mut [Option<Vec<f64>>]) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(a) => a.iter_mut().zip(&d).for_each(|(x, y)| *x += y),
            slot => *slot = Some(d),
        }
    }

    pub(crate) fn acc_slice(&self, v: Var, d: &[f64], grads: &mut [Option<Vec<f64>>]) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(a) => a.iter_mut().zip(d).for_each(|(x, y)| *x += y),
            slot => *slot = Some(d.to_vec()),
        }
    }
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
