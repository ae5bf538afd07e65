use std::collections::HashMap;

use super::array::Array;
use super::kernels as k;
use crate::error::{Error, Result};
use crate::training::loss::{iou_loss_grad, varifocal_grad, varifocal_loss, PROB_EPS};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Direction of the neighbor gather used by boundary distributions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shift {
    /// `out[b, t] = s[t - b]`
    Backward,
    /// `out[b, t] = s[t + b]`
    Forward,
}

/// Per-element varifocal targets baked into a loss node.
#[derive(Clone, Debug)]
pub struct VarifocalTargets {
    /// Target quality `q` per element; `0` marks a negative.
    pub quality: Array,
    /// Multiplier per element (normalizers and IoU weights are folded in here).
    pub weight: Array,
    pub alpha: f64,
    pub gamma: f64,
}

/// One positive instant supervised by the IoU loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IouEntry {
    pub t: usize,
    pub start: f64,
    pub end: f64,
    pub weight: f64,
}

/// The closed operator catalog.
#[derive(Clone, Debug)]
pub enum Op {
    Leaf {
        trainable: bool,
    },
    /// Pointwise linear over channels: `[w (O,I), b (O)?, x (I,T)]`.
    Linear {
        bias: bool,
    },
    /// Dense conv, kernel 3, padding 1: `[w (O,I,3), b (O), x (I,T)]`.
    Conv {
        stride: usize,
    },
    /// Depthwise conv, kernel 3, padding 1: `[w (D,3), b (D), x (D,T)]`.
    DepthwiseConv {
        stride: usize,
    },
    /// Stride-2 transposed conv, kernel 3: `[w (O,I,3), b (O), x (I,T)]`.
    ConvTranspose {
        out_len: usize,
    },
    MaxPool,
    Relu,
    Sigmoid,
    GlobalAvgPool,
    /// `[x (D,T), gamma (D), beta (D)]`, normalized over channels per instant.
    LayerNorm,
    /// `[x (D,T), gamma (D), beta (D)]`.
    GroupNorm {
        groups: usize,
    },
    Add,
    Sub,
    Mul,
    Sqrt,
    /// `[x (D,T), w (D,1)]`: per-channel weight broadcast over time.
    ScaleChannels,
    Softmax {
        axis: usize,
    },
    DftRe,
    DftIm,
    /// `[re, im]` -> real part of the inverse DFT.
    IdftReal,
    SliceRows {
        start: usize,
        len: usize,
    },
    ShiftStack {
        bins: usize,
        dir: Shift,
    },
    Sum,
    Varifocal(Box<VarifocalTargets>),
    /// `[start (1,T), end (1,T)]`.
    IouLoss(Box<Vec<IouEntry>>),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Linear { .. } => "linear",
            Op::Conv { .. } => "conv",
            Op::DepthwiseConv { .. } => "depthwise_conv",
            Op::ConvTranspose { .. } => "conv_transpose",
            Op::MaxPool => "max_pool",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
            Op::GlobalAvgPool => "global_avg_pool",
            Op::LayerNorm => "layer_norm",
            Op::GroupNorm { .. } => "group_norm",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Sqrt => "sqrt",
            Op::ScaleChannels => "scale_channels",
            Op::Softmax { .. } => "softmax",
            Op::DftRe => "dft_re",
            Op::DftIm => "dft_im",
            Op::IdftReal => "idft_real",
            Op::SliceRows { .. } => "slice_rows",
            Op::ShiftStack { .. } => "shift_stack",
            Op::Sum => "sum",
            Op::Varifocal(_) => "varifocal",
            Op::IouLoss(_) => "iou_loss",
        }
    }
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Array,
    requires_grad: bool,
}

/// Eagerly evaluated computation graph with reverse-mode differentiation.
///
/// Nodes are evaluated as they are added. Leaves can be re-bound afterwards
/// ([`Graph::set_leaf`], [`Graph::forward`]) and the whole graph recomputed,
/// which is what finite-difference checks rely on.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    names: HashMap<String, NodeId>,
    /// First node index whose value is out of date, if any.
    stale_from: Option<usize>,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Array>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `id`; zeros when the node did not influence the output.
    pub fn wrt(&self, id: NodeId) -> Array {
        match self.grads.get(id.0).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Array::zeros(&self.shapes[id.0]),
        }
    }

    pub fn get(&self, id: NodeId) -> Option<&Array> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

fn shape_err(node: usize, detail: impl Into<String>) -> Error {
    Error::Shape {
        node,
        detail: detail.into(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array {
        &self.nodes[id.0].value
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    pub fn inputs(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].inputs
    }

    pub fn lookup(&self, name: &str) -> Option<NodeId> {
        self.names.get(name).copied()
    }

    /// Branch taken by every non-smooth op: ReLU signs, max-pool winners,
    /// clamp and ordering tests inside the losses. Finite differences are only
    /// meaningful while this pattern stays fixed.
    pub fn branch_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            let input = |i: usize| &self.nodes[node.inputs[i].0].value;
            match &node.op {
                Op::Relu => out.extend(input(0).data().iter().map(|&v| v > 0.0)),
                Op::MaxPool => {
                    let x = input(0);
                    for r in 0..x.rows() {
                        let row = x.row(r);
                        out.extend(row.chunks(2).map(|c| c.len() == 2 && c[1] > c[0]));
                    }
                }
                Op::Varifocal(tg) => out.extend(
                    input(0)
                        .data()
                        .iter()
                        .zip(tg.weight.data())
                        .filter(|(_, &w)| w != 0.0)
                        .map(|(&p, _)| (PROB_EPS..=1.0 - PROB_EPS).contains(&p)),
                ),
                Op::IouLoss(entries) => {
                    let (s, e) = (input(0).data(), input(1).data());
                    for en in entries.iter() {
                        let (ps, pe) = (s[en.t], e[en.t]);
                        out.extend([
                            ps < pe,
                            ps > en.start,
                            pe < en.end,
                            pe.min(en.end) > ps.max(en.start),
                        ]);
                    }
                }
                _ => {}
            }
        }
        out
    }

    /// Trainable leaf. Named leaves can be re-bound through [`Graph::forward`].
    pub fn leaf(&mut self, name: impl Into<String>, value: Array) -> NodeId {
        let id = self.push_leaf(value, true);
        self.names.insert(name.into(), id);
        id
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array) -> NodeId {
        self.push_leaf(value, false)
    }

    /// Named leaf that never receives a gradient.
    pub fn named_constant(&mut self, name: impl Into<String>, value: Array) -> NodeId {
        let id = self.push_leaf(value, false);
        self.names.insert(name.into(), id);
        id
    }

    fn push_leaf(&mut self, value: Array, trainable: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op: Op::Leaf { trainable },
            inputs: Vec::new(),
            value,
            requires_grad: trainable,
        });
        id
    }

    /// Replace a leaf value. Dependent nodes are stale until the next forward pass.
    pub fn set_leaf(&mut self, id: NodeId, value: Array) -> Result<()> {
        let node = &mut self.nodes[id.0];
        if !matches!(node.op, Op::Leaf { .. }) {
            return Err(Error::Invalid(format!("node {} is not a leaf", id.0)));
        }
        if node.value.shape() != value.shape() {
            return Err(shape_err(
                id.0,
                format!(
                    "rebinding {:?} with {:?}",
                    node.value.shape(),
                    value.shape()
                ),
            ));
        }
        node.value = value;
        self.stale_from = Some(self.stale_from.map_or(id.0 + 1, |s| s.min(id.0 + 1)));
        Ok(())
    }

    /// Mutable access to one leaf entry, used by finite-difference probes.
    pub(crate) fn perturb_leaf(&mut self, id: NodeId, index: usize, value: f64) {
        self.nodes[id.0].value.data_mut()[index] = value;
        self.stale_from = Some(self.stale_from.map_or(id.0 + 1, |s| s.min(id.0 + 1)));
    }

    /// Bind named leaves and recompute every node.
    pub fn forward(&mut self, bindings: &[(&str, Array)]) -> Result<()> {
        for (name, value) in bindings {
            let id = self
                .lookup(name)
                .ok_or_else(|| Error::Invalid(format!("no leaf named {name:?}")))?;
            self.set_leaf(id, value.clone())?;
        }
        self.recompute(0)
    }

    /// Recompute only what changed since the last forward pass.
    pub fn refresh(&mut self) -> Result<()> {
        match self.stale_from {
            Some(from) => self.recompute(from),
            None => Ok(()),
        }
    }

    fn recompute(&mut self, from: usize) -> Result<()> {
        for idx in from..self.nodes.len() {
            if matches!(self.nodes[idx].op, Op::Leaf { .. }) {
                continue;
            }
            let value = self.eval(idx, &self.nodes[idx].op, &self.nodes[idx].inputs)?;
            self.nodes[idx].value = value;
        }
        self.stale_from = None;
        Ok(())
    }

    /// Append an operation node and evaluate it immediately.
    pub fn push(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        let idx = self.nodes.len();
        if let Some(bad) = inputs.iter().find(|i| i.0 >= idx) {
            return Err(Error::Invalid(format!(
                "input {} does not exist yet",
                bad.0
            )));
        }
        self.refresh()?;
        let value = self.eval(idx, &op, inputs)?;
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            op,
            inputs: inputs.to_vec(),
            value,
            requires_grad,
        });
        Ok(NodeId(idx))
    }

    fn eval(&self, idx: usize, op: &Op, inputs: &[NodeId]) -> Result<Array> {
        let v: Vec<&Array> = inputs.iter().map(|i| &self.nodes[i.0].value).collect();
        check_shapes(idx, op, &v)?;
        let out = match op {
            Op::Leaf { .. } => unreachable!("leaves are never evaluated"),
            Op::Linear { bias } => {
                if *bias {
                    k::linear_fwd(v[0], Some(v[1]), v[2])
                } else {
                    k::linear_fwd(v[0], None, v[1])
                }
            }
            Op::Conv { stride } => k::conv_fwd(v[0], v[1], v[2], *stride),
            Op::DepthwiseConv { stride } => k::dw_conv_fwd(v[0], v[1], v[2], *stride),
            Op::ConvTranspose { out_len } => k::conv_t_fwd(v[0], v[1], v[2], *out_len),
            Op::MaxPool => k::max_pool_fwd(v[0]),
            Op::Relu => v[0].map(|x| if x > 0.0 { x } else { 0.0 }),
            Op::Sigmoid => v[0].map(sigmoid),
            Op::GlobalAvgPool => k::gap_fwd(v[0]),
            Op::LayerNorm => k::layer_norm_fwd(v[0], v[1], v[2]),
            Op::GroupNorm { groups } => k::group_norm_fwd(v[0], v[1], v[2], *groups),
            Op::Add => zip_map(v[0], v[1], |a, b| a + b),
            Op::Sub => zip_map(v[0], v[1], |a, b| a - b),
            Op::Mul => zip_map(v[0], v[1], |a, b| a * b),
            Op::Sqrt => v[0].map(f64::sqrt),
            Op::ScaleChannels => k::scale_channels_fwd(v[0], v[1]),
            Op::Softmax { axis } => k::softmax_fwd(v[0], *axis),
            Op::DftRe => k::dft_part_fwd(v[0], false),
            Op::DftIm => k::dft_part_fwd(v[0], true),
            Op::IdftReal => k::idft_real_fwd(v[0], v[1]),
            Op::SliceRows { start, len } => {
                let c = v[0].cols();
                Array::matrix(*len, c, v[0].data()[start * c..(start + len) * c].to_vec())
            }
            Op::ShiftStack { bins, dir } => {
                k::shift_stack_fwd(v[0], *bins, *dir == Shift::Backward)
            }
            Op::Sum => Array::scalar(v[0].sum()),
            Op::Varifocal(tg) => {
                let mut total = 0.0;
                for ((p, q), w) in v[0]
                    .data()
                    .iter()
                    .zip(tg.quality.data())
                    .zip(tg.weight.data())
                {
                    if *w != 0.0 {
                        total += w * varifocal_loss(*p, *q, tg.alpha, tg.gamma);
                    }
                }
                Array::scalar(total)
            }
            Op::IouLoss(entries) => {
                let (s, e) = (v[0].data(), v[1].data());
                let total = entries
                    .iter()
                    .map(|en| en.weight * iou_loss_grad(s[en.t], e[en.t], en.start, en.end).0)
                    .sum();
                Array::scalar(total)
            }
        };
        if !out.all_finite() {
            return Err(Error::NonFinite {
                node: idx,
                op: op.name(),
            });
        }
        Ok(out)
    }

    /// Reverse-mode accumulation from `output`, seeded with `seed`.
    pub fn backward(&self, output: NodeId, seed: Array) -> Result<Gradients> {
        if self.stale_from.is_some() {
            return Err(Error::Stale);
        }
        let out_shape = self.nodes[output.0].value.shape();
        if seed.shape() != out_shape {
            return Err(shape_err(
                output.0,
                format!("seed {:?} vs output {:?}", seed.shape(), out_shape),
            ));
        }
        let n = output.0 + 1;
        let mut grads: Vec<Option<Array>> = vec![None; n];
        grads[output.0] = Some(seed);
        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf { .. }) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let contributions = self.local_grads(node, &g);
            for (input, contrib) in node.inputs.iter().zip(contributions) {
                let Some(c) = contrib else { continue };
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&c),
                    slot @ None => *slot = Some(c),
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }

    fn local_grads(&self, node: &Node, g: &Array) -> Vec<Option<Array>> {
        let v: Vec<&Array> = node.inputs.iter().map(|i| &self.nodes[i.0].value).collect();
        let need: Vec<bool> = node
            .inputs
            .iter()
            .map(|i| self.nodes[i.0].requires_grad)
            .collect();
        let y = &node.value;
        match &node.op {
            Op::Leaf { .. } => Vec::new(),
            Op::Linear { bias } => {
                let (w, x) = if *bias { (v[0], v[2]) } else { (v[0], v[1]) };
                let need_x = *need.last().unwrap();
                let (gw, gb, gx) = k::linear_bwd(w, x, g, need[0], need_x);
                if *bias {
                    vec![gw, Some(gb), gx]
                } else {
                    vec![gw, gx]
                }
            }
            Op::Conv { stride } => {
                let (gw, gb, gx) = k::conv_bwd(v[0], v[2], g, *stride, need[0], need[2]);
                vec![gw, Some(gb), gx]
            }
            Op::DepthwiseConv { stride } => {
                let (gw, gb, gx) = k::dw_conv_bwd(v[0], v[2], g, *stride);
                vec![Some(gw), Some(gb), Some(gx)]
            }
            Op::ConvTranspose { .. } => {
                let (gw, gb, gx) = k::conv_t_bwd(v[0], v[2], g, need[0], need[2]);
                vec![gw, Some(gb), gx]
            }
            Op::MaxPool => vec![Some(k::max_pool_bwd(v[0], g))],
            Op::Relu => vec![Some(zip_map(v[0], g, |x, g| if x > 0.0 { g } else { 0.0 }))],
            Op::Sigmoid => vec![Some(zip_map(y, g, |s, g| g * s * (1.0 - s)))],
            Op::GlobalAvgPool => vec![Some(k::gap_bwd(v[0], g))],
            Op::LayerNorm => {
                let (gx, gg, gb) = k::layer_norm_bwd(v[0], v[1], g);
                vec![Some(gx), Some(gg), Some(gb)]
            }
            Op::GroupNorm { groups } => {
                let (gx, gg, gb) = k::group_norm_bwd(v[0], v[1], g, *groups);
                vec![Some(gx), Some(gg), Some(gb)]
            }
            Op::Add => vec![Some(g.clone()), Some(g.clone())],
            Op::Sub => vec![Some(g.clone()), Some(g.map(|x| -x))],
            Op::Mul => vec![
                Some(zip_map(g, v[1], |g, b| g * b)),
                Some(zip_map(g, v[0], |g, a| g * a)),
            ],
            Op::Sqrt => vec![Some(zip_map(v[0], g, |x, g| {
                g * 0.5 / x.max(k::SQRT_GRAD_FLOOR).sqrt()
            }))],
            Op::ScaleChannels => {
                let (gx, gw) = k::scale_channels_bwd(v[0], v[1], g);
                vec![Some(gx), Some(gw)]
            }
            Op::Softmax { axis } => vec![Some(k::softmax_bwd(y, g, *axis))],
            Op::DftRe => vec![Some(k::dft_part_fwd(g, false))],
            Op::DftIm => vec![Some(k::dft_part_fwd(g, true))],
            Op::IdftReal => {
                let (gre, gim) = k::idft_real_bwd(g);
                vec![Some(gre), Some(gim)]
            }
            Op::SliceRows { start, len } => {
                let mut gx = Array::zeros(v[0].shape());
                let c = v[0].cols();
                gx.data_mut()[start * c..(start + len) * c].copy_from_slice(g.data());
                vec![Some(gx)]
            }
            Op::ShiftStack { bins, dir } => {
                vec![Some(k::shift_stack_bwd(
                    v[0],
                    g,
                    *bins,
                    *dir == Shift::Backward,
                ))]
            }
            Op::Sum => vec![Some(Array::full(v[0].shape(), g.item()))],
            Op::Varifocal(tg) => {
                let seed = g.item();
                let mut gp = Array::zeros(v[0].shape());
                for (i, o) in gp.data_mut().iter_mut().enumerate() {
                    let w = tg.weight.data()[i];
                    if w != 0.0 {
                        *o = seed
                            * w
                            * varifocal_grad(
                                v[0].data()[i],
                                tg.quality.data()[i],
                                tg.alpha,
                                tg.gamma,
                            );
                    }
                }
                vec![Some(gp)]
            }
            Op::IouLoss(entries) => {
                let seed = g.item();
                let mut gs = Array::zeros(v[0].shape());
                let mut ge = Array::zeros(v[1].shape());
                for en in entries.iter() {
                    let (_, ds, de) =
                        iou_loss_grad(v[0].data()[en.t], v[1].data()[en.t], en.start, en.end);
                    gs.data_mut()[en.t] += seed * en.weight * ds;
                    ge.data_mut()[en.t] += seed * en.weight * de;
                }
                vec![Some(gs), Some(ge)]
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn zip_map(a: &Array, b: &Array, f: impl Fn(f64, f64) -> f64) -> Array {
    Array::new(
        a.shape().to_vec(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
}

fn expect_rank2(idx: usize, what: &str, a: &Array) -> Result<()> {
    if a.rank() != 2 {
        return Err(shape_err(
            idx,
            format!("{what} must be rank 2, got {:?}", a.shape()),
        ));
    }
    Ok(())
}

fn expect_vec(idx: usize, what: &str, a: &Array, len: usize) -> Result<()> {
    if a.len() != len || a.rank() > 2 {
        return Err(shape_err(
            idx,
            format!("{what} must hold {len} values, got {:?}", a.shape()),
        ));
    }
    Ok(())
}

fn check_shapes(idx: usize, op: &Op, v: &[&Array]) -> Result<()> {
    let arity = match op {
        Op::Leaf { .. } => 0,
        Op::Linear { bias: true } | Op::Conv { .. } | Op::DepthwiseConv { .. } => 3,
        Op::ConvTranspose { .. } | Op::LayerNorm | Op::GroupNorm { .. } => 3,
        Op::Linear { bias: false } => 2,
        Op::Add | Op::Sub | Op::Mul | Op::ScaleChannels | Op::IdftReal | Op::IouLoss(_) => 2,
        _ => 1,
    };
    if v.len() != arity {
        return Err(shape_err(
            idx,
            format!("{} takes {arity} inputs, got {}", op.name(), v.len()),
        ));
    }
    match op {
        Op::Linear { bias } => {
            let (w, x) = (v[0], *v.last().unwrap());
            expect_rank2(idx, "weight", w)?;
            expect_rank2(idx, "input", x)?;
            if w.cols() != x.rows() {
                return Err(shape_err(
                    idx,
                    format!("weight {:?} vs input {:?}", w.shape(), x.shape()),
                ));
            }
            if *bias {
                expect_vec(idx, "bias", v[1], w.rows())?;
            }
        }
        Op::Conv { stride } => {
            let (w, b, x) = (v[0], v[1], v[2]);
            expect_rank2(idx, "input", x)?;
            if w.rank() != 3 || w.shape()[2] != k::KERNEL || w.shape()[1] != x.rows() {
                return Err(shape_err(
                    idx,
                    format!("conv weight {:?} vs input {:?}", w.shape(), x.shape()),
                ));
            }
            expect_vec(idx, "bias", b, w.shape()[0])?;
            if !(1..=2).contains(stride) {
                return Err(shape_err(idx, format!("unsupported stride {stride}")));
            }
        }
        Op::DepthwiseConv { stride } => {
            let (w, b, x) = (v[0], v[1], v[2]);
            expect_rank2(idx, "input", x)?;
            if w.shape() != [x.rows(), k::KERNEL] {
                return Err(shape_err(
                    idx,
                    format!("depthwise weight {:?} vs input {:?}", w.shape(), x.shape()),
                ));
            }
            expect_vec(idx, "bias", b, x.rows())?;
            if !(1..=2).contains(stride) {
                return Err(shape_err(idx, format!("unsupported stride {stride}")));
            }
        }
        Op::ConvTranspose { out_len } => {
            let (w, b, x) = (v[0], v[1], v[2]);
            expect_rank2(idx, "input", x)?;
            if w.rank() != 3 || w.shape()[2] != k::KERNEL || w.shape()[1] != x.rows() {
                return Err(shape_err(
                    idx,
                    format!(
                        "conv_transpose weight {:?} vs input {:?}",
                        w.shape(),
                        x.shape()
                    ),
                ));
            }
            expect_vec(idx, "bias", b, w.shape()[0])?;
            let n = x.cols();
            if *out_len != 2 * n && *out_len + 1 != 2 * n {
                return Err(shape_err(
                    idx,
                    format!("upsampled length {} cannot align to {out_len}", 2 * n),
                ));
            }
        }
        Op::MaxPool | Op::GlobalAvgPool | Op::DftRe | Op::DftIm | Op::Softmax { .. } => {
            expect_rank2(idx, "input", v[0])?;
            if v[0].cols() == 0 {
                return Err(shape_err(idx, "empty time axis"));
            }
            if let Op::Softmax { axis } = op {
                if *axis > 1 {
                    return Err(shape_err(idx, format!("softmax axis {axis} out of range")));
                }
            }
        }
        Op::LayerNorm | Op::GroupNorm { .. } => {
            expect_rank2(idx, "input", v[0])?;
            expect_vec(idx, "gamma", v[1], v[0].rows())?;
            expect_vec(idx, "beta", v[2], v[0].rows())?;
            if let Op::GroupNorm { groups } = op {
                if *groups == 0 || !v[0].rows().is_multiple_of(*groups) {
                    return Err(shape_err(
                        idx,
                        format!(
                            "{} channels not divisible into {groups} groups",
                            v[0].rows()
                        ),
                    ));
                }
            }
        }
        Op::Add | Op::Sub | Op::Mul | Op::IdftReal => {
            if v[0].shape() != v[1].shape() {
                return Err(shape_err(
                    idx,
                    format!("{:?} vs {:?}", v[0].shape(), v[1].shape()),
                ));
            }
        }
        Op::ScaleChannels => {
            expect_rank2(idx, "input", v[0])?;
            expect_vec(idx, "channel weight", v[1], v[0].rows())?;
        }
        Op::SliceRows { start, len } => {
            expect_rank2(idx, "input", v[0])?;
            if start + len > v[0].rows() || *len == 0 {
                return Err(shape_err(
                    idx,
                    format!("rows {start}..{} of {:?}", start + len, v[0].shape()),
                ));
            }
        }
        Op::ShiftStack { .. } => {
            if v[0].rows() != 1 {
                return Err(shape_err(
                    idx,
                    format!("shift_stack expects one row, got {:?}", v[0].shape()),
                ));
            }
        }
        Op::Varifocal(tg) => {
            if tg.quality.shape() != v[0].shape() || tg.weight.shape() != v[0].shape() {
                return Err(shape_err(idx, "varifocal targets do not match predictions"));
            }
        }
        Op::IouLoss(entries) => {
            if v[0].shape() != v[1].shape() {
                return Err(shape_err(idx, "start/end shapes differ"));
            }
            if entries.iter().any(|e| e.t >= v[0].len()) {
                return Err(shape_err(idx, "iou target instant out of range"));
            }
        }
        _ => {}
    }
    Ok(())
}
