//! Builder methods for the operator catalog.

use super::array::Array;
use super::graph::{Graph, IouEntry, NodeId, Op, Shift, VarifocalTargets};
use crate::error::Result;

impl Graph {
    pub fn linear(&mut self, w: NodeId, b: NodeId, x: NodeId) -> Result<NodeId> {
        self.push(Op::Linear { bias: true }, &[w, b, x])
    }

    pub fn linear_no_bias(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        self.push(Op::Linear { bias: false }, &[w, x])
    }

    pub fn conv(&mut self, w: NodeId, b: NodeId, x: NodeId, stride: usize) -> Result<NodeId> {
        self.push(Op::Conv { stride }, &[w, b, x])
    }

    pub fn depthwise_conv(
        &mut self,
        w: NodeId,
        b: NodeId,
        x: NodeId,
        stride: usize,
    ) -> Result<NodeId> {
        self.push(Op::DepthwiseConv { stride }, &[w, b, x])
    }

    /// Stride-2 upsampling to `out_len`, which must be `2n` or `2n - 1`.
    pub fn conv_transpose(
        &mut self,
        w: NodeId,
        b: NodeId,
        x: NodeId,
        out_len: usize,
    ) -> Result<NodeId> {
        self.push(Op::ConvTranspose { out_len }, &[w, b, x])
    }

    pub fn max_pool(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::MaxPool, &[x])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::Relu, &[x])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::Sigmoid, &[x])
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::GlobalAvgPool, &[x])
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        self.push(Op::LayerNorm, &[x, gamma, beta])
    }

    pub fn group_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        groups: usize,
    ) -> Result<NodeId> {
        self.push(Op::GroupNorm { groups }, &[x, gamma, beta])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Mul, &[a, b])
    }

    pub fn sqrt(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::Sqrt, &[x])
    }

    pub fn scale_channels(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        self.push(Op::ScaleChannels, &[x, w])
    }

    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        self.push(Op::Softmax { axis }, &[x])
    }

    /// Row-wise DFT of a real array, returned as `(re, im)` nodes.
    pub fn dft(&mut self, x: NodeId) -> Result<(NodeId, NodeId)> {
        Ok((self.push(Op::DftRe, &[x])?, self.push(Op::DftIm, &[x])?))
    }

    pub fn idft_real(&mut self, re: NodeId, im: NodeId) -> Result<NodeId> {
        self.push(Op::IdftReal, &[re, im])
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.push(Op::SliceRows { start, len }, &[x])
    }

    pub fn shift_stack(&mut self, s: NodeId, bins: usize, dir: Shift) -> Result<NodeId> {
        self.push(Op::ShiftStack { bins, dir }, &[s])
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::Sum, &[x])
    }

    pub fn varifocal(&mut self, p: NodeId, targets: VarifocalTargets) -> Result<NodeId> {
        self.push(Op::Varifocal(Box::new(targets)), &[p])
    }

    pub fn iou_loss(
        &mut self,
        start: NodeId,
        end: NodeId,
        entries: Vec<IouEntry>,
    ) -> Result<NodeId> {
        self.push(Op::IouLoss(Box::new(entries)), &[start, end])
    }

    /// Complex product `(a_re + j a_im)(b_re + j b_im)` built from catalog ops.
    pub fn complex_mul(
        &mut self,
        a: (NodeId, NodeId),
        b: (NodeId, NodeId),
    ) -> Result<(NodeId, NodeId)> {
        let rr = self.mul(a.0, b.0)?;
        let ii = self.mul(a.1, b.1)?;
        let ri = self.mul(a.0, b.1)?;
        let ir = self.mul(a.1, b.0)?;
        Ok((self.sub(rr, ii)?, self.add(ri, ir)?))
    }

    /// Constant `(1, n)` row holding `0, 1, ..., n-1`.
    pub fn index_row(&mut self, n: usize) -> NodeId {
        self.constant(Array::matrix(1, n, (0..n).map(|i| i as f64).collect()))
    }
}
