//! Reverse-mode autodiff on a Wengert tape.
//!
//! Forward ops append nodes holding their value and enough context to run the
//! chain rule later; [`Tape::backward`] walks the tape in reverse with a
//! scratch adjoint per node and then folds those adjoints into each node's
//! persistent gradient. Calling `backward` twice therefore accumulates
//! gradients, which is what minibatch loops rely on.
//!
//! Convolution and max-pooling are fused primitives rather than compositions:
//! the convolution keeps its im2col patch matrix from the forward pass, and
//! pooling keeps the winning indices, so the backward pass is two matrix
//! products and a scatter instead of a graph of gathers.

use super::linalg::{mm_abt_acc, mm_acc, mm_atb_acc};
use super::{validate_shape, Tensor, TensorError};

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that
/// created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

struct ConvCtx {
    cols: Vec<f64>,
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    k: usize,
    out_h: usize,
    out_w: usize,
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Reshape(usize),
    SliceRows {
        src: usize,
        start: usize,
        row: usize,
    },
    ConcatRows(Vec<usize>),
    ReduceSum(usize),
    ReduceMean(usize),
    Conv2d {
        x: usize,
        w: usize,
        b: usize,
        ctx: Box<ConvCtx>,
    },
    MaxPool2 {
        x: usize,
        argmax: Vec<u32>,
    },
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Option<Vec<f64>>,
    needs_grad: bool,
    op: Op,
}

/// Records a computation so that gradients can be replayed backwards.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf node from raw parts.
    pub fn input(
        &mut self,
        shape: &[usize],
        data: Vec<f64>,
        needs_grad: bool,
    ) -> Result<Var, TensorError> {
        let n = validate_shape(shape)?;
        if data.len() != n {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                expected: n,
                got: data.len(),
            });
        }
        Ok(self.push(shape.to_vec(), data, needs_grad, Op::Leaf))
    }

    /// Differentiable leaf holding a copy of a parameter tensor.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), true, Op::Leaf)
    }

    /// Non-differentiable leaf (inputs, targets).
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), false, Op::Leaf)
    }

    /// Value of a node. The `Var` must come from this tape.
    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// First element of a node's value; handy for scalar losses.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    /// Accumulated gradient, if `backward` has reached this node.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.elementwise("add", a, b, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.elementwise("sub", a, b, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.elementwise("mul", a, b, Op::Mul(a.0, b.0))
    }

    fn elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
    ) -> Result<Var, TensorError> {
        self.check_var(a)?;
        self.check_var(b)?;
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(TensorError::ShapeMismatch {
                op: name,
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        let value: Vec<f64> = match &op {
            Op::Add(..) => self.zip_vals(a, b, |x, y| x + y),
            Op::Sub(..) => self.zip_vals(a, b, |x, y| x - y),
            Op::Mul(..) => self.zip_vals(a, b, |x, y| x * y),
            _ => unreachable!(),
        };
        let needs = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        Ok(self.push(self.nodes[a.0].shape.clone(), value, needs, op))
    }

    fn zip_vals(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(&x, &y)| f(x, y))
            .collect()
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        self.check_var(a)?;
        let value = self.nodes[a.0].value.iter().map(|&x| c * x).collect();
        let needs = self.nodes[a.0].needs_grad;
        Ok(self.push(self.nodes[a.0].shape.clone(), value, needs, Op::Scale(a.0, c)))
    }

    /// `A[m,k] * B[k,n]` for rank-2 operands.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.check_var(a)?;
        self.check_var(b)?;
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa.len() != 2 {
            return Err(TensorError::BadRank {
                op: "matmul",
                expected: 2,
                shape: sa.clone(),
            });
        }
        if sb.len() != 2 {
            return Err(TensorError::BadRank {
                op: "matmul",
                expected: 2,
                shape: sb.clone(),
            });
        }
        if sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa.clone(),
                rhs: sb.clone(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut value = vec![0.0; m * n];
        mm_acc(
            &mut value,
            &self.nodes[a.0].value,
            &self.nodes[b.0].value,
            m,
            k,
            n,
        );
        let needs = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        Ok(self.push(
            vec![m, n],
            value,
            needs,
            Op::MatMul { a: a.0, b: b.0, m, k, n },
        ))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(a, Op::Relu(a.0), |x| x.max(0.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(a, Op::Sigmoid(a.0), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(a, Op::Tanh(a.0), f64::tanh)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var, TensorError> {
        self.check_var(a)?;
        let value = self.nodes[a.0].value.iter().map(|&x| f(x)).collect();
        let needs = self.nodes[a.0].needs_grad;
        Ok(self.push(self.nodes[a.0].shape.clone(), value, needs, op))
    }

    /// Same data, new shape; element count must match.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        self.check_var(a)?;
        let n = validate_shape(shape)?;
        if n != self.nodes[a.0].value.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        let value = self.nodes[a.0].value.clone();
        let needs = self.nodes[a.0].needs_grad;
        Ok(self.push(shape.to_vec(), value, needs, Op::Reshape(a.0)))
    }

    /// Rows `start .. start + len` along the leading axis.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        self.check_var(a)?;
        let shape = &self.nodes[a.0].shape;
        if len == 0 || start + len > shape[0] {
            return Err(TensorError::Invalid {
                op: "slice_rows",
                msg: format!(
                    "rows {}..{} out of bounds for leading dimension {}",
                    start,
                    start + len,
                    shape[0]
                ),
            });
        }
        let row: usize = shape[1..].iter().product();
        let value = self.nodes[a.0].value[start * row..(start + len) * row].to_vec();
        let mut out_shape = shape.clone();
        out_shape[0] = len;
        let needs = self.nodes[a.0].needs_grad;
        Ok(self.push(
            out_shape,
            value,
            needs,
            Op::SliceRows { src: a.0, start, row },
        ))
    }

    /// Stacks inputs along the leading axis; trailing dimensions must match.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::Invalid {
                op: "concat_rows",
                msg: "no inputs".into(),
            });
        }
        for &p in parts {
            self.check_var(p)?;
        }
        let tail = self.nodes[parts[0].0].shape[1..].to_vec();
        let mut rows = 0;
        let mut value = Vec::new();
        let mut needs = false;
        for &p in parts {
            let n = &self.nodes[p.0];
            if n.shape[1..] != tail[..] {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.nodes[parts[0].0].shape.clone(),
                    rhs: n.shape.clone(),
                });
            }
            rows += n.shape[0];
            value.extend_from_slice(&n.value);
            needs |= n.needs_grad;
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(&tail);
        Ok(self.push(
            shape,
            value,
            needs,
            Op::ConcatRows(parts.iter().map(|v| v.0).collect()),
        ))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn reduce_sum(&mut self, a: Var) -> Result<Var, TensorError> {
        self.check_var(a)?;
        let s: f64 = self.nodes[a.0].value.iter().sum();
        let needs = self.nodes[a.0].needs_grad;
        Ok(self.push(vec![1], vec![s], needs, Op::ReduceSum(a.0)))
    }

    /// Mean of all elements, as a `[1]` tensor.
    pub fn reduce_mean(&mut self, a: Var) -> Result<Var, TensorError> {
        self.check_var(a)?;
        let n = self.nodes[a.0].value.len();
        let s: f64 = self.nodes[a.0].value.iter().sum();
        let needs = self.nodes[a.0].needs_grad;
        Ok(self.push(vec![1], vec![s / n as f64], needs, Op::ReduceMean(a.0)))
    }

    /// Valid (no padding) stride-1 convolution: `x` is `[C,H,W]`, `w` is
    /// `[O,C,K,K]`, `b` is `[O]`; the result is `[O,H-K+1,W-K+1]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        self.check_var(x)?;
        self.check_var(w)?;
        self.check_var(b)?;
        let sx = self.nodes[x.0].shape.clone();
        let sw = self.nodes[w.0].shape.clone();
        let sb = self.nodes[b.0].shape.clone();
        if sx.len() != 3 {
            return Err(TensorError::BadRank {
                op: "conv2d",
                expected: 3,
                shape: sx,
            });
        }
        if sw.len() != 4 || sw[2] != sw[3] {
            return Err(TensorError::BadRank {
                op: "conv2d",
                expected: 4,
                shape: sw,
            });
        }
        if sb.len() != 1 || sb[0] != sw[0] || sw[1] != sx[0] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: sx,
                rhs: sw,
            });
        }
        let (in_c, in_h, in_w) = (sx[0], sx[1], sx[2]);
        let (out_c, k) = (sw[0], sw[2]);
        if in_h < k || in_w < k {
            return Err(TensorError::Invalid {
                op: "conv2d",
                msg: format!("kernel {k} larger than input {in_h}x{in_w}"),
            });
        }
        let (out_h, out_w) = (in_h - k + 1, in_w - k + 1);
        let patch = in_c * k * k;
        let q = out_h * out_w;

        let cols = im2col(&self.nodes[x.0].value, in_c, in_h, in_w, k, out_h, out_w);
        let mut value = vec![0.0; out_c * q];
        mm_acc(&mut value, &self.nodes[w.0].value, &cols, out_c, patch, q);
        for oc in 0..out_c {
            let bias = self.nodes[b.0].value[oc];
            for v in &mut value[oc * q..(oc + 1) * q] {
                *v += bias;
            }
        }

        let needs = self.nodes[x.0].needs_grad
            || self.nodes[w.0].needs_grad
            || self.nodes[b.0].needs_grad;
        let ctx = Box::new(ConvCtx {
            cols,
            in_c,
            in_h,
            in_w,
            out_c,
            k,
            out_h,
            out_w,
        });
        Ok(self.push(
            vec![out_c, out_h, out_w],
            value,
            needs,
            Op::Conv2d { x: x.0, w: w.0, b: b.0, ctx },
        ))
    }

    /// 2x2 max pooling with stride 2 on a `[C,H,W]` input; odd trailing rows
    /// and columns are dropped. Ties go to the first element in scan order.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var, TensorError> {
        self.check_var(x)?;
        let s = self.nodes[x.0].shape.clone();
        if s.len() != 3 {
            return Err(TensorError::BadRank {
                op: "maxpool2",
                expected: 3,
                shape: s,
            });
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        if h < 2 || w < 2 {
            return Err(TensorError::Invalid {
                op: "maxpool2",
                msg: format!("input {h}x{w} smaller than the 2x2 window"),
            });
        }
        let (oh, ow) = (h / 2, w / 2);
        let src = &self.nodes[x.0].value;
        let mut value = vec![0.0; c * oh * ow];
        let mut argmax = vec![0u32; c * oh * ow];
        for cc in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let base = cc * h * w + 2 * i * w + 2 * j;
                    let cand = [base, base + 1, base + w, base + w + 1];
                    let mut best = cand[0];
                    for &idx in &cand[1..] {
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    let out = cc * oh * ow + i * ow + j;
                    value[out] = src[best];
                    argmax[out] = best as u32;
                }
            }
        }
        let needs = self.nodes[x.0].needs_grad;
        Ok(self.push(
            vec![c, oh, ow],
            value,
            needs,
            Op::MaxPool2 { x: x.0, argmax },
        ))
    }

    /// Propagates gradients from a scalar loss back to every node that needs
    /// them. Gradients persist on the tape, so a second call adds another
    /// full contribution on top.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        self.check_var(loss)?;
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TensorError::NonScalarLoss(self.nodes[loss.0].shape.clone()));
        }
        if !self.nodes[loss.0].needs_grad {
            return Ok(());
        }

        let mut adj: Vec<Option<Vec<f64>>> = Vec::new();
        adj.resize_with(loss.0 + 1, || None);
        adj[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            self.propagate(idx, &g, &mut adj);
            let node = &mut self.nodes[idx];
            match &mut node.grad {
                Some(dst) => {
                    for (d, s) in dst.iter_mut().zip(&g) {
                        *d += s;
                    }
                }
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let needs = |i: usize| nodes[i].needs_grad;
        match &nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if needs(*a) {
                    axpy(sink(adj, nodes, *a), g, 1.0);
                }
                if needs(*b) {
                    axpy(sink(adj, nodes, *b), g, 1.0);
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    axpy(sink(adj, nodes, *a), g, 1.0);
                }
                if needs(*b) {
                    axpy(sink(adj, nodes, *b), g, -1.0);
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let vb = &nodes[*b].value;
                    let dst = sink(adj, nodes, *a);
                    for i in 0..g.len() {
                        dst[i] += g[i] * vb[i];
                    }
                }
                if needs(*b) {
                    let va = &nodes[*a].value;
                    let dst = sink(adj, nodes, *b);
                    for i in 0..g.len() {
                        dst[i] += g[i] * va[i];
                    }
                }
            }
            Op::Scale(a, c) => {
                if needs(*a) {
                    axpy(sink(adj, nodes, *a), g, *c);
                }
            }
            Op::MatMul { a, b, m, k, n } => {
                if needs(*a) {
                    mm_abt_acc(sink(adj, nodes, *a), g, &nodes[*b].value, *m, *k, *n);
                }
                if needs(*b) {
                    mm_atb_acc(sink(adj, nodes, *b), &nodes[*a].value, g, *m, *k, *n);
                }
            }
            Op::Relu(a) => {
                if needs(*a) {
                    let y = &nodes[idx].value;
                    let dst = sink(adj, nodes, *a);
                    for i in 0..g.len() {
                        if y[i] > 0.0 {
                            dst[i] += g[i];
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if needs(*a) {
                    let y = &nodes[idx].value;
                    let dst = sink(adj, nodes, *a);
                    for i in 0..g.len() {
                        dst[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                }
            }
            Op::Tanh(a) => {
                if needs(*a) {
                    let y = &nodes[idx].value;
                    let dst = sink(adj, nodes, *a);
                    for i in 0..g.len() {
                        dst[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                }
            }
            Op::Reshape(a) => {
                if needs(*a) {
                    axpy(sink(adj, nodes, *a), g, 1.0);
                }
            }
            Op::SliceRows { src, start, row } => {
                if needs(*src) {
                    let off = start * row;
                    let dst = sink(adj, nodes, *src);
                    axpy(&mut dst[off..off + g.len()], g, 1.0);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = nodes[p].value.len();
                    if needs(p) {
                        axpy(&mut sink(adj, nodes, p)[..len], &g[off..off + len], 1.0);
                    }
                    off += len;
                }
            }
            Op::ReduceSum(a) => {
                if needs(*a) {
                    for d in sink(adj, nodes, *a).iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::ReduceMean(a) => {
                if needs(*a) {
                    let dst = sink(adj, nodes, *a);
                    let s = g[0] / dst.len() as f64;
                    for d in dst.iter_mut() {
                        *d += s;
                    }
                }
            }
            Op::Conv2d { x, w, b, ctx } => {
                let patch = ctx.in_c * ctx.k * ctx.k;
                let q = ctx.out_h * ctx.out_w;
                if needs(*b) {
                    let dst = sink(adj, nodes, *b);
                    for oc in 0..ctx.out_c {
                        dst[oc] += g[oc * q..(oc + 1) * q].iter().sum::<f64>();
                    }
                }
                if needs(*w) {
                    mm_abt_acc(sink(adj, nodes, *w), g, &ctx.cols, ctx.out_c, patch, q);
                }
                if needs(*x) {
                    let mut dcols = vec![0.0; patch * q];
                    mm_atb_acc(&mut dcols, &nodes[*w].value, g, ctx.out_c, patch, q);
                    col2im_acc(
                        sink(adj, nodes, *x),
                        &dcols,
                        ctx.in_c,
                        ctx.in_h,
                        ctx.in_w,
                        ctx.k,
                        ctx.out_h,
                        ctx.out_w,
                    );
                }
            }
            Op::MaxPool2 { x, argmax } => {
                if needs(*x) {
                    let dst = sink(adj, nodes, *x);
                    for (i, &src_idx) in argmax.iter().enumerate() {
                        dst[src_idx as usize] += g[i];
                    }
                }
            }
        }
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, needs_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            shape,
            value,
            grad: None,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn check_var(&self, v: Var) -> Result<(), TensorError> {
        if v.0 >= self.nodes.len() {
            return Err(TensorError::BadVar(v.0));
        }
        Ok(())
    }
}

/// Adjoint buffer for node `i`, created zero-filled on first touch.
fn sink<'a>(adj: &'a mut [Option<Vec<f64>>], nodes: &[Node], i: usize) -> &'a mut [f64] {
    adj[i]
        .get_or_insert_with(|| vec![0.0; nodes[i].value.len()])
        .as_mut_slice()
}

fn axpy(dst: &mut [f64], src: &[f64], scale: f64) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn im2col(
    x: &[f64],
    in_c: usize,
    in_h: usize,
    in_w: usize,
    k: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f64> {
    let q = out_h * out_w;
    let mut cols = vec![0.0; in_c * k * k * q];
    for c in 0..in_c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                for oh in 0..out_h {
                    let src = c * in_h * in_w + (oh + ki) * in_w + kj;
                    let dst = row * q + oh * out_w;
                    cols[dst..dst + out_w].copy_from_slice(&x[src..src + out_w]);
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im_acc(
    dx: &mut [f64],
    dcols: &[f64],
    in_c: usize,
    in_h: usize,
    in_w: usize,
    k: usize,
    out_h: usize,
    out_w: usize,
) {
    let q = out_h * out_w;
    for c in 0..in_c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                for oh in 0..out_h {
                    let dst = c * in_h * in_w + (oh + ki) * in_w + kj;
                    let src = row * q + oh * out_w;
                    axpy(&mut dx[dst..dst + out_w], &dcols[src..src + out_w], 1.0);
                }
            }
        }
    }
}
