//! Reverse-mode tape.
//!
//! Every op appends a node whose inputs are already on the tape, so the node
//! list is topologically ordered by construction and `backward` is a single
//! reverse sweep.

use rand::Rng;

use super::gemm::{gemm, gemm_view, View};
use super::tensor::{dims2, Tensor};
use crate::error::{HvisError, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Dropout(Var, Vec<f64>),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Narrow { input: Var, axis: usize, start: usize },
    Concat { inputs: Vec<Var>, axis: usize },
    Permute { input: Var, perm: Vec<usize> },
    Conv1d { input: Var, kernel: Var, dilation: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, inner)
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn permute_values(values: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let rank = shape.len();
    let mut strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let out_strides: Vec<usize> = perm.iter().map(|&p| strides[p]).collect();
    let mut out = Vec::with_capacity(values.len());
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..values.len() {
        out.push(values[src]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            src += out_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= out_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out_shape, out)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf; gradient tracking follows `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let rg = tensor.requires_grad();
        self.push(tensor, Op::Leaf, rg)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push(tensor.with_requires_grad(false), Op::Leaf, false)
    }

    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.push(tensor.with_requires_grad(true), Op::Leaf, true)
    }

    /// Copies the current value of `v` into a new constant leaf.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn values(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.values()
    }

    /// Gradient populated by the last [`Tape::backward`] on a tracked leaf.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.values(v)[0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.value(a), "matmul")?;
        let (k2, n) = dims2(self.value(b), "matmul")?;
        if k != k2 {
            return Err(HvisError::dim(
                "matmul",
                format!("inner dimensions differ: {:?} x {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.values(a), false, self.values(b), false, &mut out, 0.0);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).transpose2()?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Transpose(a), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(HvisError::dim(
                op,
                format!("shapes differ: {:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(op, a, b)?;
        let vals = self.values(a).iter().zip(self.values(b)).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(self.shape(a), vals)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// Adds a vector `bias[C]` to every row of `x[..., C]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let c = *self.shape(x).last().expect("non-empty shape");
        if self.shape(bias) != [c] {
            return Err(HvisError::dim(
                "add_bias",
                format!("bias {:?} does not match trailing dim of {:?}", self.shape(bias), self.shape(x)),
            ));
        }
        let b = self.values(bias);
        let vals = self.values(x).iter().enumerate().map(|(i, v)| v + b[i % c]).collect();
        let t = Tensor::new(self.shape(x), vals)?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(t, Op::AddBias(x, bias), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let vals = self.values(a).iter().map(|v| v * factor).collect();
        let t = Tensor::new(self.shape(a), vals).expect("same shape");
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, factor), rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let vals = self.values(a).iter().map(|&v| f(v)).collect();
        let t = Tensor::new(self.shape(a), vals).expect("same shape");
        let rg = self.rg(a);
        self.push(t, op, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |v| v.max(0.0), Op::Relu(a))
    }

    /// Inverted dropout: identity when `train` is false, otherwise zeroes each
    /// element with probability `rate` and rescales survivors by `1/(1-rate)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(HvisError::Parameter(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !train || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(a).numel())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let vals = self.values(a).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::new(self.shape(a), vals)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Dropout(a, mask), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.values(a).iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s: f64 = self.values(a).iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s / n), Op::Mean(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).reshaped(shape).map_err(|_| {
            HvisError::dim("reshape", format!("cannot view {:?} as {shape:?}", self.shape(a)))
        })?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(HvisError::dim(
                "narrow",
                format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, inner) = outer_inner(&shape, axis);
        let src = self.values(a);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(&out_shape, out)?, Op::Narrow { input: a, axis, start }, rg))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| HvisError::dim("concat", "no inputs"))?;
        let shape0 = self.shape(*first).to_vec();
        if axis >= shape0.len() {
            return Err(HvisError::dim("concat", format!("axis {axis} for {shape0:?}")));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            let compatible = s.len() == shape0.len()
                && s.iter().zip(&shape0).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(HvisError::dim("concat", format!("{s:?} vs {shape0:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, inner) = outer_inner(&shape0, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let len = self.shape(*v)[axis] * inner;
                out.extend_from_slice(&self.values(*v)[o * len..(o + 1) * len]);
            }
        }
        let mut out_shape = shape0;
        out_shape[axis] = total;
        let rg = inputs.iter().any(|v| self.rg(*v));
        Ok(self.push(Tensor::new(&out_shape, out)?, Op::Concat { inputs: inputs.to_vec(), axis }, rg))
    }

    /// Reorders axes: output axis `d` is input axis `perm[d]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(HvisError::dim("permute", format!("{perm:?} is not a permutation for {shape:?}")));
        }
        let (out_shape, out) = permute_values(self.values(a), &shape, perm);
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(&out_shape, out)?, Op::Permute { input: a, perm: perm.to_vec() }, rg))
    }

    /// Causal dilated convolution over time-major sequences.
    ///
    /// `input` is `[T, S, C_in]` (time, sequence, channel), `kernel` is
    /// `[C_out, C_in, K]`, output is `[T, S, C_out]`. Tap `K-1` reads the
    /// current step; tap `k` reads `(K-1-k)*dilation` steps back, with zeros
    /// before the start of the sequence.
    pub fn conv1d_causal(&mut self, input: Var, kernel: Var, dilation: usize) -> Result<Var> {
        if dilation < 1 {
            return Err(HvisError::Parameter(format!("dilation must be >= 1, got {dilation}")));
        }
        let (t_len, seqs, c_in) = match *self.shape(input) {
            [t, s, c] => (t, s, c),
            ref s => return Err(HvisError::dim("conv1d_causal", format!("input must be [T, S, C], got {s:?}"))),
        };
        let (c_out, k_in, width) = match *self.shape(kernel) {
            [o, i, k] => (o, i, k),
            ref s => return Err(HvisError::dim("conv1d_causal", format!("kernel must be [out, in, k], got {s:?}"))),
        };
        if k_in != c_in {
            return Err(HvisError::dim(
                "conv1d_causal",
                format!("kernel {:?} expects {k_in} input channels, input {:?} has {c_in}", self.shape(kernel), self.shape(input)),
            ));
        }
        let mut out = vec![0.0; t_len * seqs * c_out];
        let x = self.values(input);
        let w = self.values(kernel);
        for tap in 0..width {
            let shift = (width - 1 - tap) * dilation;
            if shift >= t_len {
                continue;
            }
            let rows = (t_len - shift) * seqs;
            let wv = View {
                data: w,
                offset: tap,
                row_stride: width as isize,
                col_stride: (c_in * width) as isize,
            };
            gemm_view(rows, c_in, c_out, View::dense(x, c_in), wv, &mut out, shift * seqs * c_out, c_out as isize, 1, 1.0);
        }
        let rg = self.rg(input) || self.rg(kernel);
        Ok(self.push(Tensor::new(&[t_len, seqs, c_out], out)?, Op::Conv1d { input, kernel, dilation }, rg))
    }

    /// Populates gradients of `loss` on every tracked leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(HvisError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let g = g.unwrap_or_else(|| vec![0.0; node.value.numel()]);
                node.value.set_grad(g)?;
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            // Later contributions go through a fresh buffer so that each one is
            // rounded on its own before the sum; equal and opposite paths cancel exactly.
            match &mut grads[v.0] {
                None => {
                    let mut fresh = vec![0.0; nodes[v.0].value.numel()];
                    f(&mut fresh);
                    grads[v.0] = Some(fresh);
                }
                Some(slot) => {
                    let mut part = vec![0.0; slot.len()];
                    f(&mut part);
                    for (s, p) in slot.iter_mut().zip(part) {
                        *s += p;
                    }
                }
            }
        };
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
                let n = nodes[b.0].value.shape()[1];
                let av = nodes[a.0].value.values();
                let bv = nodes[b.0].value.values();
                acc(*a, &mut |ga| gemm(m, n, k, g, false, bv, true, ga, 1.0));
                acc(*b, &mut |gb| gemm(k, m, n, av, true, g, false, gb, 1.0));
            }
            Op::Transpose(a) => {
                let (r, c) = (out.shape()[0], out.shape()[1]);
                // out is r x c, input is c x r
                acc(*a, &mut |ga| {
                    for x in 0..c {
                        for y in 0..r {
                            ga[x * r + y] += g[y * c + x];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(d, s)| *d -= s));
            }
            Op::Mul(a, b) => {
                let av = nodes[a.0].value.values();
                let bv = nodes[b.0].value.values();
                acc(*a, &mut |ga| {
                    for ((d, s), y) in ga.iter_mut().zip(g).zip(bv) {
                        *d += s * y;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((d, s), x) in gb.iter_mut().zip(g).zip(av) {
                        *d += s * x;
                    }
                });
            }
            Op::AddBias(x, b) => {
                acc(*x, &mut |gx| add_into(gx, g));
                acc(*b, &mut |gb| {
                    let c = gb.len();
                    for (j, s) in g.iter().enumerate() {
                        gb[j % c] += s;
                    }
                });
            }
            Op::Scale(a, f) => acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(d, s)| *d += f * s)),
            Op::Tanh(a) => {
                let y = out.values();
                acc(*a, &mut |ga| {
                    for ((d, s), y) in ga.iter_mut().zip(g).zip(y) {
                        *d += s * (1.0 - y * y);
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = out.values();
                acc(*a, &mut |ga| {
                    for ((d, s), y) in ga.iter_mut().zip(g).zip(y) {
                        *d += s * y * (1.0 - y);
                    }
                });
            }
            Op::Relu(a) => {
                let x = nodes[a.0].value.values();
                acc(*a, &mut |ga| {
                    for ((d, s), x) in ga.iter_mut().zip(g).zip(x) {
                        if *x > 0.0 {
                            *d += s;
                        }
                    }
                });
            }
            Op::Dropout(a, mask) => acc(*a, &mut |ga| {
                for ((d, s), m) in ga.iter_mut().zip(g).zip(mask) {
                    *d += s * m;
                }
            }),
            Op::Sum(a) => acc(*a, &mut |ga| ga.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(a) => {
                let n = nodes[a.0].value.numel() as f64;
                acc(*a, &mut |ga| ga.iter_mut().for_each(|d| *d += g[0] / n));
            }
            Op::Reshape(a) => acc(*a, &mut |ga| add_into(ga, g)),
            Op::Narrow { input, axis, start } => {
                let shape = nodes[input.0].value.shape();
                let len = out.shape()[*axis];
                let (outer, inner) = outer_inner(shape, *axis);
                acc(*input, &mut |ga| {
                    for o in 0..outer {
                        let dst = (o * shape[*axis] + start) * inner;
                        let src = o * len * inner;
                        add_into(&mut ga[dst..dst + len * inner], &g[src..src + len * inner]);
                    }
                });
            }
            Op::Concat { inputs, axis } => {
                let (outer, inner) = outer_inner(out.shape(), *axis);
                let total = out.shape()[*axis] * inner;
                let mut offset = 0;
                for v in inputs {
                    let len = nodes[v.0].value.shape()[*axis] * inner;
                    acc(*v, &mut |gv| {
                        for o in 0..outer {
                            let src = o * total + offset;
                            add_into(&mut gv[o * len..(o + 1) * len], &g[src..src + len]);
                        }
                    });
                    offset += len;
                }
            }
            Op::Permute { input, perm } => {
                let mut inverse = vec![0; perm.len()];
                for (d, &p) in perm.iter().enumerate() {
                    inverse[p] = d;
                }
                let (_, back) = permute_values(g, out.shape(), &inverse);
                acc(*input, &mut |ga| add_into(ga, &back));
            }
            Op::Conv1d { input, kernel, dilation } => {
                let (t_len, seqs, c_in) = {
                    let s = nodes[input.0].value.shape();
                    (s[0], s[1], s[2])
                };
                let c_out = out.shape()[2];
                let width = nodes[kernel.0].value.shape()[2];
                let x = nodes[input.0].value.values();
                let w = nodes[kernel.0].value.values();
                acc(*input, &mut |gx| {
                    for tap in 0..width {
                        let shift = (width - 1 - tap) * dilation;
                        if shift >= t_len {
                            continue;
                        }
                        let rows = (t_len - shift) * seqs;
                        let gv = View { data: g, offset: shift * seqs * c_out, row_stride: c_out as isize, col_stride: 1 };
                        let wv = View {
                            data: w,
                            offset: tap,
                            row_stride: (c_in * width) as isize,
                            col_stride: width as isize,
                        };
                        gemm_view(rows, c_out, c_in, gv, wv, gx, 0, c_in as isize, 1, 1.0);
                    }
                });
                acc(*kernel, &mut |gw| {
                    for tap in 0..width {
                        let shift = (width - 1 - tap) * dilation;
                        if shift >= t_len {
                            continue;
                        }
                        let rows = (t_len - shift) * seqs;
                        let gt = View { data: g, offset: shift * seqs * c_out, row_stride: 1, col_stride: c_out as isize };
                        gemm_view(
                            c_out,
                            rows,
                            c_in,
                            gt,
                            View::dense(x, c_in),
                            gw,
                            tap,
                            (c_in * width) as isize,
                            width as isize,
                            1.0,
                        );
                    }
                });
            }
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
