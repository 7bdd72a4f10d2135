use super::sequence::MotionSequence;
use crate::autodiff::Tensor;
use crate::error::{HvisError, Result};

/// Observed frames and their immediate continuation, root-aligned at the
/// last observed frame.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowPair {
    pub observed: Tensor,
    pub future: Tensor,
    /// Frame index of `observed[0]` in the source sequence.
    pub start: usize,
}

impl WindowPair {
    pub fn observed_len(&self) -> usize {
        self.observed.shape()[0]
    }

    pub fn future_len(&self) -> usize {
        self.future.shape()[0]
    }

    pub fn joints(&self) -> usize {
        self.observed.shape()[1]
    }

    /// Position of `joint` at observed frame `t`.
    pub fn observed_at(&self, t: usize, joint: usize) -> [f64; 3] {
        let i = (t * self.joints() + joint) * 3;
        let v = self.observed.values();
        [v[i], v[i + 1], v[i + 2]]
    }

    /// Re-aligns both halves so `root` is at the origin in the last observed frame.
    pub fn root_aligned(&self, root: usize) -> WindowPair {
        let r = self.observed_at(self.observed_len() - 1, root);
        let shift = |t: &Tensor| {
            let vals = t.values().iter().enumerate().map(|(i, v)| v - r[i % 3]).collect();
            Tensor::new(t.shape(), vals).expect("same shape")
        };
        WindowPair { observed: shift(&self.observed), future: shift(&self.future), start: self.start }
    }
}

/// Sliding windows of `observed + future` frames advancing by `stride`.
/// Sequences shorter than one window yield no windows.
pub fn make_windows(seq: &MotionSequence, observed: usize, future: usize, stride: usize, root: usize) -> Result<Vec<WindowPair>> {
    if observed == 0 || future == 0 || stride == 0 {
        return Err(HvisError::Parameter(format!(
            "window lengths and stride must be positive (observed {observed}, future {future}, stride {stride})"
        )));
    }
    if root >= seq.joints() {
        return Err(HvisError::Parameter(format!("root joint {root} out of range for {} joints", seq.joints())));
    }
    let span = observed + future;
    if seq.frames() < span {
        return Ok(Vec::new());
    }
    Ok((0..=seq.frames() - span)
        .step_by(stride)
        .map(|start| {
            WindowPair {
                observed: seq.slice_frames(start, observed),
                future: seq.slice_frames(start + observed, future),
                start,
            }
            .root_aligned(root)
        })
        .collect())
}

/// Stacks `[T, N, 3]` tensors into one node-major batch `[T, N, B, 3]`.
pub fn stack_batch(items: &[&Tensor]) -> Result<Tensor> {
    let first = items.first().ok_or_else(|| HvisError::Parameter("empty batch".into()))?;
    let shape = first.shape().to_vec();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(HvisError::dim("stack_batch", format!("items must be [frames, joints, 3], got {shape:?}")));
    }
    if let Some(bad) = items.iter().find(|t| t.shape() != &shape[..]) {
        return Err(HvisError::dim("stack_batch", format!("mixed shapes {shape:?} and {:?}", bad.shape())));
    }
    let (tn, b) = (shape[0] * shape[1], items.len());
    let mut vals = vec![0.0; tn * b * 3];
    for (k, item) in items.iter().enumerate() {
        for (r, xyz) in item.values().chunks_exact(3).enumerate() {
            let i = (r * b + k) * 3;
            vals[i..i + 3].copy_from_slice(xyz);
        }
    }
    Tensor::new(&[shape[0], shape[1], b, 3], vals)
}

/// Item `k` of a `[T, N, B, C]` batch as `[T, N, C]`.
pub fn unstack_item(batch: &Tensor, k: usize) -> Result<Tensor> {
    let (t, n, b, c) = match *batch.shape() {
        [t, n, b, c] if k < b => (t, n, b, c),
        ref s => return Err(HvisError::dim("unstack_item", format!("item {k} of batch {s:?}"))),
    };
    let mut vals = Vec::with_capacity(t * n * c);
    for r in 0..t * n {
        let i = (r * b + k) * c;
        vals.extend_from_slice(&batch.values()[i..i + c]);
    }
    Tensor::new(&[t, n, c], vals)
}
