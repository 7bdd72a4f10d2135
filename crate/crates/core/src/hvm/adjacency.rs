//! Fixed graph operators over the flattened spatio-temporal node set.
//!
//! Node `t * K + k` is scale-node `k` (joint, part or body) at frame `t`,
//! where `K` is the number of scale-nodes per frame.

use crate::autodiff::Tensor;
use crate::data::SkeletonSpec;
use crate::error::{HvisError, Result};

pub const SCALES: usize = 3;

/// Skeleton edges inside every frame, same-joint edges between adjacent
/// frames, and unit self-loops. Shape `[N*O, N*O]`.
pub fn build_static_adjacency(skeleton: &SkeletonSpec, frames: usize) -> Tensor {
    let n = skeleton.joint_count();
    let j = n * frames;
    let mut a = Tensor::eye(j);
    let v = a.values_mut();
    let mut link = |x: usize, y: usize| {
        v[x * j + y] = 1.0;
        v[y * j + x] = 1.0;
    };
    for t in 0..frames {
        for (p, c) in skeleton.edges() {
            link(t * n + p, t * n + c);
        }
        if t + 1 < frames {
            for k in 0..n {
                link(t * n + k, (t + 1) * n + k);
            }
        }
    }
    a
}

/// Symmetric normalization `D^{-1/2} A D^{-1/2}` with `D` the row-sum degree.
pub fn normalize_adjacency(a: &Tensor) -> Result<Tensor> {
    let n = match *a.shape() {
        [r, c] if r == c => r,
        ref s => return Err(HvisError::dim("normalize_adjacency", format!("expected a square matrix, got {s:?}"))),
    };
    if let Some(bad) = a.values().iter().position(|v| *v < 0.0 || !v.is_finite()) {
        return Err(HvisError::Contract(format!(
            "adjacency entry ({}, {}) is {}; entries must be finite and non-negative",
            bad / n,
            bad % n,
            a.values()[bad]
        )));
    }
    let degree: Vec<f64> = (0..n)
        .map(|r| {
            let d: f64 = a.values()[r * n..(r + 1) * n].iter().sum();
            if d > 0.0 {
                Ok(d)
            } else {
                Err(HvisError::DegenerateInput { node: r })
            }
        })
        .collect::<Result<_>>()?;
    Ok(Tensor::from_fn(&[n, n], |i| a.values()[i] / (degree[i / n] * degree[i % n]).sqrt()))
}

/// Block-diagonal copies of a per-frame graph `[K, K]` over `frames` frames.
fn per_frame(block: &Tensor, frames: usize) -> Tensor {
    let k = block.shape()[0];
    let j = k * frames;
    let mut out = Tensor::zeros(&[j, j]);
    let v = out.values_mut();
    for t in 0..frames {
        for r in 0..k {
            for c in 0..k {
                v[(t * k + r) * j + t * k + c] = block.at2(r, c);
            }
        }
    }
    out
}

/// Self-loops plus links between the same scale-node in adjacent frames.
pub fn temporal_chain(nodes_per_frame: usize, frames: usize) -> Tensor {
    let j = nodes_per_frame * frames;
    let mut a = Tensor::eye(j);
    let v = a.values_mut();
    for t in 0..frames.saturating_sub(1) {
        for k in 0..nodes_per_frame {
            let (x, y) = (t * nodes_per_frame + k, (t + 1) * nodes_per_frame + k);
            v[x * j + y] = 1.0;
            v[y * j + x] = 1.0;
        }
    }
    a
}

/// Spatial graph of one frame at scale `m`: skeleton (joints), a star around
/// the trunk (parts) or a single node (body). Self-loops included.
pub fn spatial_block(skeleton: &SkeletonSpec, m: usize) -> Result<Tensor> {
    match m {
        0 => {
            let n = skeleton.joint_count();
            let mut a = Tensor::eye(n);
            for (p, c) in skeleton.edges() {
                a.values_mut()[p * n + c] = 1.0;
                a.values_mut()[c * n + p] = 1.0;
            }
            Ok(a)
        }
        1 => {
            let parts = skeleton.part_count();
            let mut a = Tensor::eye(parts);
            for p in 1..parts {
                a.values_mut()[p] = 1.0;
                a.values_mut()[p * parts] = 1.0;
            }
            Ok(a)
        }
        2 => Ok(Tensor::eye(1)),
        _ => Err(HvisError::Parameter(format!("scale {m} outside 0..{SCALES}"))),
    }
}

/// All fixed operators used by the encoder for one skeleton and window length.
#[derive(Clone, Debug)]
pub struct AdjacencyPack {
    /// Raw static graph (self-loops, skeleton and temporal edges).
    pub a_static: Tensor,
    /// `D^{-1/2} A_static D^{-1/2}`.
    pub a_static_norm: Tensor,
    /// Normalized spatial adjacency per scale, `[J_m, J_m]`.
    pub a_spatial: [Tensor; SCALES],
    /// Normalized temporal adjacency per scale, `[J_m, J_m]`.
    pub a_temporal: [Tensor; SCALES],
    /// `a_spatial[m] * a_temporal[m]`, cached.
    pub propagation: [Tensor; SCALES],
    pub joints: usize,
    pub frames: usize,
}

impl AdjacencyPack {
    pub fn new(skeleton: &SkeletonSpec, frames: usize) -> Result<Self> {
        if frames == 0 {
            return Err(HvisError::Parameter("window length must be positive".into()));
        }
        let a_static = build_static_adjacency(skeleton, frames);
        let a_static_norm = normalize_adjacency(&a_static)?;
        let nodes = [skeleton.joint_count(), skeleton.part_count(), 1];
        let mut spatial = Vec::with_capacity(SCALES);
        let mut temporal = Vec::with_capacity(SCALES);
        for (m, &k) in nodes.iter().enumerate() {
            spatial.push(normalize_adjacency(&per_frame(&spatial_block(skeleton, m)?, frames))?);
            temporal.push(normalize_adjacency(&temporal_chain(k, frames))?);
        }
        let mut pack = AdjacencyPack {
            a_static,
            a_static_norm,
            a_spatial: into_array(spatial),
            a_temporal: into_array(temporal),
            propagation: [Tensor::eye(1), Tensor::eye(1), Tensor::eye(1)],
            joints: skeleton.joint_count(),
            frames,
        };
        pack.refresh_propagation()?;
        Ok(pack)
    }

    /// Recomputes the cached per-scale products after editing the adjacencies.
    pub fn refresh_propagation(&mut self) -> Result<()> {
        for m in 0..SCALES {
            self.propagation[m] = self.a_spatial[m].matmul(&self.a_temporal[m])?;
        }
        Ok(())
    }

    pub fn nodes(&self) -> usize {
        self.joints * self.frames
    }
}

fn into_array(v: Vec<Tensor>) -> [Tensor; SCALES] {
    v.try_into().expect("one tensor per scale")
}
