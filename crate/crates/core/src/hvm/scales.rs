//! Joint, part and body scales and the maps between them.

use super::adjacency::SCALES;
use crate::autodiff::{Tape, Tensor, Var};
use crate::data::SkeletonSpec;
use crate::error::{HvisError, Result};

/// Averaging maps from joints to coarser scales, per frame and expanded over
/// a window of `frames` frames.
#[derive(Clone, Debug)]
pub struct ScaleMaps {
    /// `[P, N]`, row `p` averages the joints of part `p`.
    pub joint_to_part: Tensor,
    /// `[1, N]`, averages every joint.
    pub joint_to_body: Tensor,
    /// Per scale `[K_m * O, N * O]`; `None` for the joint scale.
    pool: [Option<Tensor>; SCALES],
    /// Per scale `[N * O, K_m * O]`, copies each scale-node back to its member joints.
    unpool: [Option<Tensor>; SCALES],
    pub nodes_per_frame: [usize; SCALES],
    pub frames: usize,
}

fn expand(per_frame: &Tensor, frames: usize) -> Tensor {
    let (k, n) = (per_frame.shape()[0], per_frame.shape()[1]);
    let cols = n * frames;
    let mut out = Tensor::zeros(&[k * frames, cols]);
    let v = out.values_mut();
    for t in 0..frames {
        for r in 0..k {
            for c in 0..n {
                v[(t * k + r) * cols + t * n + c] = per_frame.at2(r, c);
            }
        }
    }
    out
}

impl ScaleMaps {
    pub fn new(skeleton: &SkeletonSpec, frames: usize) -> Result<Self> {
        let n = skeleton.joint_count();
        let parts = skeleton.part_count();
        let mut sizes = vec![0usize; parts];
        for j in 0..n {
            sizes[skeleton.part_of(j)] += 1;
        }
        if let Some(p) = sizes.iter().position(|&s| s == 0) {
            return Err(HvisError::Contract(format!("part {p} has no joints")));
        }
        let joint_to_part = Tensor::from_fn(&[parts, n], |i| {
            let (p, j) = (i / n, i % n);
            if skeleton.part_of(j) == p {
                1.0 / sizes[p] as f64
            } else {
                0.0
            }
        });
        let joint_to_body = Tensor::filled(&[1, n], 1.0 / n as f64);
        let membership = |m: &Tensor| Tensor::from_fn(&[n, m.shape()[0]], |i| {
            let (j, k) = (i / m.shape()[0], i % m.shape()[0]);
            if m.at2(k, j) > 0.0 { 1.0 } else { 0.0 }
        });
        let pool = [None, Some(expand(&joint_to_part, frames)), Some(expand(&joint_to_body, frames))];
        let unpool = [
            None,
            Some(expand(&membership(&joint_to_part), frames)),
            Some(expand(&membership(&joint_to_body), frames)),
        ];
        Ok(ScaleMaps { joint_to_part, joint_to_body, pool, unpool, nodes_per_frame: [n, parts, 1], frames })
    }

    pub fn pool_matrix(&self, m: usize) -> Option<&Tensor> {
        self.pool.get(m).and_then(Option::as_ref)
    }

    pub fn unpool_matrix(&self, m: usize) -> Option<&Tensor> {
        self.unpool.get(m).and_then(Option::as_ref)
    }
}

fn check_scale(m: usize) -> Result<()> {
    if m < SCALES {
        Ok(())
    } else {
        Err(HvisError::Parameter(format!("scale {m} outside 0..{SCALES}")))
    }
}

/// `[N*O, B*C]` joint features to `[K_m*O, B*C]` scale features.
pub fn pool_to_scale(tape: &mut Tape, x: Var, maps: &ScaleMaps, m: usize) -> Result<Var> {
    check_scale(m)?;
    match maps.pool_matrix(m) {
        None => Ok(x),
        Some(pm) => {
            let pm = tape.constant(pm.clone());
            tape.matmul(pm, x)
        }
    }
}

/// Inverse broadcast of [`pool_to_scale`]: every joint receives its scale-node's row.
pub fn unpool_from_scale(tape: &mut Tape, x: Var, maps: &ScaleMaps, m: usize) -> Result<Var> {
    check_scale(m)?;
    match maps.unpool_matrix(m) {
        None => Ok(x),
        Some(um) => {
            let um = tape.constant(um.clone());
            tape.matmul(um, x)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_average_members() {
        let skel = SkeletonSpec::default_body();
        let maps = ScaleMaps::new(&skel, 2).unwrap();
        for m in 1..SCALES {
            let p = maps.pool_matrix(m).unwrap();
            for r in 0..p.shape()[0] {
                let s: f64 = (0..p.shape()[1]).map(|c| p.at2(r, c)).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
        // part 1 holds joints 4 and 5
        assert_eq!(maps.joint_to_part.at2(1, 4), 0.5);
        assert_eq!(maps.joint_to_part.at2(1, 5), 0.5);
        assert_eq!(maps.joint_to_part.at2(1, 6), 0.0);
    }

    #[test]
    fn pool_then_unpool_is_constant_per_part() {
        let skel = SkeletonSpec::default_body();
        let maps = ScaleMaps::new(&skel, 1).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[12, 2], |i| i as f64));
        let p = pool_to_scale(&mut tape, x, &maps, 1).unwrap();
        let u = unpool_from_scale(&mut tape, p, &maps, 1).unwrap();
        let v = tape.values(u);
        // joints 4, 5 are part 1: mean of rows 4 and 5 = [9, 10]
        assert_eq!(&v[8..12], &[9.0, 10.0, 9.0, 10.0]);
        assert!(pool_to_scale(&mut tape, x, &maps, 3).is_err());
    }
}
