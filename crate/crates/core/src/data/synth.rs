//! Seeded synthetic motion corpus.
//!
//! Three kinds of joints by construction:
//! - trunk (part 0): static for the whole sequence;
//! - limb joints: elliptic sinusoidal swings, fixed frequency and phase per joint;
//! - designated hard joints: larger swings whose frequency is itself modulated,
//!   plus a small mean-reverting noise walk.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};

use super::sequence::MotionSequence;
use super::skeleton::SkeletonSpec;
use crate::autodiff::nn::SeedRng;
use crate::autodiff::Tensor;
use crate::error::{HvisError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_sequences: usize,
    pub frames: usize,
    pub fps: f64,
    pub seed: u64,
    pub observed: usize,
    pub future: usize,
    pub hard_joints: Vec<usize>,
}

impl SynthConfig {
    /// 200 sequences of 100 frames at 25 fps with the default hard-joint choice.
    pub fn for_skeleton(skeleton: &SkeletonSpec, seed: u64) -> Self {
        SynthConfig {
            n_sequences: 200,
            frames: 100,
            fps: 25.0,
            seed,
            observed: 25,
            future: 25,
            hard_joints: default_hard_joints(skeleton),
        }
    }
}

/// First `ceil(N/4)` limb end-effectors (leaf joints outside the trunk).
pub fn default_hard_joints(skeleton: &SkeletonSpec) -> Vec<usize> {
    let n = skeleton.joint_count();
    let has_child: Vec<bool> = (0..n).map(|j| skeleton.edges().any(|(p, _)| p == j)).collect();
    let want = n.div_ceil(4);
    let mut leaves: Vec<usize> = (0..n).filter(|&j| skeleton.part_of(j) != 0 && !has_child[j]).collect();
    if leaves.len() < want {
        leaves.extend((0..n).filter(|&j| skeleton.part_of(j) != 0 && has_child[j]));
    }
    leaves.truncate(want);
    leaves.sort_unstable();
    leaves
}

/// Rest pose of each joint relative to the root, in meters.
fn rest_pose(skeleton: &SkeletonSpec) -> Vec<[f64; 3]> {
    if *skeleton == SkeletonSpec::default_body() {
        return vec![
            [0.0, 0.0, 0.0],
            [0.0, 0.25, 0.0],
            [0.0, 0.5, 0.0],
            [0.0, 0.65, 0.0],
            [0.3, 0.3, 0.0],
            [0.3, 0.05, 0.0],
            [-0.3, 0.3, 0.0],
            [-0.3, 0.05, 0.0],
            [0.1, -0.45, 0.0],
            [0.1, -0.9, 0.0],
            [-0.1, -0.45, 0.0],
            [-0.1, -0.9, 0.0],
        ];
    }
    let n = skeleton.joint_count();
    let mut pose = vec![None; n];
    pose[skeleton.root()] = Some([0.0; 3]);
    while pose.iter().any(Option::is_none) {
        for j in 0..n {
            if let (None, Some(p)) = (pose[j], skeleton.parent(j)) {
                if let Some(pp) = pose[p] {
                    let a = j as f64 * 1.3;
                    pose[j] = Some([pp[0] + 0.15 * a.cos(), pp[1] - 0.2, pp[2] + 0.15 * a.sin()]);
                }
            }
        }
    }
    pose.into_iter().map(Option::unwrap).collect()
}

enum Motion {
    Static,
    Swing { amp: [f64; 2], freq: f64, phase: f64, lag: f64 },
    Hard { amp: [f64; 2], base: f64, mod_freq: f64, mod_phase: f64, phase: f64, lag: f64 },
}

pub fn synth_corpus(skeleton: &SkeletonSpec, cfg: &SynthConfig) -> Result<Vec<MotionSequence>> {
    let n = skeleton.joint_count();
    if cfg.n_sequences == 0 || !(cfg.fps > 0.0) {
        return Err(HvisError::Parameter("synthetic corpus needs n_sequences >= 1 and fps > 0".into()));
    }
    if cfg.frames < 2 * (cfg.observed + cfg.future) {
        return Err(HvisError::Parameter(format!(
            "synthetic sequences need at least {} frames, got {}",
            2 * (cfg.observed + cfg.future),
            cfg.frames
        )));
    }
    for &h in &cfg.hard_joints {
        if h >= n || skeleton.part_of(h) == 0 {
            return Err(HvisError::Parameter(format!("hard joint {h} must be a non-trunk joint index below {n}")));
        }
    }
    let rest = rest_pose(skeleton);
    let mut rng = SeedRng::seed_from_u64(cfg.seed);
    let dt = 1.0 / cfg.fps;

    let mut corpus = Vec::with_capacity(cfg.n_sequences);
    for s in 0..cfg.n_sequences {
        let origin = [rng.gen_range(-1.0..1.0), rng.gen_range(0.8..1.0), rng.gen_range(-1.0..1.0)];
        let motions: Vec<Motion> = (0..n)
            .map(|j| {
                if skeleton.part_of(j) == 0 {
                    Motion::Static
                } else if cfg.hard_joints.contains(&j) {
                    Motion::Hard {
                        amp: [rng.gen_range(0.10..0.15), rng.gen_range(0.10..0.15)],
                        base: rng.gen_range(0.7..1.1),
                        mod_freq: rng.gen_range(0.15..0.4),
                        mod_phase: rng.gen_range(0.0..2.0 * PI),
                        phase: rng.gen_range(0.0..2.0 * PI),
                        lag: rng.gen_range(0.0..PI),
                    }
                } else {
                    Motion::Swing {
                        amp: [rng.gen_range(0.03..0.07), rng.gen_range(0.03..0.07)],
                        freq: rng.gen_range(0.3..0.7),
                        phase: rng.gen_range(0.0..2.0 * PI),
                        lag: rng.gen_range(0.0..PI),
                    }
                }
            })
            .collect();

        let mut vals = vec![0.0; cfg.frames * n * 3];
        for (j, motion) in motions.iter().enumerate() {
            let mut theta = match motion {
                Motion::Hard { phase, .. } => *phase,
                _ => 0.0,
            };
            let mut walk = [0.0f64; 3];
            for t in 0..cfg.frames {
                let time = t as f64 * dt;
                let offset = match motion {
                    Motion::Static => [0.0; 3],
                    Motion::Swing { amp, freq, phase, lag } => {
                        let th = 2.0 * PI * freq * time + phase;
                        [0.0, amp[0] * (th + lag).sin(), amp[1] * th.sin()]
                    }
                    Motion::Hard { amp, base, mod_freq, mod_phase, lag, .. } => {
                        if t > 0 {
                            let inst = base * (1.0 + 0.4 * (2.0 * PI * mod_freq * time + mod_phase).sin());
                            theta += 2.0 * PI * inst * dt;
                        }
                        for w in &mut walk {
                            *w = 0.9 * *w + rng.gen_range(-0.004..0.004);
                        }
                        [walk[0], amp[0] * (theta + lag).sin() + walk[1], amp[1] * theta.sin() + walk[2]]
                    }
                };
                let i = (t * n + j) * 3;
                for c in 0..3 {
                    vals[i + c] = origin[c] + rest[j][c] + offset[c];
                }
            }
        }
        let seq = MotionSequence::new(Tensor::new(&[cfg.frames, n, 3], vals)?, cfg.fps)?;
        corpus.push(seq.with_label(format!("synth-{s:04}")));
    }
    Ok(corpus)
}
