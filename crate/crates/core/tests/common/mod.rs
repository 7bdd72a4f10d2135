//! Shared oracles for the integration tests: a central-difference gradient
//! checker and small random problems for each differentiable piece.

#![allow(dead_code)]

pub mod invariants;

use hvis_core::autodiff::nn::{conv1d_causal_ct, gru_cell, GruParams, Linear, Mode, SeedRng};
use hvis_core::autodiff::{Bindings, ParamId, ParamStore, Tape, Tensor, Var};
use hvis_core::data::SkeletonSpec;
use hvis_core::dln::{dtc_tcn_config, rank_joints, Dtc};
use hvis_core::hvm::{gcn_layer, ra_layer, va_layer, Activation, AdjacencyPack, Encoder, EncoderKind, GcnParams, RaParams, ScaleMaps, VaParams};
use hvis_core::sln::{critic_loss, generator_loss, joint_loss, Critic, Ltf, Sln, SlnConfig, SlnVariant, Tiu, TiuConfig};
use hvis_core::Result;
use rand::{Rng, SeedableRng};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Coordinates sampled per tensor.
const PER_TENSOR: usize = 6;

type Forward = Box<dyn Fn(&mut Tape, &mut Bindings, &[Var]) -> Result<Var>>;

pub struct Problem {
    pub inputs: Vec<Tensor>,
    pub store: ParamStore,
    pub forward: Forward,
}

pub fn uniform(shape: &[usize], rng: &mut SeedRng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Replaces every parameter with U(-scale, scale) so that zero-initialised
/// biases and heads are exercised too.
pub fn randomize(store: &mut ParamStore, scale: f64, rng: &mut SeedRng) {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).values_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

/// Random tree on `n` joints with up to `n` parts, all used.
pub fn toy_skeleton(n: usize, rng: &mut SeedRng) -> SkeletonSpec {
    let names = (0..n).map(|j| format!("j{j}")).collect();
    let parents: Vec<i64> = (0..n).map(|j| if j == 0 { -1 } else { rng.gen_range(0..j) as i64 }).collect();
    let parts_n = rng.gen_range(1..=n.min(3));
    let mut part_of: Vec<usize> = (0..n).map(|j| if j < parts_n { j } else { rng.gen_range(0..parts_n) }).collect();
    part_of.rotate_left(rng.gen_range(0..n));
    SkeletonSpec::new(names, &parents, part_of).unwrap()
}

fn sample(len: usize, rng: &mut SeedRng) -> Vec<usize> {
    if len <= PER_TENSOR {
        (0..len).collect()
    } else {
        (0..PER_TENSOR).map(|_| rng.gen_range(0..len)).collect()
    }
}

fn loss_value(p: &Problem, inputs: &[Tensor], store: &ParamStore, weights: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let mut b = Bindings::frozen(store);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = (p.forward)(&mut tape, &mut b, &vars).unwrap();
    tape.values(out).iter().zip(weights).map(|(a, w)| a * w).sum()
}

/// Relative error `|g - n| / max(|g|, |n|)` between the tape gradient and the
/// central-difference estimate of `sum(R * f)` for a fixed random `R`, over a
/// sample of coordinates from every input and parameter tensor. Norms below
/// `1e-6` are floored so that all-zero gradients compare by absolute error.
pub fn check(p: &Problem, seed: u64) -> f64 {
    let mut rng = SeedRng::seed_from_u64(seed ^ 0x9e37);
    let out_len = {
        let mut tape = Tape::new();
        let mut b = Bindings::frozen(&p.store);
        let vars: Vec<Var> = p.inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = (p.forward)(&mut tape, &mut b, &vars).unwrap();
        tape.value(out).numel()
    };
    let weights: Vec<f64> = (0..out_len).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let mut tape = Tape::new();
    let mut b = Bindings::trainable(&p.store);
    let vars: Vec<Var> = p.inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = (p.forward)(&mut tape, &mut b, &vars).unwrap();
    let shape = tape.shape(out).to_vec();
    let r = tape.constant(Tensor::new(&shape, weights.clone()).unwrap());
    let prod = tape.mul(out, r).unwrap();
    let loss = tape.sum(prod);
    tape.backward(loss).unwrap();
    let input_grads: Vec<Vec<f64>> = vars
        .iter()
        .zip(&p.inputs)
        .map(|(v, t)| tape.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    let param_grads = b.grads(&tape);

    let (mut diff, mut an, mut nn) = (0.0f64, 0.0f64, 0.0f64);
    let mut visit = |analytic: f64, numeric: f64| {
        diff += (analytic - numeric).powi(2);
        an += analytic * analytic;
        nn += numeric * numeric;
    };
    for (i, t) in p.inputs.iter().enumerate() {
        for k in sample(t.numel(), &mut rng) {
            let mut plus = p.inputs.clone();
            plus[i].values_mut()[k] += STEP;
            let mut minus = p.inputs.clone();
            minus[i].values_mut()[k] -= STEP;
            let numeric = (loss_value(p, &plus, &p.store, &weights) - loss_value(p, &minus, &p.store, &weights)) / (2.0 * STEP);
            visit(input_grads[i][k], numeric);
        }
    }
    let ids: Vec<ParamId> = p.store.ids().collect();
    for id in ids {
        for k in sample(p.store.get(id).numel(), &mut rng) {
            let mut plus = p.store.clone();
            plus.get_mut(id).values_mut()[k] += STEP;
            let mut minus = p.store.clone();
            minus.get_mut(id).values_mut()[k] -= STEP;
            let numeric = (loss_value(p, &p.inputs, &plus, &weights) - loss_value(p, &p.inputs, &minus, &weights)) / (2.0 * STEP);
            visit(param_grads[id.index()][k], numeric);
        }
    }
    diff.sqrt() / an.sqrt().max(nn.sqrt()).max(1e-6)
}

fn op(inputs: Vec<Tensor>, f: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static) -> Problem {
    Problem { inputs, store: ParamStore::new(), forward: Box::new(move |t, _, v| f(t, v)) }
}

/// Names accepted by [`problem`]: every tape operation, then composed blocks.
pub const OPS: &[&str] = &[
    "matmul", "transpose", "add", "sub", "mul", "add_bias", "scale", "tanh", "sigmoid", "relu", "dropout", "sum", "mean",
    "reshape", "narrow", "concat", "permute", "conv1d_causal", "conv1d_causal_ct",
];
pub const BLOCKS: &[&str] = &[
    "linear", "gru_cell", "ra_layer", "va_layer", "gcn_layer", "encoder", "tiu", "ltf", "critic", "critic_loss", "generator_loss",
    "joint_loss", "sln", "dtc",
];

pub fn problem(name: &str, seed: u64) -> Problem {
    let mut rng = SeedRng::seed_from_u64(seed);
    let r = &mut rng;
    let (a, b, c) = (r.gen_range(1..5), r.gen_range(1..5), r.gen_range(1..5));
    match name {
        "matmul" => op(vec![uniform(&[a, b], r), uniform(&[b, c], r)], |t, v| t.matmul(v[0], v[1])),
        "transpose" => op(vec![uniform(&[a, b], r)], |t, v| t.transpose(v[0])),
        "add" => op(vec![uniform(&[a, b], r), uniform(&[a, b], r)], |t, v| t.add(v[0], v[1])),
        "sub" => op(vec![uniform(&[a, b], r), uniform(&[a, b], r)], |t, v| t.sub(v[0], v[1])),
        "mul" => op(vec![uniform(&[a, b], r), uniform(&[a, b], r)], |t, v| t.mul(v[0], v[1])),
        "add_bias" => op(vec![uniform(&[a, b, c], r), uniform(&[c], r)], |t, v| t.add_bias(v[0], v[1])),
        "scale" => {
            let k = r.gen_range(-2.0..2.0);
            op(vec![uniform(&[a, b], r)], move |t, v| Ok(t.scale(v[0], k)))
        }
        "tanh" => op(vec![uniform(&[a, b], r)], |t, v| Ok(t.tanh(v[0]))),
        "sigmoid" => op(vec![uniform(&[a, b], r)], |t, v| Ok(t.sigmoid(v[0]))),
        "relu" => op(vec![uniform(&[a, b], r)], |t, v| Ok(t.relu(v[0]))),
        "dropout" => {
            let rate = r.gen_range(0.0..0.6);
            op(vec![uniform(&[a, b], r)], move |t, v| t.dropout(v[0], rate, true, &mut SeedRng::seed_from_u64(seed)))
        }
        "sum" => op(vec![uniform(&[a, b], r)], |t, v| Ok(t.sum(v[0]))),
        "mean" => op(vec![uniform(&[a, b], r)], |t, v| Ok(t.mean(v[0]))),
        "reshape" => op(vec![uniform(&[a, b, c], r)], move |t, v| t.reshape(v[0], &[c, a * b])),
        "narrow" => {
            let axis = r.gen_range(0..3);
            let dims = [a, b, c];
            let start = r.gen_range(0..dims[axis]);
            let len = r.gen_range(1..=dims[axis] - start);
            op(vec![uniform(&dims, r)], move |t, v| t.narrow(v[0], axis, start, len))
        }
        "concat" => {
            let axis = r.gen_range(0..2);
            let other = if axis == 0 { [c, b] } else { [a, c] };
            op(vec![uniform(&[a, b], r), uniform(&other, r)], move |t, v| t.concat(&[v[0], v[1]], axis))
        }
        "permute" => {
            let mut perm = [0usize, 1, 2, 3];
            for i in (1..4).rev() {
                perm.swap(i, r.gen_range(0..=i));
            }
            op(vec![uniform(&[a, b, c, 2], r)], move |t, v| t.permute(v[0], &perm))
        }
        "conv1d_causal" => {
            let (w, d) = (r.gen_range(1..4), r.gen_range(1..4));
            op(vec![uniform(&[a + 3, b, c], r), uniform(&[2, c, w], r)], move |t, v| t.conv1d_causal(v[0], v[1], d))
        }
        "conv1d_causal_ct" => {
            let (w, d) = (r.gen_range(1..4), r.gen_range(1..4));
            op(vec![uniform(&[c, a + 3], r), uniform(&[2, c, w], r)], move |t, v| conv1d_causal_ct(t, v[0], v[1], d))
        }
        _ => block(name, seed, rng),
    }
}

fn block(name: &str, seed: u64, mut rng: SeedRng) -> Problem {
    let r = &mut rng;
    let mut store = ParamStore::new();
    let n = r.gen_range(1..=4);
    let o = r.gen_range(2..=5);
    let f = r.gen_range(1..=3);
    let batch = r.gen_range(1..=2);
    let (cin, cout) = (r.gen_range(1..=3), r.gen_range(1..=3));
    let problem = |store: ParamStore, inputs: Vec<Tensor>, forward: Forward| Problem { inputs, store, forward };
    let mut p = match name {
        "linear" => {
            let l = Linear::new(&mut store, "l", cin, cout, true, r);
            problem(store, vec![uniform(&[batch + 1, cin], r)], Box::new(move |t, p, v| l.forward(t, p, v[0])))
        }
        "gru_cell" => {
            let g = GruParams::new(&mut store, "g", cin, cout, r);
            problem(
                store,
                vec![uniform(&[batch, cin], r), uniform(&[batch, cout], r)],
                Box::new(move |t, p, v| gru_cell(t, p, v[0], v[1], &g)),
            )
        }
        "ra_layer" | "va_layer" | "gcn_layer" => {
            let skel = toy_skeleton(n, r);
            let pack = AdjacencyPack::new(&skel, o).unwrap();
            let maps = ScaleMaps::new(&skel, o).unwrap();
            let nodes = pack.nodes();
            let x = uniform(&[nodes, batch * cin], r);
            let forward: Forward = match name {
                "ra_layer" => {
                    let l = RaParams::new(&mut store, "ra", nodes, cin, cout, r);
                    Box::new(move |t, p, v| ra_layer(t, p, v[0], &pack, &l, Activation::Tanh))
                }
                "va_layer" => {
                    let l = VaParams::new(&mut store, "va", cin, cout, r);
                    Box::new(move |t, p, v| va_layer(t, p, v[0], &pack, &maps, &l, Activation::Tanh))
                }
                _ => {
                    let l = GcnParams::new(&mut store, "gcn", cin, cout, r);
                    Box::new(move |t, p, v| gcn_layer(t, p, v[0], &pack, &l, Activation::Tanh))
                }
            };
            problem(store, vec![x], forward)
        }
        "encoder" => {
            let skel = toy_skeleton(n, r);
            let enc = Encoder::new(&mut store, &skel, o, &[3, 2, 3, 2], EncoderKind::Hierarchical, r).unwrap();
            problem(store, vec![uniform(&[o, n, batch, 3], r)], Box::new(move |t, p, v| enc.forward(t, p, v[0])))
        }
        "tiu" => {
            let cfg = TiuConfig { channels: 3, latent: 4, ..TiuConfig::default() };
            let tiu = Tiu::new(&mut store, "tiu", cin, &cfg, r).unwrap();
            problem(
                store,
                vec![uniform(&[o, batch, cin], r)],
                Box::new(move |t, p, v| tiu.latent(t, p, v[0], &mut Mode::Train(&mut SeedRng::seed_from_u64(seed)))),
            )
        }
        "ltf" => {
            let ltf = Ltf::new(&mut store, "ltf", 4, r);
            problem(
                store,
                vec![uniform(&[batch, 4], r), uniform(&[batch, 3], r)],
                Box::new(move |t, p, v| ltf.rollout(t, p, v[0], v[1], f)),
            )
        }
        "critic" | "critic_loss" | "generator_loss" => {
            let critic = Critic::new(&mut store, o, f, n, 4, 3, r).unwrap();
            let obs = uniform(&[o, n, batch, 3], r);
            let fut = uniform(&[f, n, batch, 3], r);
            let truth = uniform(&[f, n, batch, 3], r);
            let lambda = r.gen_range(0.0..2.0);
            let forward: Forward = match name {
                "critic" => Box::new(move |t, p, v| critic.score(t, p, v[0], v[1])),
                "critic_loss" => Box::new(move |t, p, v| critic_loss(t, &critic, p, v[0], v[1], v[2])),
                _ => Box::new(move |t, p, v| generator_loss(t, &critic, p, v[0], v[1], v[2], lambda)),
            };
            problem(store, vec![obs, fut, truth], forward)
        }
        "joint_loss" => problem(
            store,
            vec![uniform(&[f, n, batch, 3], r), uniform(&[f, n, batch, 3], r)],
            Box::new(|t, _, v| joint_loss(t, v[0], v[1])),
        ),
        "sln" => {
            let skel = toy_skeleton(n, r);
            let cfg = SlnConfig {
                encoder_widths: vec![3, 2, 2],
                tiu: TiuConfig { blocks: 1, channels: 2, latent: 3, ..TiuConfig::default() },
                variant: SlnVariant::Full,
                ..SlnConfig::new(o, f)
            };
            let sln = Sln::new(&mut store, &skel, &cfg, r).unwrap();
            problem(
                store,
                vec![uniform(&[o, n, batch, 3], r)],
                Box::new(move |t, p, v| sln.forward(t, p, v[0], &mut Mode::Train(&mut SeedRng::seed_from_u64(seed)))),
            )
        }
        "dtc" => {
            // deliberate net on one hard joint, 5 observed and 2 future frames
            let errors: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..1.0)).collect();
            let map = rank_joints(&errors, 1).unwrap();
            let cfg = TiuConfig { channels: 3, ..dtc_tcn_config(2, 1) };
            let dtc = Dtc::new(&mut store, &map, 5, 2, &cfg, r).unwrap();
            problem(
                store,
                vec![uniform(&[5, 1, batch, 3], r)],
                Box::new(move |t, p, v| dtc.forward(t, p, v[0], &mut Mode::Train(&mut SeedRng::seed_from_u64(seed)))),
            )
        }
        other => panic!("no gradient problem named {other}"),
    };
    randomize(&mut p.store, 0.5, r);
    p
}

/// Worst relative error of `name` over `instances` random problems.
pub fn worst_error(name: &str, instances: u64) -> f64 {
    (0..instances).map(|s| check(&problem(name, 1000 + s), s)).fold(0.0, f64::max)
}

/// Result of fitting a clipped critic to a separable toy problem.
pub struct WganToy {
    pub gaps: Vec<f64>,
    pub max_weight: f64,
    pub clip: f64,
}

/// `E D(real) - E D(fake)` before and after each of `steps` critic updates.
/// Real futures keep moving at the observed velocity; fakes freeze at the
/// last observed frame, so the two are linearly separable.
pub fn wgan_toy(seed: u64, steps: usize) -> WganToy {
    use hvis_core::autodiff::AdamState;
    use hvis_core::sln::critic_train_step;
    let mut rng = SeedRng::seed_from_u64(seed);
    let (o, f, n, b) = (3, 2, 2, 16);
    let clip = 0.01;
    let mut store = ParamStore::new();
    let critic = Critic::new(&mut store, o, f, n, 256, 3, &mut rng).unwrap();
    store.clip(clip);
    let mut obs = Tensor::zeros(&[o, n, b, 3]);
    let mut real = Tensor::zeros(&[f, n, b, 3]);
    let mut fake = Tensor::zeros(&[f, n, b, 3]);
    for k in 0..n * b * 3 {
        let (start, vel) = (rng.gen_range(-1.0..1.0), rng.gen_range(0.2..0.6));
        for t in 0..o {
            obs.values_mut()[t * n * b * 3 + k] = start + vel * t as f64;
        }
        for t in 0..f {
            real.values_mut()[t * n * b * 3 + k] = start + vel * (o + t) as f64;
            fake.values_mut()[t * n * b * 3 + k] = start + vel * (o - 1) as f64;
        }
    }
    let gap = |store: &ParamStore| {
        let mut tape = Tape::new();
        let mut p = Bindings::frozen(store);
        let ov = tape.constant(obs.clone());
        let fv = tape.constant(fake.clone());
        let rv = tape.constant(real.clone());
        let l = critic_loss(&mut tape, &critic, &mut p, ov, fv, rv).unwrap();
        -tape.scalar_value(l)
    };
    let mut adam = AdamState::new(&store, 0.001).unwrap();
    let mut gaps = vec![gap(&store)];
    for _ in 0..steps {
        critic_train_step(&critic, &mut store, &mut adam, &obs, &fake, &real, clip).unwrap();
        gaps.push(gap(&store));
    }
    let max_weight = store.iter().flat_map(|(_, t)| t.values().iter().map(|v| v.abs())).fold(0.0, f64::max);
    WganToy { gaps, max_weight, clip }
}
