//! Structural checks shared by the invariant tests and the acceptance run.
//! Each returns the first violation it finds.

use hvis_core::autodiff::nn::{Mode, SeedRng};
use hvis_core::autodiff::{Bindings, ParamStore, Tape, Tensor};
use hvis_core::checkpoint::CheckpointBundle;
use hvis_core::config::TrainConfig;
use hvis_core::data::{zero_velocity_baseline, SkeletonSpec};
use hvis_core::dln::{dtc_tcn_config, fuse_predictions, rank_joints, Dtc};
use hvis_core::hvm::{build_static_adjacency, normalize_adjacency, AdjacencyPack, Encoder, EncoderKind};
use hvis_core::pipeline::HimModel;
use hvis_core::sln::{Sln, SlnConfig, SlnVariant, Tiu, TiuConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use super::{toy_skeleton, uniform};

pub type Check = std::result::Result<(), String>;

fn small_sln(skel: &SkeletonSpec, o: usize, f: usize, rng: &mut SeedRng) -> (ParamStore, Sln) {
    let mut store = ParamStore::new();
    let cfg = SlnConfig {
        encoder_widths: vec![3, 4, 4],
        tiu: TiuConfig { channels: 4, latent: 8, ..TiuConfig::default() },
        ..SlnConfig::new(o, f)
    };
    let sln = Sln::new(&mut store, skel, &cfg, rng).unwrap();
    (store, sln)
}

/// Perturbing temporal-unit input step `k` leaves every output step before `k`
/// bit-identical, for the generator's unit and the deliberate network's.
pub fn causality(seeds: u64) -> Check {
    for seed in 0..seeds {
        let mut rng = SeedRng::seed_from_u64(seed);
        let cfg = if seed % 2 == 0 { TiuConfig::default() } else { dtc_tcn_config(2, 1) };
        let cfg = TiuConfig { channels: 3, latent: 2, ..cfg };
        let mut store = ParamStore::new();
        let tiu = Tiu::new(&mut store, "tcn", 2, &cfg, &mut rng).unwrap();
        super::randomize(&mut store, 0.5, &mut rng);
        let (t, s) = (12, 2);
        let run = |x: &Tensor| {
            let mut tape = Tape::new();
            let mut p = Bindings::frozen(&store);
            let v = tape.constant(x.clone());
            let y = tiu.sequence(&mut tape, &mut p, v, &mut Mode::Eval).unwrap();
            tape.value(y).clone()
        };
        let x = uniform(&[t, s, 2], &mut rng);
        let base = run(&x);
        let step = base.numel() / t;
        for k in 0..t {
            let mut x2 = x.clone();
            for v in &mut x2.values_mut()[k * s * 2..(k + 1) * s * 2] {
                *v += rng.gen_range(0.5..1.5);
            }
            let y = run(&x2);
            if y.values()[..k * step] != base.values()[..k * step] {
                return Err(format!("seed {seed}: perturbing step {k} changed an earlier output"));
            }
        }
    }
    Ok(())
}

/// Freshly initialised generator and deliberate network both repeat the last
/// observed frame, and so does their fusion.
pub fn zero_velocity_reduction(seeds: u64) -> Check {
    for seed in 0..seeds {
        let mut rng = SeedRng::seed_from_u64(seed);
        let n = rng.gen_range(2..=4);
        let (o, f) = (rng.gen_range(2..=5), rng.gen_range(1..=3));
        let skel = toy_skeleton(n, &mut rng);
        let (store, sln) = small_sln(&skel, o, f, &mut rng);
        let obs = uniform(&[o, n, 3], &mut rng);
        let y = sln.predict(&store, &obs.reshaped(&[o, n, 1, 3]).unwrap()).unwrap().reshaped(&[f, n, 3]).unwrap();
        let base = zero_velocity_baseline(&obs, f).unwrap();
        if y != base {
            return Err(format!("seed {seed}: generator at init differs from the zero-velocity baseline"));
        }
        let errors: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let map = rank_joints(&errors, rng.gen_range(1..=n)).unwrap();
        let mut dstore = ParamStore::new();
        let cfg = TiuConfig { channels: 4, ..dtc_tcn_config(f, map.m()) };
        let dtc = Dtc::new(&mut dstore, &map, o, f, &cfg, &mut rng).unwrap();
        let d = dtc.predict(&dstore, &dtc.select(&obs.reshaped(&[o, n, 1, 3]).unwrap()).unwrap()).unwrap();
        let fused = fuse_predictions(&y, Some(&d.reshaped(&[f, map.m(), 3]).unwrap()), &map).unwrap();
        if fused != base {
            return Err(format!("seed {seed}: fused prediction at init differs from the zero-velocity baseline"));
        }
    }
    Ok(())
}

/// Relabelling joints relabels encoder outputs the same way, given weights
/// copied over and the learnable relation permuted to match.
pub fn permutation_equivariance(seeds: u64) -> Check {
    for seed in 0..seeds {
        let mut rng = SeedRng::seed_from_u64(seed);
        let n = rng.gen_range(2..=5);
        let o = rng.gen_range(2..=4);
        let skel = toy_skeleton(n, &mut rng);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let skel2 = skel.permuted(&order).unwrap();
        let widths = [3, 4, 3, 4];
        let mut s1 = ParamStore::new();
        let e1 = Encoder::new(&mut s1, &skel, o, &widths, EncoderKind::Hierarchical, &mut rng).unwrap();
        super::randomize(&mut s1, 0.5, &mut rng);
        let mut s2 = ParamStore::new();
        let e2 = Encoder::new(&mut s2, &skel2, o, &widths, EncoderKind::Hierarchical, &mut rng).unwrap();
        let old_node = |u: usize| (u / n) * n + order[u % n];
        let nodes = n * o;
        for (name, t) in s1.iter() {
            let copy = if name.ends_with("a_dynamic") {
                Tensor::from_fn(&[nodes, nodes], |i| t.at2(old_node(i / nodes), old_node(i % nodes)))
            } else {
                t.clone()
            };
            s2.assign(name, &copy).unwrap();
        }
        let b = 2;
        let x1 = uniform(&[o, n, b, 3], &mut rng);
        let x2 = Tensor::from_fn(&[o, n, b, 3], |i| {
            let (t, j, rest) = (i / (n * b * 3), (i / (b * 3)) % n, i % (b * 3));
            x1.values()[(t * n + order[j]) * b * 3 + rest]
        });
        let run = |e: &Encoder, s: &ParamStore, x: &Tensor| {
            let mut tape = Tape::new();
            let mut p = Bindings::frozen(s);
            let v = tape.constant(x.clone());
            let y = e.forward(&mut tape, &mut p, v).unwrap();
            tape.value(y).clone()
        };
        let (y1, y2) = (run(&e1, &s1, &x1), run(&e2, &s2, &x2));
        let c = 4;
        for t in 0..o {
            for j in 0..n {
                let a = &y2.values()[(t * n + j) * b * c..(t * n + j + 1) * b * c];
                let e = &y1.values()[(t * n + order[j]) * b * c..(t * n + order[j] + 1) * b * c];
                if a.iter().zip(e).any(|(a, e)| (a - e).abs() > 1e-12) {
                    return Err(format!("seed {seed}: frame {t} joint {j} not equivariant under {order:?}"));
                }
            }
        }
    }
    Ok(())
}

/// Largest singular value by power iteration on `M^T M`.
pub fn spectral_norm(m: &Tensor) -> f64 {
    let c = m.shape()[1];
    let mt = m.transpose2().unwrap();
    let mut v = Tensor::from_fn(&[c, 1], |i| 1.0 + (i as f64 * 0.37).sin() * 0.5);
    let mut sigma2 = 0.0;
    for _ in 0..500 {
        let w = mt.matmul(&m.matmul(&v).unwrap()).unwrap();
        let norm = w.values().iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        sigma2 = norm / v.values().iter().map(|x| x * x).sum::<f64>().sqrt();
        v = Tensor::from_fn(&[c, 1], |i| w.values()[i] / norm);
    }
    sigma2.sqrt()
}

/// Every normalized graph operator has spectral norm at most 1 and the
/// normalized static graph is symmetric.
pub fn spectral_bound(seeds: u64) -> Check {
    for seed in 0..seeds {
        let mut rng = SeedRng::seed_from_u64(seed);
        let n = rng.gen_range(1..=8);
        let o = rng.gen_range(1..=5);
        let skel = toy_skeleton(n, &mut rng);
        let a = normalize_adjacency(&build_static_adjacency(&skel, o)).unwrap();
        let j = n * o;
        if (0..j * j).any(|i| (a.values()[i] - a.at2(i % j, i / j)).abs() > 1e-15) {
            return Err(format!("seed {seed}: normalized adjacency is not symmetric"));
        }
        let pack = AdjacencyPack::new(&skel, o).unwrap();
        let mut ops = vec![("static", a)];
        for m in 0..3 {
            ops.push(("spatial", pack.a_spatial[m].clone()));
            ops.push(("temporal", pack.a_temporal[m].clone()));
            ops.push(("propagation", pack.propagation[m].clone()));
        }
        for (name, op) in ops {
            let s = spectral_norm(&op);
            if s > 1.0 + 1e-9 {
                return Err(format!("seed {seed}: {name} operator has spectral norm {s}"));
            }
        }
    }
    Ok(())
}

/// Predicting `F' < F` frames gives exactly the first `F'` frames of an
/// `F`-frame prediction.
pub fn autoregressive_prefix(seeds: u64) -> Check {
    for seed in 0..seeds {
        let mut rng = SeedRng::seed_from_u64(seed);
        let n = rng.gen_range(1..=4);
        let o = rng.gen_range(2..=5);
        let skel = toy_skeleton(n, &mut rng);
        let (mut store, sln) = small_sln(&skel, o, 6, &mut rng);
        super::randomize(&mut store, 0.5, &mut rng);
        let obs = uniform(&[o, n, 2, 3], &mut rng);
        let long = sln.predict(&store, &obs).unwrap();
        for f in 1..6 {
            let mut short = sln.clone();
            short.config.future = f;
            let y = short.predict(&store, &obs).unwrap();
            if y.values() != &long.values()[..y.numel()] {
                return Err(format!("seed {seed}: {f}-frame prediction is not a prefix of the 6-frame one"));
            }
        }
    }
    Ok(())
}

/// A model with a deliberate network survives save, load and save with
/// identical bytes and identical predictions.
pub fn checkpoint_round_trip(seed: u64) -> Check {
    let mut rng = SeedRng::seed_from_u64(seed);
    let cfg = TrainConfig { observed: 5, future: 3, horizons_ms: vec![40.0, 120.0], seed, ..TrainConfig::default() };
    let skel = SkeletonSpec::default_body();
    let mut model = HimModel::init(&cfg, &skel, SlnVariant::Full, &mut rng).unwrap();
    let errors: Vec<f64> = (0..12).map(|_| rng.gen_range(0.0..100.0)).collect();
    model.map = rank_joints(&errors, 3).unwrap();
    let mut dstore = ParamStore::new();
    let dtc = Dtc::new(&mut dstore, &model.map, 5, 3, &dtc_tcn_config(3, 3), &mut rng).unwrap();
    super::randomize(&mut dstore, 0.1, &mut rng);
    model.dtc = Some((dtc, dstore));

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("m.ckpt");
    model.to_bundle("fp").unwrap().save(&path).unwrap();
    let first = std::fs::read(&path).unwrap();
    let (loaded, fp) = HimModel::from_bundle(&CheckpointBundle::load(&path).unwrap()).unwrap();
    let again = dir.path().join("again.ckpt");
    loaded.to_bundle(&fp).unwrap().save(&again).unwrap();
    if std::fs::read(&again).unwrap() != first {
        return Err("checkpoint bytes changed after load and save".into());
    }
    let obs = uniform(&[5, 12, 2, 3], &mut rng);
    if model.predict_batch(&obs).unwrap() != loaded.predict_batch(&obs).unwrap() {
        return Err("reloaded model predicts differently".into());
    }
    Ok(())
}

/// `rank_joints` against an O(N^2) position count on random errors with ties, N <= 32.
pub fn ranking_brute_force(cases: u64) -> Check {
    for seed in 0..cases {
        let mut rng = SeedRng::seed_from_u64(seed);
        let n = rng.gen_range(1..=32);
        let errors: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.3) { rng.gen_range(0..3) as f64 } else { rng.gen_range(0.0..50.0) }).collect();
        let m = rng.gen_range(1..=n);
        let map = rank_joints(&errors, m).map_err(|e| e.to_string())?;
        let mut expected = vec![0; n];
        for j in 0..n {
            let pos = (0..n).filter(|&k| errors[k] > errors[j] || (errors[k] == errors[j] && k < j)).count();
            expected[pos] = j;
        }
        if map.ranking != expected || map.selected != expected[..m] {
            return Err(format!("seed {seed}: ranking {:?} vs {expected:?}", map.ranking));
        }
    }
    Ok(())
}
