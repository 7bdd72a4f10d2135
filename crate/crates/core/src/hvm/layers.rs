//! Graph layers on node-major features `[J, B*C]` (node rows, batch-major channel blocks).

use rand::Rng;

use super::adjacency::{AdjacencyPack, SCALES};
use super::scales::{pool_to_scale, unpool_from_scale, ScaleMaps};
use crate::autodiff::{xavier_uniform, Bindings, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{HvisError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Tanh => tape.tanh(x),
            Activation::Identity => x,
        }
    }
}

/// `x[J, B*C] -> x[J, B*C']` by a per-node channel map `W[C, C']`.
pub fn channel_map(tape: &mut Tape, x: Var, w: Var, op: &'static str) -> Result<Var> {
    let (j, cols) = (tape.shape(x)[0], tape.shape(x)[1]);
    let (c, out) = (tape.shape(w)[0], tape.shape(w)[1]);
    if tape.shape(x).len() != 2 || cols % c != 0 {
        return Err(HvisError::dim(op, format!("features {:?} do not split into {c}-channel blocks", tape.shape(x))));
    }
    let batch = cols / c;
    let flat = tape.reshape(x, &[j * batch, c])?;
    let y = tape.matmul(flat, w)?;
    tape.reshape(y, &[j, batch * out])
}

fn check_nodes(tape: &Tape, x: Var, nodes: usize, op: &'static str) -> Result<()> {
    match tape.shape(x) {
        [j, _] if *j == nodes => Ok(()),
        s => Err(HvisError::dim(op, format!("expected {nodes} node rows, got {s:?}"))),
    }
}

/// Static-dynamic adjacency layer weights.
#[derive(Clone, Debug)]
pub struct RaParams {
    pub weight: ParamId,
    /// Learnable `[J, J]` relation, initialised near the identity.
    pub a_dynamic: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl RaParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, nodes: usize, cin: usize, cout: usize, rng: &mut R) -> Self {
        let weight = store.add(format!("{name}.weight"), xavier_uniform(&[cin, cout], cin, cout, rng));
        let a = Tensor::from_fn(&[nodes, nodes], |i| {
            let diag = if i / nodes == i % nodes { 1.0 } else { 0.0 };
            diag + rng.gen_range(-0.01..0.01)
        });
        let a_dynamic = store.add(format!("{name}.a_dynamic"), a);
        RaParams { weight, a_dynamic, in_channels: cin, out_channels: cout }
    }
}

/// `act(Â_s · A_d · X · W)`.
pub fn ra_layer(tape: &mut Tape, p: &mut Bindings, x: Var, pack: &AdjacencyPack, params: &RaParams, act: Activation) -> Result<Var> {
    check_nodes(tape, x, pack.nodes(), "ra_layer")?;
    let w = p.get(tape, params.weight);
    let xw = channel_map(tape, x, w, "ra_layer")?;
    let a_s = tape.constant(pack.a_static_norm.clone());
    let a_d = p.get(tape, params.a_dynamic);
    let m = tape.matmul(a_s, a_d)?;
    let y = tape.matmul(m, xw)?;
    Ok(act.apply(tape, y))
}

/// One channel map per scale.
#[derive(Clone, Debug)]
pub struct VaParams {
    pub weights: [ParamId; SCALES],
    pub in_channels: usize,
    pub out_channels: usize,
}

impl VaParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut R) -> Self {
        let weights = [0, 1, 2].map(|m| store.add(format!("{name}.weight{m}"), xavier_uniform(&[cin, cout], cin, cout, rng)));
        VaParams { weights, in_channels: cin, out_channels: cout }
    }
}

/// `act(sum_m U_m · Â_s[m] · Â_t[m] · (P_m X) · W_m)`.
pub fn va_layer(
    tape: &mut Tape,
    p: &mut Bindings,
    x: Var,
    pack: &AdjacencyPack,
    maps: &ScaleMaps,
    params: &VaParams,
    act: Activation,
) -> Result<Var> {
    check_nodes(tape, x, pack.nodes(), "va_layer")?;
    if maps.frames != pack.frames || maps.nodes_per_frame[0] != pack.joints {
        return Err(HvisError::dim(
            "va_layer",
            format!("scale maps for {}x{} vs graph {}x{}", maps.nodes_per_frame[0], maps.frames, pack.joints, pack.frames),
        ));
    }
    let mut total: Option<Var> = None;
    for m in 0..SCALES {
        let pooled = pool_to_scale(tape, x, maps, m)?;
        let w = p.get(tape, params.weights[m]);
        let h = channel_map(tape, pooled, w, "va_layer")?;
        let prop = tape.constant(pack.propagation[m].clone());
        let h = tape.matmul(prop, h)?;
        let h = unpool_from_scale(tape, h, maps, m)?;
        total = Some(match total {
            None => h,
            Some(t) => tape.add(t, h)?,
        });
    }
    Ok(act.apply(tape, total.expect("at least one scale")))
}

#[derive(Clone, Debug)]
pub struct GcnParams {
    pub weight: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl GcnParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut R) -> Self {
        let weight = store.add(format!("{name}.weight"), xavier_uniform(&[cin, cout], cin, cout, rng));
        GcnParams { weight, in_channels: cin, out_channels: cout }
    }
}

/// Plain graph convolution `act(Â_s · X · W)` on the static graph only.
pub fn gcn_layer(tape: &mut Tape, p: &mut Bindings, x: Var, pack: &AdjacencyPack, params: &GcnParams, act: Activation) -> Result<Var> {
    check_nodes(tape, x, pack.nodes(), "gcn_layer")?;
    let w = p.get(tape, params.weight);
    let xw = channel_map(tape, x, w, "gcn_layer")?;
    let a_s = tape.constant(pack.a_static_norm.clone());
    let y = tape.matmul(a_s, xw)?;
    Ok(act.apply(tape, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::nn::SeedRng;
    use crate::data::SkeletonSpec;
    use rand::SeedableRng;

    fn two_part() -> SkeletonSpec {
        SkeletonSpec::new(vec!["a".into(), "b".into()], &[-1, 0], vec![0, 1]).unwrap()
    }

    fn set(store: &mut ParamStore, id: ParamId, t: Tensor) {
        *store.get_mut(id) = t;
    }

    #[test]
    fn ra_reduces_to_activation_of_xw() {
        let skel = two_part();
        let mut pack = AdjacencyPack::new(&skel, 2).unwrap();
        pack.a_static_norm = Tensor::eye(4);
        let mut store = ParamStore::new();
        let mut rng = SeedRng::seed_from_u64(1);
        let ra = RaParams::new(&mut store, "ra", 4, 2, 3, &mut rng);
        set(&mut store, ra.a_dynamic, Tensor::eye(4));
        let w = Tensor::from_fn(&[2, 3], |i| 0.1 * i as f64 - 0.2);
        set(&mut store, ra.weight, w.clone());
        let x = Tensor::from_fn(&[4, 2], |i| (i as f64 * 0.7).sin());
        let mut tape = Tape::new();
        let mut p = Bindings::frozen(&store);
        let xv = tape.constant(x.clone());
        let y = ra_layer(&mut tape, &mut p, xv, &pack, &ra, Activation::Tanh).unwrap();
        let want: Vec<f64> = x.matmul(&w).unwrap().values().iter().map(|v| v.tanh()).collect();
        for (a, b) in tape.values(y).iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn va_two_part_oracle() {
        // one frame, two joints in two parts, scalar channels
        let skel = two_part();
        let pack = AdjacencyPack::new(&skel, 1).unwrap();
        let maps = ScaleMaps::new(&skel, 1).unwrap();
        let mut store = ParamStore::new();
        let mut rng = SeedRng::seed_from_u64(2);
        let va = VaParams::new(&mut store, "va", 1, 1, &mut rng);
        for (m, w) in [2.0, 3.0, 5.0].into_iter().enumerate() {
            set(&mut store, va.weights[m], Tensor::filled(&[1, 1], w));
        }
        let (x0, x1) = (0.4, -1.0);
        let mut tape = Tape::new();
        let mut p = Bindings::frozen(&store);
        let xv = tape.constant(Tensor::new(&[2, 1], vec![x0, x1]).unwrap());
        let y = va_layer(&mut tape, &mut p, xv, &pack, &maps, &va, Activation::Identity).unwrap();
        // joint scale: K2 normalized -> 0.5 everywhere; part scale: 2-part star -> 0.5 everywhere,
        // pooling is the identity there; body scale: the joint average.
        let joint = 2.0 * 0.5 * (x0 + x1);
        let part = 3.0 * 0.5 * (x0 + x1);
        let body = 5.0 * 0.5 * (x0 + x1);
        let want = joint + part + body;
        assert!((tape.values(y)[0] - want).abs() < 1e-12);
        assert!((tape.values(y)[1] - want).abs() < 1e-12);
    }

    #[test]
    fn va_single_scale_identity_reduction() {
        let skel = SkeletonSpec::default_body();
        let mut pack = AdjacencyPack::new(&skel, 2).unwrap();
        pack.a_spatial[0] = Tensor::eye(24);
        pack.a_temporal[0] = Tensor::eye(24);
        pack.refresh_propagation().unwrap();
        let maps = ScaleMaps::new(&skel, 2).unwrap();
        let mut store = ParamStore::new();
        let mut rng = SeedRng::seed_from_u64(3);
        let va = VaParams::new(&mut store, "va", 3, 3, &mut rng);
        set(&mut store, va.weights[0], Tensor::eye(3));
        set(&mut store, va.weights[1], Tensor::zeros(&[3, 3]));
        set(&mut store, va.weights[2], Tensor::zeros(&[3, 3]));
        let x = Tensor::from_fn(&[24, 6], |i| (i as f64 * 0.31).cos());
        let mut tape = Tape::new();
        let mut p = Bindings::frozen(&store);
        let xv = tape.constant(x.clone());
        let y = va_layer(&mut tape, &mut p, xv, &pack, &maps, &va, Activation::Tanh).unwrap();
        for (a, b) in tape.values(y).iter().zip(x.values()) {
            assert!((a - b.tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_node_count() {
        let skel = two_part();
        let pack = AdjacencyPack::new(&skel, 2).unwrap();
        let mut store = ParamStore::new();
        let g = GcnParams::new(&mut store, "g", 2, 2, &mut SeedRng::seed_from_u64(0));
        let mut tape = Tape::new();
        let mut p = Bindings::frozen(&store);
        let x = tape.constant(Tensor::zeros(&[3, 2]));
        assert!(matches!(gcn_layer(&mut tape, &mut p, x, &pack, &g, Activation::Tanh), Err(HvisError::Dimension { .. })));
    }
}
