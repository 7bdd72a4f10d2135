//! Reusable layers built from tape primitives.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{xavier_uniform, Bindings, ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{HvisError, Result};

pub type SeedRng = ChaCha8Rng;

/// Train mode carries the random source for dropout masks.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut SeedRng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }

    pub fn dropout(&mut self, tape: &mut Tape, x: Var, rate: f64) -> Result<Var> {
        match self {
            Mode::Eval => tape.dropout(x, rate, false, &mut rand::rngs::mock::StepRng::new(0, 0)),
            Mode::Train(rng) => tape.dropout(x, rate, true, *rng),
        }
    }
}

/// Dense layer `x[R x in] * W[in x out] + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), xavier_uniform(&[in_dim, out_dim], in_dim, out_dim, rng));
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim])));
        Linear { weight, bias, in_dim, out_dim }
    }

    pub fn forward(&self, tape: &mut Tape, p: &mut Bindings, x: Var) -> Result<Var> {
        let w = p.get(tape, self.weight);
        let y = tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = p.get(tape, b);
                tape.add_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Causal dilated convolution with bias over `[T, S, C]` sequences.
#[derive(Clone, Debug)]
pub struct CausalConv {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub dilation: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub width: usize,
}

impl CausalConv {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        width: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if dilation < 1 || width < 1 {
            return Err(HvisError::Parameter(format!(
                "convolution {name}: width {width} and dilation {dilation} must be >= 1"
            )));
        }
        let kernel = store.add(
            format!("{name}.kernel"),
            xavier_uniform(&[out_channels, in_channels, width], in_channels * width, out_channels * width, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]));
        Ok(CausalConv { kernel, bias, dilation, in_channels, out_channels, width })
    }

    pub fn forward(&self, tape: &mut Tape, p: &mut Bindings, x: Var) -> Result<Var> {
        let k = p.get(tape, self.kernel);
        let y = tape.conv1d_causal(x, k, self.dilation)?;
        let b = p.get(tape, self.bias);
        tape.add_bias(y, b)
    }

    /// Output steps that can see a given input step, i.e. `(width-1)*dilation + 1`.
    pub fn receptive_field(&self) -> usize {
        (self.width - 1) * self.dilation + 1
    }
}

/// Convolution on a single `[channels x time]` signal.
pub fn conv1d_causal_ct(tape: &mut Tape, input: Var, kernel: Var, dilation: usize) -> Result<Var> {
    let (c, t) = match *tape.shape(input) {
        [c, t] => (c, t),
        ref s => return Err(HvisError::dim("conv1d_causal", format!("input must be [channels, time], got {s:?}"))),
    };
    let xt = tape.transpose(input)?;
    let x3 = tape.reshape(xt, &[t, 1, c])?;
    let y = tape.conv1d_causal(x3, kernel, dilation)?;
    let out = tape.shape(y)[2];
    let y2 = tape.reshape(y, &[t, out])?;
    tape.transpose(y2)
}

/// Gated recurrent unit weights. Gate column blocks are ordered reset, update, candidate.
#[derive(Clone, Debug)]
pub struct GruParams {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b_x: ParamId,
    pub b_h: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl GruParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let w_x = store.add(format!("{name}.w_x"), xavier_uniform(&[input, 3 * hidden], input, hidden, rng));
        let w_h = store.add(format!("{name}.w_h"), xavier_uniform(&[hidden, 3 * hidden], hidden, hidden, rng));
        let b_x = store.add(format!("{name}.b_x"), Tensor::zeros(&[3 * hidden]));
        let b_h = store.add(format!("{name}.b_h"), Tensor::zeros(&[3 * hidden]));
        GruParams { w_x, w_h, b_x, b_h, input, hidden }
    }
}

/// One GRU update for a batch of rows: `x[R x in]`, `h[R x H]` to `h'[R x H]`.
///
/// r = sigmoid(x Wr + br + h Ur + cr), z = sigmoid(x Wz + bz + h Uz + cz),
/// n = tanh(x Wn + bn + r * (h Un + cn)), h' = h + z * (n - h).
pub fn gru_cell(tape: &mut Tape, p: &mut Bindings, x: Var, h: Var, params: &GruParams) -> Result<Var> {
    let hid = params.hidden;
    let rows = tape.shape(x)[0];
    if tape.shape(x) != [rows, params.input] || tape.shape(h) != [rows, hid] {
        return Err(HvisError::dim(
            "gru_cell",
            format!(
                "x {:?} and h {:?} for input {} hidden {}",
                tape.shape(x),
                tape.shape(h),
                params.input,
                hid
            ),
        ));
    }
    let wx = p.get(tape, params.w_x);
    let wh = p.get(tape, params.w_h);
    let bx = p.get(tape, params.b_x);
    let bh = p.get(tape, params.b_h);
    let gx = tape.matmul(x, wx)?;
    let gx = tape.add_bias(gx, bx)?;
    let gh = tape.matmul(h, wh)?;
    let gh = tape.add_bias(gh, bh)?;

    let gx_r = tape.narrow(gx, 1, 0, hid)?;
    let gx_z = tape.narrow(gx, 1, hid, hid)?;
    let gx_n = tape.narrow(gx, 1, 2 * hid, hid)?;
    let gh_r = tape.narrow(gh, 1, 0, hid)?;
    let gh_z = tape.narrow(gh, 1, hid, hid)?;
    let gh_n = tape.narrow(gh, 1, 2 * hid, hid)?;

    let r = tape.add(gx_r, gh_r)?;
    let r = tape.sigmoid(r);
    let z = tape.add(gx_z, gh_z)?;
    let z = tape.sigmoid(z);
    let rn = tape.mul(r, gh_n)?;
    let n = tape.add(gx_n, rn)?;
    let n = tape.tanh(n);
    let diff = tape.sub(n, h)?;
    let step = tape.mul(z, diff)?;
    tape.add(h, step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::tape::sigmoid;
    use rand::SeedableRng;

    fn setup(input: usize, hidden: usize, seed: u64) -> (ParamStore, GruParams) {
        let mut rng = SeedRng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let g = GruParams::new(&mut store, "gru", input, hidden, &mut rng);
        for id in [g.b_x, g.b_h] {
            for v in store.get_mut(id).values_mut() {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
        (store, g)
    }

    fn run(store: &ParamStore, g: &GruParams, x: &[f64], h: &[f64]) -> Vec<f64> {
        let mut tape = Tape::new();
        let mut p = Bindings::frozen(store);
        let xv = tape.constant(Tensor::new(&[1, g.input], x.to_vec()).unwrap());
        let hv = tape.constant(Tensor::new(&[1, g.hidden], h.to_vec()).unwrap());
        let out = gru_cell(&mut tape, &mut p, xv, hv, g).unwrap();
        tape.values(out).to_vec()
    }

    #[test]
    fn matches_scalar_gate_oracle() {
        let (store, g) = setup(3, 4, 11);
        let x = [0.3, -0.8, 0.5];
        let h = [0.1, -0.2, 0.7, -0.4];
        let got = run(&store, &g, &x, &h);

        let hid = 4;
        let wx = store.get(g.w_x).values();
        let wh = store.get(g.w_h).values();
        let bx = store.get(g.b_x).values();
        let bh = store.get(g.b_h).values();
        let pre = |w: &[f64], v: &[f64], rows: usize, col: usize| -> f64 {
            (0..rows).map(|i| v[i] * w[i * 3 * hid + col]).sum()
        };
        for j in 0..hid {
            let r = sigmoid(pre(wx, &x, 3, j) + bx[j] + pre(wh, &h, hid, j) + bh[j]);
            let z = sigmoid(pre(wx, &x, 3, hid + j) + bx[hid + j] + pre(wh, &h, hid, hid + j) + bh[hid + j]);
            let n = (pre(wx, &x, 3, 2 * hid + j) + bx[2 * hid + j] + r * (pre(wh, &h, hid, 2 * hid + j) + bh[2 * hid + j])).tanh();
            let want = (1.0 - z) * h[j] + z * n;
            assert!((got[j] - want).abs() < 1e-12, "unit {j}: {} vs {want}", got[j]);
        }
    }

    #[test]
    fn saturated_update_gate_limits() {
        let (mut store, g) = setup(2, 3, 5);
        let x = [0.4, -0.9];
        let h = [0.25, -0.5, 0.75];

        store.get_mut(g.b_x).values_mut()[3..6].fill(-1e3);
        let held = run(&store, &g, &x, &h);
        assert_eq!(held, h.to_vec());

        store.get_mut(g.b_x).values_mut()[3..6].fill(1e3);
        let cand = run(&store, &g, &x, &h);
        // z == 1: output is the candidate, which no longer depends on the old h through z
        let wx = store.get(g.w_x).values();
        let wh = store.get(g.w_h).values();
        let bx = store.get(g.b_x).values();
        let bh = store.get(g.b_h).values();
        for j in 0..3 {
            let lin = |w: &[f64], v: &[f64], col: usize| -> f64 { v.iter().enumerate().map(|(i, a)| a * w[i * 9 + col]).sum() };
            let r = sigmoid(lin(wx, &x, j) + bx[j] + lin(wh, &h, j) + bh[j]);
            let n = (lin(wx, &x, 6 + j) + bx[6 + j] + r * (lin(wh, &h, 6 + j) + bh[6 + j])).tanh();
            assert!((cand[j] - n).abs() < 1e-12);
        }
    }

    #[test]
    fn gru_shape_mismatch() {
        let (store, g) = setup(3, 4, 1);
        let mut tape = Tape::new();
        let mut p = Bindings::frozen(&store);
        let x = tape.constant(Tensor::zeros(&[2, 3]));
        let h = tape.constant(Tensor::zeros(&[1, 4]));
        assert!(gru_cell(&mut tape, &mut p, x, h, &g).is_err());
    }

    #[test]
    fn identity_kernel_conv() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[2, 5], |i| (i as f64).cos()));
        let mut k = Tensor::zeros(&[2, 2, 1]);
        k.values_mut()[0] = 1.0;
        k.values_mut()[3] = 1.0;
        let k = tape.constant(k);
        let y = conv1d_causal_ct(&mut tape, x, k, 3).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }
}
