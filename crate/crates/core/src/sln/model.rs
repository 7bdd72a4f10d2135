use rand::Rng;

use super::tiu::{Tiu, TiuConfig};
use crate::autodiff::nn::{gru_cell, GruParams, Linear, Mode};
use crate::autodiff::{Bindings, ParamStore, Tape, Tensor, Var};
use crate::data::SkeletonSpec;
use crate::error::{HvisError, Result};
use crate::hvm::{Encoder, EncoderKind};

/// Which parts of the predictor are present.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlnVariant {
    Full,
    /// Plain static-graph encoder instead of the hierarchical one.
    PlainEncoder,
    /// No temporal unit: the latent is a linear map of the last encoded frame.
    NoTemporal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlnConfig {
    pub observed: usize,
    pub future: usize,
    pub encoder_widths: Vec<usize>,
    pub tiu: TiuConfig,
    pub variant: SlnVariant,
}

impl SlnConfig {
    pub fn new(observed: usize, future: usize) -> Self {
        SlnConfig { observed, future, encoder_widths: vec![3, 64, 64, 64], tiu: TiuConfig::default(), variant: SlnVariant::Full }
    }
}

/// GRU decoder rolling positions forward by predicted velocities.
#[derive(Clone, Debug)]
pub struct Ltf {
    pub gru: GruParams,
    pub velocity: Linear,
}

impl Ltf {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, hidden: usize, rng: &mut R) -> Self {
        let gru = GruParams::new(store, &format!("{name}.gru"), 3, hidden, rng);
        let velocity = Linear::new(store, &format!("{name}.velocity"), hidden, 3, true, rng);
        // Start from the zero-velocity predictor.
        store.get_mut(velocity.weight).values_mut().fill(0.0);
        Ltf { gru, velocity }
    }

    /// `latent [S, H]`, `last [S, 3]` to positions `[steps, S, 3]`.
    pub fn rollout(&self, tape: &mut Tape, p: &mut Bindings, latent: Var, last: Var, steps: usize) -> Result<Var> {
        let s = tape.shape(last)[0];
        let mut h = tape.tanh(latent);
        let mut x = last;
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            h = gru_cell(tape, p, x, h, &self.gru)?;
            let v = self.velocity.forward(tape, p, h)?;
            x = tape.add(x, v)?;
            out.push(x);
        }
        let flat = tape.concat(&out, 0)?;
        tape.reshape(flat, &[steps, s, 3])
    }
}

/// Generator: encoder, temporal unit and decoder.
#[derive(Clone, Debug)]
pub struct Sln {
    pub encoder: Encoder,
    pub tiu: Option<Tiu>,
    pub direct: Option<Linear>,
    pub ltf: Ltf,
    pub config: SlnConfig,
    pub joints: usize,
}

impl Sln {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, skeleton: &SkeletonSpec, config: &SlnConfig, rng: &mut R) -> Result<Self> {
        if config.observed == 0 || config.future == 0 {
            return Err(HvisError::Parameter("observed and future lengths must be positive".into()));
        }
        if config.encoder_widths.first() != Some(&3) {
            return Err(HvisError::Parameter(format!("encoder widths {:?} must start at 3", config.encoder_widths)));
        }
        let kind = match config.variant {
            SlnVariant::PlainEncoder => EncoderKind::PlainGcn,
            _ => EncoderKind::Hierarchical,
        };
        let encoder = Encoder::new(store, skeleton, config.observed, &config.encoder_widths, kind, rng)?;
        let joints = skeleton.joint_count();
        let feat = encoder.out_channels + joints;
        let (tiu, direct) = match config.variant {
            SlnVariant::NoTemporal => (None, Some(Linear::new(store, "sln.direct", feat, config.tiu.latent, true, rng))),
            _ => (Some(Tiu::new(store, "sln.tiu", feat, &config.tiu, rng)?), None),
        };
        let ltf = Ltf::new(store, "sln.ltf", config.tiu.latent, rng);
        Ok(Sln { encoder, tiu, direct, ltf, config: config.clone(), joints })
    }

    fn batch_of(&self, tape: &Tape, observed: Var) -> Result<usize> {
        match *tape.shape(observed) {
            [o, n, b, 3] if o == self.config.observed && n == self.joints => Ok(b),
            ref s => Err(HvisError::dim(
                "sln",
                format!("observed batch must be [{}, {}, batch, 3], got {s:?}", self.config.observed, self.joints),
            )),
        }
    }

    /// Observed `[O, N, B, 3]` to predicted future `[F, N, B, 3]`.
    pub fn forward(&self, tape: &mut Tape, p: &mut Bindings, observed: Var, mode: &mut Mode) -> Result<Var> {
        let b = self.batch_of(tape, observed)?;
        let (o, n, f) = (self.config.observed, self.joints, self.config.future);
        let s = n * b;
        let feats = self.encoder.forward(tape, p, observed)?;
        let c = self.encoder.out_channels;
        let feats = tape.reshape(feats, &[o, s, c])?;
        let onehot = tape.constant(Tensor::from_fn(&[o, s, n], |i| {
            let (row, ch) = (i / n, i % n);
            if (row % s) / b == ch { 1.0 } else { 0.0 }
        }));
        let x = tape.concat(&[feats, onehot], 2)?;
        let latent = match (&self.tiu, &self.direct) {
            (Some(tiu), _) => tiu.latent(tape, p, x, mode)?,
            (None, Some(direct)) => {
                let last = tape.narrow(x, 0, o - 1, 1)?;
                let last = tape.reshape(last, &[s, c + n])?;
                direct.forward(tape, p, last)?
            }
            (None, None) => unreachable!("a latent path is always built"),
        };
        let last_obs = tape.narrow(observed, 0, o - 1, 1)?;
        let last_obs = tape.reshape(last_obs, &[s, 3])?;
        let y = self.ltf.rollout(tape, p, latent, last_obs, f)?;
        tape.reshape(y, &[f, n, b, 3])
    }

    /// Eval-mode prediction for an `[O, N, B, 3]` batch.
    pub fn predict(&self, store: &ParamStore, observed: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut p = Bindings::frozen(store);
        let x = tape.constant(observed.clone());
        let y = self.forward(&mut tape, &mut p, x, &mut Mode::Eval)?;
        Ok(tape.value(y).clone())
    }
}

/// Scores an (observed, future) pair; unbounded output.
#[derive(Clone, Debug)]
pub struct Critic {
    pub hidden: Vec<Linear>,
    pub head: Linear,
    pub observed: usize,
    pub future: usize,
    pub joints: usize,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        observed: usize,
        future: usize,
        joints: usize,
        width: usize,
        layers: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if width == 0 || layers == 0 {
            return Err(HvisError::Parameter("critic needs a positive width and layer count".into()));
        }
        let mut d = (observed + future) * joints * 3;
        let hidden = (0..layers)
            .map(|i| {
                let l = Linear::new(store, &format!("critic.{i}"), d, width, true, rng);
                d = width;
                l
            })
            .collect();
        let head = Linear::new(store, "critic.head", width, 1, true, rng);
        Ok(Critic { hidden, head, observed, future, joints })
    }

    /// `[O, N, B, 3]` and `[F, N, B, 3]` to scores `[B, 1]`.
    pub fn score(&self, tape: &mut Tape, p: &mut Bindings, observed: Var, future: Var) -> Result<Var> {
        let b = match (tape.shape(observed), tape.shape(future)) {
            ([o, n, b, 3], [f, n2, b2, 3]) if *o == self.observed && *f == self.future && *n == self.joints && n2 == n && b2 == b => *b,
            (a, c) => return Err(HvisError::dim("critic", format!("observed {a:?} and future {c:?}"))),
        };
        let flat = |tape: &mut Tape, v: Var, t: usize| -> Result<Var> {
            let v = tape.permute(v, &[2, 0, 1, 3])?;
            tape.reshape(v, &[b, t * self.joints * 3])
        };
        let o = flat(tape, observed, self.observed)?;
        let f = flat(tape, future, self.future)?;
        let mut x = tape.concat(&[o, f], 1)?;
        for l in &self.hidden {
            x = l.forward(tape, p, x)?;
            x = tape.relu(x);
        }
        self.head.forward(tape, p, x)
    }
}

/// Mean squared per-joint displacement, `sum((a - b)^2) / (F * N * B)`.
pub fn joint_loss(tape: &mut Tape, pred: Var, truth: Var) -> Result<Var> {
    if tape.shape(pred) != tape.shape(truth) {
        return Err(HvisError::dim("joint_loss", format!("{:?} vs {:?}", tape.shape(pred), tape.shape(truth))));
    }
    let points = tape.value(pred).numel() / 3;
    let d = tape.sub(pred, truth)?;
    let sq = tape.mul(d, d)?;
    let s = tape.sum(sq);
    Ok(tape.scale(s, 1.0 / points as f64))
}

/// `-mean D(obs, gen) + lambda * joint_loss(gen, truth)`.
pub fn generator_loss(
    tape: &mut Tape,
    critic: &Critic,
    critic_params: &mut Bindings,
    observed: Var,
    generated: Var,
    truth: Var,
    lambda: f64,
) -> Result<Var> {
    let d = critic.score(tape, critic_params, observed, generated)?;
    let adv = tape.mean(d);
    let adv = tape.scale(adv, -1.0);
    let rec = joint_loss(tape, generated, truth)?;
    let rec = tape.scale(rec, lambda);
    tape.add(adv, rec)
}

/// Critic objective minimized by the critic: `mean D(fake) - mean D(real)`.
pub fn critic_loss(tape: &mut Tape, critic: &Critic, p: &mut Bindings, observed: Var, fake: Var, real: Var) -> Result<Var> {
    let df = critic.score(tape, p, observed, fake)?;
    let dr = critic.score(tape, p, observed, real)?;
    let mf = tape.mean(df);
    let mr = tape.mean(dr);
    tape.sub(mf, mr)
}
