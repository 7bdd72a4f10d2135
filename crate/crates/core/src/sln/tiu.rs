//! Causal temporal blocks that compress a feature sequence into a latent vector.

use rand::Rng;

use crate::autodiff::nn::{CausalConv, Linear, Mode};
use crate::autodiff::{Bindings, ParamStore, Tape, Var};
use crate::error::{HvisError, Result};

#[derive(Clone, Debug)]
pub struct TiuBlock {
    pub convs: Vec<CausalConv>,
    /// 1x1 projection on the skip path when the channel count changes.
    pub skip: Option<Linear>,
}

#[derive(Clone, Debug)]
pub struct Tiu {
    pub blocks: Vec<TiuBlock>,
    pub head: Linear,
    pub dropout: f64,
    pub in_channels: usize,
    pub channels: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TiuConfig {
    pub blocks: usize,
    pub dilations: Vec<usize>,
    pub width: usize,
    pub channels: usize,
    pub latent: usize,
    pub dropout: f64,
}

impl Default for TiuConfig {
    fn default() -> Self {
        TiuConfig { blocks: 3, dilations: vec![1, 2, 4], width: 3, channels: 64, latent: 256, dropout: 0.1 }
    }
}

impl TiuConfig {
    pub fn receptive_field(&self) -> usize {
        1 + self.blocks * self.dilations.iter().map(|d| (self.width - 1) * d).sum::<usize>()
    }
}

impl Tiu {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, in_channels: usize, cfg: &TiuConfig, rng: &mut R) -> Result<Self> {
        if cfg.blocks == 0 || cfg.dilations.is_empty() || cfg.channels == 0 || cfg.latent == 0 {
            return Err(HvisError::Parameter(format!("temporal unit needs blocks, dilations, channels and latent > 0: {cfg:?}")));
        }
        if !(0.0..1.0).contains(&cfg.dropout) {
            return Err(HvisError::Parameter(format!("dropout {} outside [0, 1)", cfg.dropout)));
        }
        let mut blocks = Vec::with_capacity(cfg.blocks);
        let mut cin = in_channels;
        for b in 0..cfg.blocks {
            let mut convs = Vec::with_capacity(cfg.dilations.len());
            let mut c = cin;
            for (k, &d) in cfg.dilations.iter().enumerate() {
                convs.push(CausalConv::new(store, &format!("{name}.block{b}.conv{k}"), c, cfg.channels, cfg.width, d, rng)?);
                c = cfg.channels;
            }
            let skip = (cin != cfg.channels)
                .then(|| Linear::new(store, &format!("{name}.block{b}.skip"), cin, cfg.channels, false, rng));
            blocks.push(TiuBlock { convs, skip });
            cin = cfg.channels;
        }
        let head = Linear::new(store, &format!("{name}.head"), cfg.channels, cfg.latent, true, rng);
        Ok(Tiu { blocks, head, dropout: cfg.dropout, in_channels, channels: cfg.channels })
    }

    /// `[T, S, C_in]` to `[T, S, channels]`; output step `t` sees inputs `t - R + 1 ..= t`.
    pub fn sequence(&self, tape: &mut Tape, p: &mut Bindings, x: Var, mode: &mut Mode) -> Result<Var> {
        let (t, s) = match *tape.shape(x) {
            [t, s, c] if c == self.in_channels => (t, s),
            ref sh => return Err(HvisError::dim("tiu", format!("expected [time, seqs, {}], got {sh:?}", self.in_channels))),
        };
        let mut x = x;
        for block in &self.blocks {
            let mut y = x;
            for conv in &block.convs {
                y = conv.forward(tape, p, y)?;
                y = tape.relu(y);
            }
            y = mode.dropout(tape, y, self.dropout)?;
            let skip = match &block.skip {
                Some(proj) => {
                    let cin = tape.shape(x)[2];
                    let flat = tape.reshape(x, &[t * s, cin])?;
                    let z = proj.forward(tape, p, flat)?;
                    tape.reshape(z, &[t, s, self.channels])?
                }
                None => x,
            };
            x = tape.add(y, skip)?;
        }
        Ok(x)
    }

    /// Latent `[S, latent]` from the last step of [`Tiu::sequence`].
    pub fn latent(&self, tape: &mut Tape, p: &mut Bindings, x: Var, mode: &mut Mode) -> Result<Var> {
        let y = self.sequence(tape, p, x, mode)?;
        let (t, s) = (tape.shape(y)[0], tape.shape(y)[1]);
        let last = tape.narrow(y, 0, t - 1, 1)?;
        let last = tape.reshape(last, &[s, self.channels])?;
        self.head.forward(tape, p, last)
    }
}
