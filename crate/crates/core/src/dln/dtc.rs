use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use super::map::DeliberateMap;
use crate::autodiff::nn::{Mode, SeedRng};
use crate::autodiff::{adam_step, AdamState, Bindings, ParamStore, Tape, Tensor, Var};
use crate::data::{mpjpe, stack_batch, unstack_item, WindowPair};
use crate::error::{HvisError, Result};
use crate::sln::{joint_loss, Tiu, TiuConfig, DIVERGENCE_LIMIT};

pub fn dtc_tcn_config(future: usize, m: usize) -> TiuConfig {
    TiuConfig { blocks: 3, dilations: vec![1, 2, 4, 8], width: 3, channels: 64, latent: future * 3 * m, dropout: 0.2 }
}

/// Causal TCN over the selected joints' raw positions, emitting per-frame velocities.
#[derive(Clone, Debug)]
pub struct Dtc {
    pub tcn: Tiu,
    pub selected: Vec<usize>,
    pub observed: usize,
    pub future: usize,
}

impl Dtc {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        map: &DeliberateMap,
        observed: usize,
        future: usize,
        cfg: &TiuConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let m = map.m();
        if m == 0 || observed == 0 || future == 0 {
            return Err(HvisError::Parameter(format!("deliberate net needs m, O, F >= 1 (m {m}, O {observed}, F {future})")));
        }
        if cfg.latent != future * 3 * m {
            return Err(HvisError::Parameter(format!("output width {} must be F*3*m = {}", cfg.latent, future * 3 * m)));
        }
        let tcn = Tiu::new(store, "dtc", 3 * m, cfg, rng)?;
        store.get_mut(tcn.head.weight).values_mut().fill(0.0);
        Ok(Dtc { tcn, selected: map.selected.clone(), observed, future })
    }

    pub fn m(&self) -> usize {
        self.selected.len()
    }

    /// Selected joints of a `[T, N, B, 3]` batch, as `[T, m, B, 3]`.
    pub fn select(&self, batch: &Tensor) -> Result<Tensor> {
        let (t, n, b) = match *batch.shape() {
            [t, n, b, 3] if self.selected.iter().all(|&j| j < n) => (t, n, b),
            ref s => return Err(HvisError::dim("dtc", format!("batch {s:?} for selected joints {:?}", self.selected))),
        };
        let m = self.m();
        let mut vals = Vec::with_capacity(t * m * b * 3);
        for f in 0..t {
            for &j in &self.selected {
                let i = (f * n + j) * b * 3;
                vals.extend_from_slice(&batch.values()[i..i + b * 3]);
            }
        }
        Tensor::new(&[t, m, b, 3], vals)
    }

    /// `[O, m, B, 3]` selected observations to `[F, m, B, 3]` predictions.
    pub fn forward(&self, tape: &mut Tape, p: &mut Bindings, observed: Var, mode: &mut Mode) -> Result<Var> {
        let (o, m, f) = (self.observed, self.m(), self.future);
        let b = match *tape.shape(observed) {
            [o2, m2, b, 3] if o2 == o && m2 == m => b,
            ref s => return Err(HvisError::dim("dtc", format!("expected [{o}, {m}, batch, 3], got {s:?}"))),
        };
        let x = tape.permute(observed, &[0, 2, 1, 3])?;
        let x = tape.reshape(x, &[o, b, 3 * m])?;
        let vel = self.tcn.latent(tape, p, x, mode)?;
        let vel = tape.reshape(vel, &[b, f, 3 * m])?;
        let vel = tape.permute(vel, &[1, 0, 2])?;
        let vel = tape.reshape(vel, &[f, b * 3 * m])?;
        let lower = tape.constant(Tensor::from_fn(&[f, f], |i| if i % f <= i / f { 1.0 } else { 0.0 }));
        let disp = tape.matmul(lower, vel)?;
        let last = tape.narrow(x, 0, o - 1, 1)?;
        let last = tape.reshape(last, &[1, b * 3 * m])?;
        let ones = tape.constant(Tensor::filled(&[f, 1], 1.0));
        let base = tape.matmul(ones, last)?;
        let pos = tape.add(disp, base)?;
        let pos = tape.reshape(pos, &[f, b, m, 3])?;
        tape.permute(pos, &[0, 2, 1, 3])
    }

    pub fn predict(&self, store: &ParamStore, observed_selected: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut p = Bindings::frozen(store);
        let x = tape.constant(observed_selected.clone());
        let y = self.forward(&mut tape, &mut p, x, &mut Mode::Eval)?;
        Ok(tape.value(y).clone())
    }

    /// Eval-mode `[F, m, 3]` predictions per window.
    pub fn predict_windows(&self, store: &ParamStore, windows: &[WindowPair], batch_size: usize) -> Result<Vec<Tensor>> {
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(batch_size.max(1)) {
            let obs = stack_batch(&chunk.iter().map(|w| &w.observed).collect::<Vec<_>>())?;
            let pred = self.predict(store, &self.select(&obs)?)?;
            for k in 0..chunk.len() {
                out.push(unstack_item(&pred, k)?);
            }
        }
        Ok(out)
    }

    /// Mean error (mm) over the selected joints and all future frames.
    pub fn selected_error(&self, preds: &[Tensor], windows: &[WindowPair]) -> Result<f64> {
        if windows.is_empty() {
            return Err(HvisError::Contract("no windows to evaluate".into()));
        }
        let mut total = 0.0;
        for (p, w) in preds.iter().zip(windows) {
            let truth = self.select(&w.future.reshaped(&[self.future, w.joints(), 1, 3])?)?;
            total += mpjpe(p, &truth.reshaped(&[self.future, self.m(), 3])?, &[])?;
        }
        Ok(total / windows.len() as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DlnTrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for DlnTrainSettings {
    fn default() -> Self {
        DlnTrainSettings { epochs: 200, batch_size: 32, learning_rate: 0.001, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DlnRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_selected_error: f64,
}

/// Fits the deliberate network to the selected joints of `train` with a plain
/// squared-displacement loss. The parameters left in `store` are those of the
/// epoch with the lowest validation error, the initial ones included.
pub fn dln_train(
    dtc: &Dtc,
    store: &mut ParamStore,
    train: &[WindowPair],
    val: &[WindowPair],
    settings: &DlnTrainSettings,
    on_epoch: &mut dyn FnMut(&DlnRecord),
) -> Result<Vec<DlnRecord>> {
    if settings.batch_size == 0 {
        return Err(HvisError::Parameter("batch size must be positive".into()));
    }
    if train.is_empty() || val.is_empty() {
        return Err(HvisError::Contract("deliberate training needs training and validation windows".into()));
    }
    let mut adam = AdamState::new(store, settings.learning_rate)?;
    let mut rng = SeedRng::seed_from_u64(settings.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::with_capacity(settings.epochs);
    let mut best = (dtc.selected_error(&dtc.predict_windows(store, val, settings.batch_size)?, val)?, store.clone());
    for epoch in 1..=settings.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut batches) = (0.0, 0usize);
        for idx in order.chunks(settings.batch_size) {
            let obs = dtc.select(&stack_batch(&idx.iter().map(|&i| &train[i].observed).collect::<Vec<_>>())?)?;
            let real = dtc.select(&stack_batch(&idx.iter().map(|&i| &train[i].future).collect::<Vec<_>>())?)?;
            let (value, grads) = {
                let mut tape = Tape::new();
                let mut p = Bindings::trainable(store);
                let o = tape.constant(obs);
                let y = dtc.forward(&mut tape, &mut p, o, &mut Mode::Train(&mut rng))?;
                let t = tape.constant(real);
                let loss = joint_loss(&mut tape, y, t)?;
                let value = tape.scalar_value(loss);
                if !value.is_finite() || value.abs() > DIVERGENCE_LIMIT {
                    return Err(HvisError::Divergence(format!(
                        "deliberate loss {value} at epoch {epoch}, batch {}",
                        batches + 1
                    )));
                }
                tape.backward(loss)?;
                (value, p.grads(&tape))
            };
            adam_step(store, &grads, &mut adam).map_err(|e| HvisError::Divergence(e.to_string()))?;
            sum += value;
            batches += 1;
        }
        let preds = dtc.predict_windows(store, val, settings.batch_size)?;
        let record = DlnRecord { epoch, loss: sum / batches as f64, val_selected_error: dtc.selected_error(&preds, val)? };
        on_epoch(&record);
        if record.val_selected_error < best.0 {
            best = (record.val_selected_error, store.clone());
        }
        curve.push(record);
    }
    *store = best.1;
    Ok(curve)
}
