use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;

use super::model::{critic_loss, generator_loss, Critic, Sln};
use crate::autodiff::nn::{Mode, SeedRng};
use crate::autodiff::{adam_step, AdamState, Bindings, ParamStore, Tape};
use crate::data::{mpjpe, stack_batch, unstack_item, WindowPair};
use crate::error::{HvisError, Result};

/// Generator losses above this magnitude abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Clone, Debug, PartialEq)]
pub struct SlnTrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub n_critic: usize,
    pub clip: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for SlnTrainSettings {
    fn default() -> Self {
        SlnTrainSettings { epochs: 200, batch_size: 32, learning_rate: 0.001, n_critic: 5, clip: 0.01, lambda: 1.0, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub generator_loss: f64,
    pub critic_objective: f64,
    pub val_mpjpe: f64,
}

pub fn write_loss_curve<W: Write>(out: W, curve: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "generator_loss", "critic_objective", "val_mpjpe"])?;
    for r in curve {
        w.write_record([
            r.epoch.to_string(),
            r.generator_loss.to_string(),
            r.critic_objective.to_string(),
            r.val_mpjpe.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Eval-mode predictions `[F, N, 3]` for each window, in order.
pub fn predict_windows(sln: &Sln, store: &ParamStore, windows: &[WindowPair], batch_size: usize) -> Result<Vec<crate::autodiff::Tensor>> {
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(batch_size.max(1)) {
        let obs: Vec<_> = chunk.iter().map(|w| &w.observed).collect();
        let pred = sln.predict(store, &stack_batch(&obs)?)?;
        for k in 0..chunk.len() {
            out.push(unstack_item(&pred, k)?);
        }
    }
    Ok(out)
}

/// Mean MPJPE over all future frames of all windows (millimeters).
pub fn mean_mpjpe(preds: &[crate::autodiff::Tensor], windows: &[WindowPair], horizons: &[usize]) -> Result<f64> {
    if windows.is_empty() {
        return Err(HvisError::Contract("no windows to evaluate".into()));
    }
    let mut total = 0.0;
    for (p, w) in preds.iter().zip(windows) {
        total += mpjpe(p, &w.future, horizons)?;
    }
    Ok(total / windows.len() as f64)
}

/// One critic update on detached batches; returns the objective before the step.
pub fn critic_train_step(
    critic: &Critic,
    store: &mut ParamStore,
    adam: &mut AdamState,
    observed: &crate::autodiff::Tensor,
    fake: &crate::autodiff::Tensor,
    real: &crate::autodiff::Tensor,
    clip: f64,
) -> Result<f64> {
    let (loss, grads) = {
        let mut tape = Tape::new();
        let mut p = Bindings::trainable(store);
        let o = tape.constant(observed.clone());
        let f = tape.constant(fake.clone());
        let r = tape.constant(real.clone());
        let loss = critic_loss(&mut tape, critic, &mut p, o, f, r)?;
        let value = tape.scalar_value(loss);
        if !value.is_finite() {
            return Err(HvisError::Training(format!("critic objective is {value}")));
        }
        tape.backward(loss)?;
        (value, p.grads(&tape))
    };
    adam_step(store, &grads, adam)?;
    store.clip(clip);
    Ok(loss)
}

fn check_windows(sln: &Sln, windows: &[WindowPair], what: &str) -> Result<()> {
    if windows.is_empty() {
        return Err(HvisError::Contract(format!("{what} set has no windows")));
    }
    let (o, f, n) = (sln.config.observed, sln.config.future, sln.joints);
    if let Some(w) = windows.iter().find(|w| w.observed.shape() != [o, n, 3] || w.future.shape() != [f, n, 3]) {
        return Err(HvisError::dim(
            "sln_train",
            format!("{what} window {:?}/{:?} vs model O={o} F={f} N={n}", w.observed.shape(), w.future.shape()),
        ));
    }
    Ok(())
}

/// Adversarial training of generator and critic. `on_epoch` sees each loss record.
#[allow(clippy::too_many_arguments)]
pub fn sln_train(
    sln: &Sln,
    store: &mut ParamStore,
    critic: &Critic,
    critic_store: &mut ParamStore,
    train: &[WindowPair],
    val: &[WindowPair],
    settings: &SlnTrainSettings,
    on_epoch: &mut dyn FnMut(&LossRecord),
) -> Result<Vec<LossRecord>> {
    if settings.batch_size == 0 || settings.n_critic == 0 || !(settings.clip > 0.0) {
        return Err(HvisError::Parameter(format!("invalid training settings {settings:?}")));
    }
    check_windows(sln, train, "training")?;
    check_windows(sln, val, "validation")?;
    let mut gen_adam = AdamState::new(store, settings.learning_rate)?;
    let mut critic_adam = AdamState::new(critic_store, settings.learning_rate)?;
    let mut rng = SeedRng::seed_from_u64(settings.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::with_capacity(settings.epochs);

    for epoch in 1..=settings.epochs {
        order.shuffle(&mut rng);
        let (mut gen_sum, mut critic_sum, mut batches) = (0.0, 0.0, 0usize);
        for idx in order.chunks(settings.batch_size) {
            let obs = stack_batch(&idx.iter().map(|&i| &train[i].observed).collect::<Vec<_>>())?;
            let real = stack_batch(&idx.iter().map(|&i| &train[i].future).collect::<Vec<_>>())?;

            let mut tape = Tape::new();
            let mut p = Bindings::trainable(store);
            let obs_v = tape.constant(obs.clone());
            let gen = sln.forward(&mut tape, &mut p, obs_v, &mut Mode::Train(&mut rng))?;
            let fake = tape.value(gen).clone();
            let mut objective = 0.0;
            for _ in 0..settings.n_critic {
                objective = critic_train_step(critic, critic_store, &mut critic_adam, &obs, &fake, &real, settings.clip)?;
            }

            let truth = tape.constant(real);
            let mut cp = Bindings::frozen(critic_store);
            let loss = generator_loss(&mut tape, critic, &mut cp, obs_v, gen, truth, settings.lambda)?;
            let value = tape.scalar_value(loss);
            if !value.is_finite() || value.abs() > DIVERGENCE_LIMIT {
                return Err(HvisError::Divergence(format!("generator loss {value} at epoch {epoch}, batch {}", batches + 1)));
            }
            tape.backward(loss)?;
            let grads = p.grads(&tape);
            drop(p);
            adam_step(store, &grads, &mut gen_adam).map_err(|e| HvisError::Divergence(e.to_string()))?;
            gen_sum += value;
            critic_sum += objective;
            batches += 1;
        }
        let preds = predict_windows(sln, store, val, settings.batch_size)?;
        let record = LossRecord {
            epoch,
            generator_loss: gen_sum / batches as f64,
            critic_objective: critic_sum / batches as f64,
            val_mpjpe: mean_mpjpe(&preds, val, &[])?,
        };
        on_epoch(&record);
        curve.push(record);
    }
    Ok(curve)
}
