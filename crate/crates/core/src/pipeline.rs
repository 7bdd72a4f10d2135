//! Two-stage training, evaluation and ablation on top of the model modules.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use sha2::{Digest, Sha256};

use crate::autodiff::nn::SeedRng;
use crate::autodiff::{hex_digest, ParamStore, Tensor};
use crate::checkpoint::CheckpointBundle;
use crate::config::TrainConfig;
use crate::data::{
    downsample, load_csv, make_windows, mpjpe, stack_batch, synth_corpus, unstack_item, zero_velocity_baseline,
    MotionSequence, SkeletonSpec, Split, SynthConfig, WindowPair,
};
use crate::dln::{dln_train, dtc_tcn_config, fuse_predictions, memorize_errors, rank_joints, DeliberateMap, DlnRecord, DlnTrainSettings, Dtc};
use crate::error::{HvisError, Result};
use crate::sln::{sln_train, Critic, LossRecord, Sln, SlnConfig, SlnTrainSettings, SlnVariant};

pub const CRITIC_WIDTH: usize = 256;
pub const CRITIC_LAYERS: usize = 3;

#[derive(Clone, Debug)]
pub struct Corpus {
    pub skeleton: SkeletonSpec,
    pub sequences: Vec<MotionSequence>,
    pub fingerprint: String,
}

pub fn corpus_fingerprint(sequences: &[MotionSequence]) -> String {
    let mut h = Sha256::new();
    for s in sequences {
        h.update(s.label.as_deref().unwrap_or("").as_bytes());
        h.update([0]);
        for d in s.positions().shape() {
            h.update((*d as u64).to_le_bytes());
        }
        h.update(s.fps().to_le_bytes());
        for v in s.positions().values() {
            h.update(v.to_le_bytes());
        }
    }
    hex_digest(&h.finalize())
}

pub fn load_skeleton(cfg: &TrainConfig) -> Result<SkeletonSpec> {
    match &cfg.skeleton {
        Some(p) => SkeletonSpec::load(p),
        None => Ok(SkeletonSpec::default_body()),
    }
}

/// Every `*.csv` in `dir`, in file-name order, resampled to `fps`. Files
/// without an fps comment are taken to be at `fps` already.
pub fn load_csv_dir(dir: &Path, skeleton: &SkeletonSpec, fps: f64) -> Result<Vec<MotionSequence>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(HvisError::Format(format!("no .csv files in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p)?;
            let has_fps = text.lines().take_while(|l| l.trim_start().starts_with('#')).any(|l| l.contains("fps="));
            let seq = load_csv(p, skeleton, if has_fps { None } else { Some(fps) })
                .map_err(|e| HvisError::Format(format!("{}: {e}", p.display())))?;
            let seq = if (seq.fps() - fps).abs() > 1e-9 { downsample(&seq, fps)? } else { seq };
            let label = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(seq.with_label(label))
        })
        .collect()
}

pub fn synth_config(cfg: &TrainConfig, skeleton: &SkeletonSpec) -> SynthConfig {
    SynthConfig {
        n_sequences: cfg.synth_sequences,
        frames: cfg.synth_frames,
        fps: cfg.fps,
        seed: cfg.seed,
        observed: cfg.observed,
        future: cfg.future,
        ..SynthConfig::for_skeleton(skeleton, cfg.seed)
    }
}

pub fn load_corpus(cfg: &TrainConfig) -> Result<Corpus> {
    let skeleton = load_skeleton(cfg)?;
    let sequences = match &cfg.corpus {
        Some(dir) => load_csv_dir(dir, &skeleton, cfg.fps)?,
        None => synth_corpus(&skeleton, &synth_config(cfg, &skeleton))?,
    };
    let fingerprint = corpus_fingerprint(&sequences);
    Ok(Corpus { skeleton, sequences, fingerprint })
}

/// Sequence-level split and the root-aligned windows of each part.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub split: Split,
    pub train: Vec<WindowPair>,
    pub val: Vec<WindowPair>,
    pub test: Vec<WindowPair>,
}

pub fn prepare(cfg: &TrainConfig, corpus: &Corpus) -> Result<Prepared> {
    let split = Split::new(corpus.sequences.len(), cfg.seed);
    let root = corpus.skeleton.root();
    let windows = |ids: &[usize], what: &str| -> Result<Vec<WindowPair>> {
        let mut out = Vec::new();
        for &i in ids {
            out.extend(make_windows(&corpus.sequences[i], cfg.observed, cfg.future, cfg.stride, root)?);
        }
        if out.is_empty() {
            return Err(HvisError::Contract(format!(
                "{what} split has no window of {} frames ({} sequences)",
                cfg.observed + cfg.future,
                ids.len()
            )));
        }
        Ok(out)
    };
    Ok(Prepared {
        train: windows(&split.train, "training")?,
        val: windows(&split.val, "validation")?,
        test: windows(&split.test, "test")?,
        split,
    })
}

/// Everything needed to predict: generator, critic, hard-joint map and the
/// optional deliberate network.
#[derive(Clone, Debug)]
pub struct HimModel {
    pub config: TrainConfig,
    pub skeleton: SkeletonSpec,
    pub variant: SlnVariant,
    pub sln: Sln,
    pub sln_store: ParamStore,
    pub critic: Critic,
    pub critic_store: ParamStore,
    pub map: DeliberateMap,
    pub dtc: Option<(Dtc, ParamStore)>,
}

pub fn variant_name(v: SlnVariant) -> &'static str {
    match v {
        SlnVariant::Full => "full",
        SlnVariant::PlainEncoder => "plain-encoder",
        SlnVariant::NoTemporal => "no-temporal",
    }
}

fn parse_variant(s: &str) -> Result<SlnVariant> {
    match s.trim() {
        "full" => Ok(SlnVariant::Full),
        "plain-encoder" => Ok(SlnVariant::PlainEncoder),
        "no-temporal" => Ok(SlnVariant::NoTemporal),
        other => Err(HvisError::Checkpoint(format!("unknown model variant {other:?}"))),
    }
}

impl HimModel {
    /// Freshly initialised generator and critic; no deliberate network yet.
    pub fn init(cfg: &TrainConfig, skeleton: &SkeletonSpec, variant: SlnVariant, rng: &mut SeedRng) -> Result<Self> {
        let mut sln_store = ParamStore::new();
        let sln_cfg = SlnConfig { variant, ..SlnConfig::new(cfg.observed, cfg.future) };
        let sln = Sln::new(&mut sln_store, skeleton, &sln_cfg, rng)?;
        let mut critic_store = ParamStore::new();
        let n = skeleton.joint_count();
        let critic = Critic::new(&mut critic_store, cfg.observed, cfg.future, n, CRITIC_WIDTH, CRITIC_LAYERS, rng)?;
        critic_store.clip(cfg.clip_c);
        Ok(HimModel {
            config: cfg.clone(),
            skeleton: skeleton.clone(),
            variant,
            sln,
            sln_store,
            critic,
            critic_store,
            map: DeliberateMap::disabled(&vec![0.0; n])?,
            dtc: None,
        })
    }

    pub fn joints(&self) -> usize {
        self.skeleton.joint_count()
    }

    /// Same generator with the deliberate stage switched off.
    pub fn without_dln(&self) -> Result<Self> {
        let mut m = self.clone();
        m.map = DeliberateMap::disabled(&self.map.per_joint_error)?;
        m.dtc = None;
        Ok(m)
    }

    /// `[O, N, B, 3]` to (`sln`, `fused`) predictions `[F, N, B, 3]`.
    pub fn predict_batch(&self, observed: &Tensor) -> Result<(Tensor, Tensor)> {
        let sln = self.sln.predict(&self.sln_store, observed)?;
        let Some((dtc, store)) = &self.dtc else {
            return Ok((sln.clone(), sln));
        };
        let deliberate = dtc.predict(store, &dtc.select(observed)?)?;
        let b = observed.shape()[2];
        let items = (0..b)
            .map(|k| fuse_predictions(&unstack_item(&sln, k)?, Some(&unstack_item(&deliberate, k)?), &self.map))
            .collect::<Result<Vec<_>>>()?;
        let fused = stack_batch(&items.iter().collect::<Vec<_>>())?;
        Ok((sln, fused))
    }

    /// Per-window (`sln`, `fused`) predictions `[F, N, 3]`.
    pub fn predict_windows(&self, windows: &[WindowPair]) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
        let (mut sln, mut fused) = (Vec::with_capacity(windows.len()), Vec::with_capacity(windows.len()));
        for chunk in windows.chunks(self.config.batch_size.max(1)) {
            let obs = stack_batch(&chunk.iter().map(|w| &w.observed).collect::<Vec<_>>())?;
            let (s, f) = self.predict_batch(&obs)?;
            for k in 0..chunk.len() {
                sln.push(unstack_item(&s, k)?);
                fused.push(unstack_item(&f, k)?);
            }
        }
        Ok((sln, fused))
    }

    /// Predicts `F` frames after a raw `[T >= O, N, 3]` sequence, in its own coordinates.
    pub fn predict_sequence(&self, observed: &Tensor) -> Result<Tensor> {
        let (o, n) = (self.config.observed, self.joints());
        let t = match *observed.shape() {
            [t, n2, 3] if n2 == n && t >= o => t,
            [t, n2, 3] if n2 == n => {
                return Err(HvisError::Contract(format!("input has {t} frames; at least {o} observed frames are required")))
            }
            ref s => return Err(HvisError::Contract(format!("input shape {s:?} does not match a {n}-joint skeleton"))),
        };
        let window = Tensor::new(&[o, n, 3], observed.values()[(t - o) * n * 3..].to_vec())?;
        let r = self.skeleton.root();
        let origin: [f64; 3] = std::array::from_fn(|c| window.values()[((o - 1) * n + r) * 3 + c]);
        let aligned = Tensor::from_fn(&[o, n, 3], |i| window.values()[i] - origin[i % 3]);
        let (_, fused) = self.predict_batch(&stack_batch(&[&aligned])?)?;
        let pred = unstack_item(&fused, 0)?;
        Ok(Tensor::from_fn(pred.shape(), |i| pred.values()[i] + origin[i % 3]))
    }

    pub fn to_bundle(&self, corpus_fingerprint: &str) -> Result<CheckpointBundle> {
        let mut b = CheckpointBundle::new();
        for (name, t) in self.sln_store.iter() {
            let group = if name.starts_with("encoder.") { "encoder" } else { "trn" };
            b.push_tensor(format!("{group}/{name}"), t)?;
        }
        b.push_store("critic", &self.critic_store)?;
        if let Some((_, store)) = &self.dtc {
            b.push_store("dtc", store)?;
        }
        b.push_text("deliberate_map", self.map.to_text())?;
        b.push_text("config", self.config.to_toml())?;
        b.push_text("skeleton", self.skeleton.to_text())?;
        b.push_text("variant", variant_name(self.variant))?;
        b.push_text("corpus_fingerprint", corpus_fingerprint)?;
        Ok(b)
    }

    /// Rebuilds the model described by a bundle; returns it with the corpus fingerprint.
    pub fn from_bundle(bundle: &CheckpointBundle) -> Result<(Self, String)> {
        let config = TrainConfig::from_toml_str(bundle.text("config")?)
            .map_err(|e| HvisError::Checkpoint(format!("config segment: {e}")))?;
        let skeleton = SkeletonSpec::parse(bundle.text("skeleton")?)?;
        let variant = parse_variant(bundle.text("variant")?)?;
        let map = DeliberateMap::from_text(bundle.text("deliberate_map")?)?;
        if map.joints() != skeleton.joint_count() {
            return Err(HvisError::Checkpoint(format!(
                "deliberate map covers {} joints, skeleton has {}",
                map.joints(),
                skeleton.joint_count()
            )));
        }
        let mut rng = SeedRng::seed_from_u64(config.seed);
        let mut model = HimModel::init(&config, &skeleton, variant, &mut rng)?;
        let names: Vec<String> = model.sln_store.iter().map(|(n, _)| n.to_string()).collect();
        for name in &names {
            let group = if name.starts_with("encoder.") { "encoder" } else { "trn" };
            model.sln_store.assign(name, bundle.tensor(&format!("{group}/{name}"))?)?;
        }
        bundle.restore_store("critic", &mut model.critic_store)?;
        if map.m() > 0 {
            let mut store = ParamStore::new();
            let dtc = Dtc::new(&mut store, &map, config.observed, config.future, &dtc_tcn_config(config.future, map.m()), &mut rng)?;
            bundle.restore_store("dtc", &mut store)?;
            model.dtc = Some((dtc, store));
        }
        model.map = map;
        let fp = bundle.text("corpus_fingerprint")?.to_string();
        Ok((model, fp))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: HimModel,
    pub sln_curve: Vec<LossRecord>,
    pub dln_curve: Vec<DlnRecord>,
}

/// Progress sink for long runs.
pub enum Progress<'a> {
    Sln(&'a LossRecord),
    Dln(&'a DlnRecord),
}

/// Stage 1 (adversarial generator) and, when `with_dln`, stage 2 (hard-joint
/// selection and deliberate retraining).
pub fn train_model(
    cfg: &TrainConfig,
    corpus: &Corpus,
    data: &Prepared,
    variant: SlnVariant,
    with_dln: bool,
    progress: &mut dyn FnMut(Progress),
) -> Result<TrainOutcome> {
    let mut rng = SeedRng::seed_from_u64(cfg.seed);
    let mut model = HimModel::init(cfg, &corpus.skeleton, variant, &mut rng)?;
    let settings = SlnTrainSettings {
        epochs: cfg.epochs_sln,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        n_critic: cfg.n_critic,
        clip: cfg.clip_c,
        lambda: cfg.lambda,
        seed: cfg.seed,
    };
    let sln_curve = sln_train(
        &model.sln,
        &mut model.sln_store,
        &model.critic,
        &mut model.critic_store,
        &data.train,
        &data.val,
        &settings,
        &mut |r| progress(Progress::Sln(r)),
    )?;
    let outcome = TrainOutcome { model, sln_curve, dln_curve: Vec::new() };
    if with_dln {
        add_dln(cfg, outcome, data, progress)
    } else {
        let mut outcome = outcome;
        let m = &mut outcome.model;
        m.map = DeliberateMap::disabled(&memorize_errors(&m.sln, &m.sln_store, &data.val, cfg.batch_size)?)?;
        Ok(outcome)
    }
}

/// Memorizes validation errors of the trained generator, selects the hard
/// joints and trains the deliberate network on them.
pub fn add_dln(cfg: &TrainConfig, mut outcome: TrainOutcome, data: &Prepared, progress: &mut dyn FnMut(Progress)) -> Result<TrainOutcome> {
    let model = &mut outcome.model;
    let errors = memorize_errors(&model.sln, &model.sln_store, &data.val, cfg.batch_size)?;
    let map = rank_joints(&errors, cfg.hard_count(model.joints())?)?;
    let mut rng = SeedRng::seed_from_u64(cfg.seed ^ 0xd1_7c);
    let mut store = ParamStore::new();
    let dtc = Dtc::new(&mut store, &map, cfg.observed, cfg.future, &dtc_tcn_config(cfg.future, map.m()), &mut rng)?;
    let settings = DlnTrainSettings { epochs: cfg.epochs_dln, batch_size: cfg.batch_size, learning_rate: cfg.learning_rate, seed: cfg.seed };
    outcome.dln_curve = dln_train(&dtc, &mut store, &data.train, &data.val, &settings, &mut |r| progress(Progress::Dln(r)))?;
    model.map = map;
    model.dtc = Some((dtc, store));
    Ok(outcome)
}

pub const PREDICTORS: [&str; 3] = ["zero-velocity", "sln-only", "sln+dln"];

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub horizon_ms: f64,
    pub frame: usize,
    pub predictor: &'static str,
    pub mpjpe: f64,
}

/// Per-horizon MPJPE of the baseline, the generator alone and the fused output.
pub fn evaluate(model: &HimModel, windows: &[WindowPair], horizons_ms: &[f64]) -> Result<Vec<EvalRow>> {
    if windows.is_empty() {
        return Err(HvisError::Contract("no evaluation windows".into()));
    }
    let fps = model.config.fps;
    let (sln, fused) = model.predict_windows(windows)?;
    let zero = windows.iter().map(|w| zero_velocity_baseline(&w.observed, w.future_len())).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for &ms in horizons_ms {
        let frame = crate::data::horizon_frames(ms, fps);
        for (name, preds) in PREDICTORS.iter().zip([&zero, &sln, &fused]) {
            let mut total = 0.0;
            for (p, w) in preds.iter().zip(windows) {
                total += mpjpe(p, &w.future, &[frame])?;
            }
            rows.push(EvalRow { horizon_ms: ms, frame, predictor: name, mpjpe: total / windows.len() as f64 });
        }
    }
    Ok(rows)
}

pub fn eval_csv(rows: &[EvalRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["horizon_ms", "frame", "predictor", "mpjpe_mm"])?;
    for r in rows {
        w.write_record([r.horizon_ms.to_string(), r.frame.to_string(), r.predictor.to_string(), format!("{:.6}", r.mpjpe)])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| HvisError::Io(e.into_error()))?).expect("csv output is UTF-8"))
}

fn aligned(header: &[String], body: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| body.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (c, cell) in cells.iter().enumerate() {
            if c == 0 {
                let _ = write!(s, "{cell:<w$}", w = widths[c]);
            } else {
                let _ = write!(s, "  {cell:>w$}", w = widths[c]);
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header);
    out.push_str(&line(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>()));
    for r in body {
        out.push_str(&line(r));
    }
    out
}

/// Predictors as rows, horizons as columns.
pub fn eval_table(rows: &[EvalRow]) -> String {
    let mut horizons: Vec<(f64, usize)> = Vec::new();
    for r in rows {
        if !horizons.iter().any(|h| h.0 == r.horizon_ms) {
            horizons.push((r.horizon_ms, r.frame));
        }
    }
    let mut header = vec!["predictor (mm)".to_string()];
    header.extend(horizons.iter().map(|(ms, _)| format!("{ms}ms")));
    let body: Vec<Vec<String>> = PREDICTORS
        .iter()
        .map(|p| {
            let mut row = vec![p.to_string()];
            for (ms, _) in &horizons {
                let v = rows.iter().find(|r| r.predictor == *p && r.horizon_ms == *ms).map(|r| r.mpjpe);
                row.push(v.map_or("-".into(), |v| format!("{v:.2}")));
            }
            row
        })
        .collect();
    aligned(&header, &body)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    NoHvm,
    NoTrn,
    NoDln,
}

impl Ablation {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "no-hvm" => Ok(Ablation::NoHvm),
            "no-trn" => Ok(Ablation::NoTrn),
            "no-dln" => Ok(Ablation::NoDln),
            other => Err(HvisError::Parameter(format!("unknown ablation variant {other:?} (expected no-hvm, no-trn or no-dln)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoHvm => "no-hvm",
            Ablation::NoTrn => "no-trn",
            Ablation::NoDln => "no-dln",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub name: String,
    /// Test MPJPE per configured horizon.
    pub mpjpe: Vec<f64>,
    /// Mean error over the full model's selected joints, all future frames.
    pub selected_error: f64,
    pub split_fingerprint: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub horizons_ms: Vec<f64>,
    pub selected: Vec<usize>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["variant".to_string()];
        header.extend(self.horizons_ms.iter().map(|ms| format!("mpjpe_{ms}ms")));
        header.push("selected_joint_error".into());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.name.clone()];
            rec.extend(r.mpjpe.iter().map(|v| format!("{v:.6}")));
            rec.push(format!("{:.6}", r.selected_error));
            w.write_record(&rec)?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| HvisError::Io(e.into_error()))?).expect("csv output is UTF-8"))
    }

    pub fn table(&self) -> String {
        let mut header = vec!["variant (mm)".to_string()];
        header.extend(self.horizons_ms.iter().map(|ms| format!("{ms}ms")));
        header.push("selected".into());
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut row = vec![r.name.clone()];
                row.extend(r.mpjpe.iter().map(|v| format!("{v:.2}")));
                row.push(format!("{:.2}", r.selected_error));
                row
            })
            .collect();
        aligned(&header, &body)
    }
}

fn ablation_row(name: &str, model: &HimModel, data: &Prepared, selected: &[usize], horizons_ms: &[f64]) -> Result<AblationRow> {
    let (_, fused) = model.predict_windows(&data.test)?;
    let mut mpjpes = Vec::with_capacity(horizons_ms.len());
    for &ms in horizons_ms {
        let frame = crate::data::horizon_frames(ms, model.config.fps);
        let mut total = 0.0;
        for (p, w) in fused.iter().zip(&data.test) {
            total += mpjpe(p, &w.future, &[frame])?;
        }
        mpjpes.push(total / data.test.len() as f64);
    }
    let errors = crate::dln::errors_from_predictions(&fused, &data.test)?;
    let selected_error = selected.iter().map(|&j| errors[j]).sum::<f64>() / selected.len().max(1) as f64;
    Ok(AblationRow { name: name.to_string(), mpjpe: mpjpes, selected_error, split_fingerprint: data.split.fingerprint() })
}

/// Trains the full model and each requested variant under one seed and split,
/// and scores all of them on the test windows.
pub fn ablate(
    cfg: &TrainConfig,
    corpus: &Corpus,
    variants: &[Ablation],
    progress: &mut dyn FnMut(&str, Progress),
) -> Result<(AblationReport, HimModel)> {
    let data = prepare(cfg, corpus)?;
    let full = train_model(cfg, corpus, &data, SlnVariant::Full, true, &mut |p| progress("full", p))?.model;
    let selected = full.map.selected.clone();
    let mut rows = vec![ablation_row("full", &full, &data, &selected, &cfg.horizons_ms)?];
    for &v in variants {
        let model = match v {
            // The generator does not depend on the second stage, so the full run's is reused.
            Ablation::NoDln => full.without_dln()?,
            Ablation::NoHvm => train_model(cfg, corpus, &data, SlnVariant::PlainEncoder, true, &mut |p| progress(v.name(), p))?.model,
            Ablation::NoTrn => train_model(cfg, corpus, &data, SlnVariant::NoTemporal, true, &mut |p| progress(v.name(), p))?.model,
        };
        rows.push(ablation_row(v.name(), &model, &data, &selected, &cfg.horizons_ms)?);
    }
    Ok((AblationReport { horizons_ms: cfg.horizons_ms.clone(), selected, rows }, full))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            observed: 4,
            future: 2,
            horizons_ms: vec![40.0, 80.0],
            synth_sequences: 6,
            synth_frames: 16,
            epochs_sln: 0,
            epochs_dln: 0,
            stride: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epoch_bundle_round_trip() {
        let cfg = tiny_cfg();
        cfg.validate().unwrap();
        let corpus = load_corpus(&cfg).unwrap();
        let data = prepare(&cfg, &corpus).unwrap();
        let out = train_model(&cfg, &corpus, &data, SlnVariant::Full, true, &mut |_| {}).unwrap();
        let mut rng = SeedRng::seed_from_u64(cfg.seed);
        let init = HimModel::init(&cfg, &corpus.skeleton, SlnVariant::Full, &mut rng).unwrap();
        assert_eq!(out.model.sln_store, init.sln_store);
        let bundle = out.model.to_bundle(&corpus.fingerprint).unwrap();
        let bytes = bundle.to_bytes();
        let (back, fp) = HimModel::from_bundle(&CheckpointBundle::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(fp, corpus.fingerprint);
        assert_eq!(back.to_bundle(&fp).unwrap().to_bytes(), bytes);
        let rows = evaluate(&back, &data.test, &cfg.horizons_ms).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!((rows[0].frame, rows[3].frame), (1, 2));
    }

    #[test]
    fn sequence_prediction_is_translation_equivariant() {
        let cfg = tiny_cfg();
        let corpus = load_corpus(&cfg).unwrap();
        let model = HimModel::init(&cfg, &corpus.skeleton, SlnVariant::Full, &mut SeedRng::seed_from_u64(1)).unwrap();
        let seq = corpus.sequences[0].slice_frames(0, 6);
        let shifted = Tensor::from_fn(seq.shape(), |i| seq.values()[i] + [0.5, -1.0, 2.0][i % 3]);
        let a = model.predict_sequence(&seq).unwrap();
        let b = model.predict_sequence(&shifted).unwrap();
        for (i, (x, y)) in a.values().iter().zip(b.values()).enumerate() {
            assert!((x + [0.5, -1.0, 2.0][i % 3] - y).abs() < 1e-9);
        }
        assert!(model.predict_sequence(&corpus.sequences[0].slice_frames(0, 3)).is_err());
    }

    #[test]
    fn unknown_ablation() {
        assert!(matches!(Ablation::parse("no-xyz"), Err(HvisError::Parameter(_))));
        assert_eq!(Ablation::parse("no-dln").unwrap(), Ablation::NoDln);
    }
}
