//! `hvis` command line: train, eval, predict, ablate, synth.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::CheckpointBundle;
use crate::config::TrainConfig;
use crate::data::sequence::parse_csv;
use crate::data::{downsample, make_windows, save_csv, synth_corpus, write_csv, MotionSequence, SkeletonSpec};
use crate::error::{HvisError, Result};
use crate::pipeline::{
    ablate, eval_csv, eval_table, evaluate, load_corpus, load_csv_dir, prepare, synth_config, train_model, Ablation, HimModel,
    Progress,
};
use crate::sln::{write_loss_curve, LossRecord, SlnVariant};

#[derive(Parser, Debug)]
#[command(name = "hvis", version, about = "Skeleton motion prediction: training, evaluation and export")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train the generator and the deliberate network, then write a checkpoint.
    Train(ConfigArgs),
    /// Per-horizon MPJPE of baseline, generator and fused predictions.
    Eval(EvalArgs),
    /// Append predicted frames to an observed CSV sequence.
    Predict(PredictArgs),
    /// Train ablated variants under the same seed and split and compare them.
    Ablate(AblateArgs),
    /// Write the synthetic corpus as CSV files.
    Synth(SynthArgs),
}

/// Every field of the run configuration, each overriding the config file.
#[derive(Args, Debug, Default, Clone)]
pub struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Observed frames per window.
    #[arg(long)]
    pub observed: Option<usize>,
    /// Predicted frames per window.
    #[arg(long)]
    pub future: Option<usize>,
    /// Frame rate that all sequences are resampled to.
    #[arg(long)]
    pub fps: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Critic updates per generator update.
    #[arg(long)]
    pub n_critic: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Generator training epochs.
    #[arg(long)]
    pub epochs_sln: Option<usize>,
    /// Deliberate network training epochs.
    #[arg(long)]
    pub epochs_dln: Option<usize>,
    /// Critic weight clip.
    #[arg(long)]
    pub clip_c: Option<f64>,
    /// Weight of the position loss against the adversarial term.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Number of hard joints to retrain.
    #[arg(long)]
    pub m: Option<usize>,
    /// Hard joints as a fraction of the joint count.
    #[arg(long)]
    pub m_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated evaluation horizons in milliseconds.
    #[arg(long, value_delimiter = ',')]
    pub horizons_ms: Option<Vec<f64>>,
    /// Frame stride between consecutive windows.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Synthetic sequences to generate when no corpus is given.
    #[arg(long)]
    pub synth_sequences: Option<usize>,
    /// Frames per synthetic sequence.
    #[arg(long)]
    pub synth_frames: Option<usize>,
    /// Directory of CSV sequences; the synthetic corpus is used when absent.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Skeleton text file; the built-in 12-joint body when absent.
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
    /// Checkpoint path to write.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Directory for loss curves and tables.
    #[arg(long)]
    pub reports: Option<PathBuf>,
}

macro_rules! override_fields {
    ($cfg:ident, $args:ident, $($f:ident),*) => {
        $(if let Some(v) = $args.$f.clone() { $cfg.$f = v; })*
    };
}

impl ConfigArgs {
    /// File, then `HVIS_SEED`, then flags; validated.
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        cfg.apply_seed_env()?;
        let a = self;
        override_fields!(
            cfg, a, observed, future, fps, learning_rate, n_critic, batch_size, epochs_sln, epochs_dln, clip_c, lambda, seed,
            horizons_ms, stride, synth_sequences, synth_frames, checkpoint, reports
        );
        if a.m.is_some() {
            cfg.m = a.m;
            cfg.m_fraction = None;
        }
        if a.m_fraction.is_some() {
            cfg.m_fraction = a.m_fraction;
            cfg.m = None;
        }
        if a.corpus.is_some() {
            cfg.corpus = a.corpus.clone();
        }
        if a.skeleton.is_some() {
            cfg.skeleton = a.skeleton.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// CSV directory to evaluate on (all windows); defaults to the test split of the training corpus.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Skeleton of `--corpus`, checked against the checkpoint's.
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub horizons_ms: Option<Vec<f64>>,
    #[arg(long)]
    pub reports: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Frames to predict; at most the checkpoint's future length.
    #[arg(long)]
    pub future: Option<usize>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Comma-separated subset of no-hvm, no-trn, no-dln; empty for the full model only.
    #[arg(long, value_delimiter = ',', default_value = "no-hvm,no-trn,no-dln")]
    pub variants: Vec<String>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory for the CSV files and `skeleton.txt`.
    #[arg(long)]
    pub out: PathBuf,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}

fn log_progress(tag: &str, p: Progress) {
    match p {
        Progress::Sln(r) => eprintln!(
            "[{tag}] sln epoch {:>4}  generator {:.6}  critic {:+.6}  val mpjpe {:.2} mm",
            r.epoch, r.generator_loss, r.critic_objective, r.val_mpjpe
        ),
        Progress::Dln(r) => eprintln!("[{tag}] dln epoch {:>4}  loss {:.6}  selected-joint error {:.2} mm", r.epoch, r.loss, r.val_selected_error),
    }
}

fn cmd_train(args: &ConfigArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let corpus = load_corpus(&cfg)?;
    let data = prepare(&cfg, &corpus)?;
    let mut sln_seen: Vec<LossRecord> = Vec::new();
    let result = train_model(&cfg, &corpus, &data, SlnVariant::Full, true, &mut |p| {
        if let Progress::Sln(r) = &p {
            sln_seen.push((*r).clone());
        }
        log_progress("train", p);
    });
    let outcome = match result {
        Ok(o) => o,
        Err(e @ HvisError::Divergence(_)) => {
            let mut curve = Vec::new();
            write_loss_curve(&mut curve, &sln_seen)?;
            let report = format!("{e}\n\nloss curve before divergence:\n{}", String::from_utf8_lossy(&curve));
            let path = cfg.reports.join("divergence.txt");
            write_file(&path, &report)?;
            eprintln!("diagnostics written to {}", path.display());
            return Err(e);
        }
        Err(e) => return Err(e),
    };
    std::fs::create_dir_all(&cfg.reports)?;
    write_loss_curve(std::fs::File::create(cfg.reports.join("sln_loss.csv"))?, &outcome.sln_curve)?;
    let mut dln = String::from("epoch,loss,val_selected_error\n");
    for r in &outcome.dln_curve {
        dln.push_str(&format!("{},{},{}\n", r.epoch, r.loss, r.val_selected_error));
    }
    write_file(&cfg.reports.join("dln_loss.csv"), &dln)?;
    write_file(&cfg.reports.join("deliberate_map.tsv"), &outcome.model.map.to_text())?;
    outcome.model.to_bundle(&corpus.fingerprint)?.save(&cfg.checkpoint)?;
    let rows = evaluate(&outcome.model, &data.val, &cfg.horizons_ms)?;
    println!("validation MPJPE\n{}", eval_table(&rows));
    println!("hard joints: {:?}", outcome.model.map.selected);
    println!("checkpoint written to {}", cfg.checkpoint.display());
    Ok(())
}

fn load_model(path: &Path) -> Result<(HimModel, String)> {
    HimModel::from_bundle(&CheckpointBundle::load(path)?)
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let (model, _) = load_model(&args.checkpoint)?;
    let mut cfg = model.config.clone();
    if let Some(h) = &args.horizons_ms {
        cfg.horizons_ms = h.clone();
    }
    if let Some(r) = &args.reports {
        cfg.reports = r.clone();
    }
    cfg.validate()?;
    let windows = match &args.corpus {
        Some(dir) => {
            if let Some(sk) = &args.skeleton {
                let other = SkeletonSpec::load(sk)?;
                if other != model.skeleton {
                    return Err(HvisError::Contract(format!(
                        "corpus skeleton has {} joints, checkpoint skeleton has {}{}",
                        other.joint_count(),
                        model.joints(),
                        if other.joint_count() == model.joints() { " (names or structure differ)" } else { "" }
                    )));
                }
            }
            let seqs = load_csv_dir(dir, &model.skeleton, cfg.fps)?;
            let mut w = Vec::new();
            for s in &seqs {
                w.extend(make_windows(s, cfg.observed, cfg.future, cfg.stride, model.skeleton.root())?);
            }
            w
        }
        None => {
            let corpus = load_corpus(&cfg)?;
            if corpus.skeleton != model.skeleton {
                return Err(HvisError::Contract(format!(
                    "corpus skeleton has {} joints, checkpoint skeleton has {}",
                    corpus.skeleton.joint_count(),
                    model.joints()
                )));
            }
            prepare(&cfg, &corpus)?.test
        }
    };
    let rows = evaluate(&model, &windows, &cfg.horizons_ms)?;
    let table = eval_table(&rows);
    write_file(&cfg.reports.join("eval.csv"), &eval_csv(&rows)?)?;
    write_file(&cfg.reports.join("eval.txt"), &table)?;
    println!("{table}");
    Ok(())
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let (model, _) = load_model(&args.checkpoint)?;
    let text = std::fs::read_to_string(&args.input)?;
    let has_fps = text.lines().take_while(|l| l.trim_start().starts_with('#')).any(|l| l.contains("fps="));
    let input = parse_csv(&text, &model.skeleton, (!has_fps).then_some(model.config.fps))?.sequence;
    let input = if (input.fps() - model.config.fps).abs() > 1e-9 { downsample(&input, model.config.fps)? } else { input };
    let f = args.future.unwrap_or(model.config.future);
    if f == 0 || f > model.config.future {
        return Err(HvisError::Parameter(format!("--future {f} outside 1..={}", model.config.future)));
    }
    let pred = model.predict_sequence(input.positions())?;
    let n = model.joints();
    let mut vals = input.positions().values().to_vec();
    vals.extend_from_slice(&pred.values()[..f * n * 3]);
    let t = input.frames();
    let out = MotionSequence::new(crate::autodiff::Tensor::new(&[t + f, n, 3], vals)?, input.fps())?;
    if let Some(dir) = args.output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let file = std::io::BufWriter::new(std::fs::File::create(&args.output)?);
    write_csv(file, &out, &model.skeleton, Some(t))?;
    println!("{f} predicted frames appended to {} observed frames in {}", t, args.output.display());
    Ok(())
}

fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let variants = args
        .variants
        .iter()
        .filter(|v| !v.trim().is_empty())
        .map(|v| Ablation::parse(v))
        .collect::<Result<Vec<_>>>()?;
    let corpus = load_corpus(&cfg)?;
    let (report, _) = ablate(&cfg, &corpus, &variants, &mut |tag, p| log_progress(tag, p))?;
    let table = report.table();
    write_file(&cfg.reports.join("ablation.csv"), &report.csv()?)?;
    write_file(&cfg.reports.join("ablation.txt"), &table)?;
    println!("test MPJPE by variant (selected joints: {:?})\n{table}", report.selected);
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut cfg = args.config.resolve()?;
    cfg.corpus = None;
    let skeleton = crate::pipeline::load_skeleton(&cfg)?;
    let seqs = synth_corpus(&skeleton, &synth_config(&cfg, &skeleton))?;
    std::fs::create_dir_all(&args.out)?;
    for (i, s) in seqs.iter().enumerate() {
        let name = s.label.clone().unwrap_or_else(|| format!("seq-{i:04}"));
        save_csv(&args.out.join(format!("{name}.csv")), s, &skeleton)?;
    }
    skeleton.save(&args.out.join("skeleton.txt"))?;
    println!("{} sequences written to {}", seqs.len(), args.out.display());
    Ok(())
}

/// Parses `args` (program name first) and runs the chosen command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(HvisError::Config(e.to_string().trim_start_matches("error: ").trim_end().to_string())),
    };
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Synth(a) => cmd_synth(a),
    }
}
