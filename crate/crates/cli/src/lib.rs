//! `lgseg` command-line front end.
//!
//! ```text
//! lgseg train     --config run.cfg [--out DIR] [--seed N] [--resume CKPT] [--until STEP]
//! lgseg eval      --config run.cfg [--checkpoint CKPT]
//! lgseg analyze   --config run.cfg
//! lgseg visualize --config run.cfg --what pos-sim|attention|features [--layer L] [--head H] [--point R,C]
//! ```
//!
//! Every command stages its outputs and moves them into the output directory
//! only when it succeeds.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod netpbm;
pub mod staging;
pub mod visualize;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use lgseg_analyzer::{audit, published_targets, render, Analyzed};
use lgseg_harness::{batch_images, evaluate, palette, MetricsLog, TrainState, Trainer};
use lgseg_models::{SegModel, SegModelConfig};
use lgseg_tensor::ParamStore;

pub use checkpoint::Checkpoint;
pub use config::{AnalyzeTarget, ConfigError, DataSource, ModelSpec, RunConfig};
pub use error::CliError;

use staging::Staging;
use visualize::{VisualizeArgs, What};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.log";

#[derive(Debug, Parser)]
#[command(
    name = "lgseg",
    version,
    about = "Train, evaluate, analyze and visualize SETR/HLG segmentation models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `[output] dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed (overrides `[recipe] seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Require deterministic execution (kernels are deterministic in every mode).
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Load checkpoints written for a different model section.
    #[arg(long, global = true)]
    pub allow_mismatch: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on the configured data; writes checkpoint.bin and metrics.log.
    Train {
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many completed steps.
        #[arg(long)]
        until: Option<usize>,
    },
    /// Score a checkpoint; prints metrics and writes eval.txt plus predicted masks.
    Eval {
        /// Defaults to `<out>/checkpoint.bin`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Parameter and multiply-accumulate report; writes cost.txt and cost.json.
    Analyze,
    /// Writes a PGM figure computed from a checkpoint.
    Visualize {
        #[arg(long)]
        what: String,
        #[arg(long, default_value_t = 0)]
        layer: usize,
        #[arg(long, default_value_t = 0)]
        head: usize,
        /// Query point `r,c` in token/grid coordinates.
        #[arg(long, default_value = "0,0")]
        point: String,
        /// Corpus sample to run through the model.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Defaults to `<out>/checkpoint.bin`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

/// Loads the config named by `--config` and applies command-line overrides.
pub fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("--config <path> is required".into()))?;
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.recipe.seed = seed;
    }
    cfg.deterministic |= common.deterministic;
    Ok(cfg)
}

/// Runs one command; returns the lines it reports on stdout.
pub fn run(cli: &Cli) -> Result<Vec<String>, CliError> {
    let cfg = load_config(&cli.common)?;
    match &cli.command {
        Command::Train { resume, until } => train(&cfg, resume.as_deref(), *until, cli.common.allow_mismatch),
        Command::Eval { checkpoint } => eval(&cfg, checkpoint.as_deref(), cli.common.allow_mismatch),
        Command::Analyze => analyze(&cfg),
        Command::Visualize {
            what,
            layer,
            head,
            point,
            index,
            checkpoint,
        } => {
            let what = What::parse(what).ok_or_else(|| {
                CliError::Usage(format!(
                    "unknown --what '{what}'; expected pos-sim, attention or features"
                ))
            })?;
            let point = parse_point(point)?;
            let args = VisualizeArgs {
                what,
                layer: *layer,
                head: *head,
                point,
            };
            visualize(&cfg, &args, *index, checkpoint.as_deref(), cli.common.allow_mismatch)
        }
    }
}

fn parse_point(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Usage(format!("--point expects 'r,c', got '{s}'"));
    let (r, c) = s.split_once(',').ok_or_else(bad)?;
    Ok((
        r.trim().parse().map_err(|_| bad())?,
        c.trim().parse().map_err(|_| bad())?,
    ))
}

fn build(cfg: &RunConfig) -> Result<(SegModel, ParamStore<f32>), CliError> {
    Ok(SegModel::build::<f32>(&cfg.model.seg, cfg.recipe.seed)?)
}

fn load_checkpoint(
    cfg: &RunConfig,
    path: Option<&Path>,
    allow_mismatch: bool,
) -> Result<(Checkpoint, SegModel, ParamStore<f32>), CliError> {
    let path = path.map_or_else(|| cfg.out_dir.join(CHECKPOINT_FILE), Path::to_path_buf);
    let ckpt = Checkpoint::load(&path)?;
    ckpt.check_fingerprint(&cfg.model.fingerprint(), allow_mismatch)?;
    let spec = ModelSpec::from_canonical(&ckpt.manifest)
        .map_err(|e| CliError::Checkpoint(format!("stored model section: {e}")))?;
    let (model, mut store) = SegModel::build::<f32>(&spec.seg, 0)?;
    ckpt.restore_params(&mut store)?;
    Ok((ckpt, model, store))
}

fn train(cfg: &RunConfig, resume: Option<&Path>, until: Option<usize>, allow: bool) -> Result<Vec<String>, CliError> {
    let corpus = data::load_corpus(&cfg.data, cfg.model.num_classes())?;
    let (model, mut store, mut state) = match resume {
        None => {
            let (model, store) = build(cfg)?;
            let state = TrainState::new(store.len());
            (model, store, state)
        }
        Some(path) => {
            let (ckpt, model, store) = load_checkpoint(cfg, Some(path), allow)?;
            let state = ckpt
                .restore_state(&store)?
                .ok_or_else(|| CliError::Checkpoint("checkpoint holds no training state".into()))?;
            (model, store, state)
        }
    };
    let staging = Staging::new(&cfg.out_dir)?;
    let log_path = staging.path(METRICS_FILE);
    let existing = staging.final_path(METRICS_FILE);
    if resume.is_some() && existing.exists() {
        fs::copy(&existing, &log_path)?;
    }
    let mut log = MetricsLog::append_to(&log_path)?;
    let trainer = Trainer::new(&model, &corpus, cfg.model.num_classes(), &cfg.recipe);
    let stop = until.unwrap_or(cfg.recipe.iters).min(cfg.recipe.iters);
    let fingerprint = cfg.model.fingerprint();
    let save = |store: &ParamStore<f32>, state: &TrainState<f32>| {
        Checkpoint::save_training(
            &staging.path(CHECKPOINT_FILE),
            &fingerprint,
            &cfg.model.canonical,
            store,
            Some(state),
        )
    };
    while state.step < stop {
        let next = match cfg.checkpoint_every {
            0 => stop,
            every => ((state.step / every + 1) * every).min(stop),
        };
        trainer.run(&mut store, &mut state, next, &mut log)?;
        save(&store, &state)?;
    }
    if !staging.path(CHECKPOINT_FILE).exists() {
        save(&store, &state)?;
    }
    drop(log);
    let mut lines: Vec<String> = fs::read_to_string(&log_path)?
        .lines()
        .last()
        .map(str::to_string)
        .into_iter()
        .collect();
    let moved = staging.commit()?;
    lines.push(format!("trained {} steps; wrote {}", state.step, join_paths(&moved)));
    Ok(lines)
}

fn join_paths(paths: &[PathBuf]) -> String {
    paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

fn eval(cfg: &RunConfig, checkpoint: Option<&Path>, allow: bool) -> Result<Vec<String>, CliError> {
    let (_, model, store) = load_checkpoint(cfg, checkpoint, allow)?;
    let k = model_classes(&model);
    let corpus = data::load_corpus(&cfg.data, k)?;
    let report = evaluate(&model, &store, &corpus, k, cfg.eval_mode, cfg.eval_batch)?;
    let mut summary = format!("pixel_acc={:?} miou={:?}", report.pixel_accuracy, report.mean_iou);
    for (c, iou) in report.per_class.iter().enumerate() {
        if let Some(v) = iou {
            summary.push_str(&format!(" iou_{c}={v:?}"));
        }
    }
    let staging = Staging::new(&cfg.out_dir)?;
    staging.write("eval.txt", format!("{summary}\n").as_bytes())?;
    let colours = palette(k);
    for (i, mask) in report.predictions.iter().enumerate() {
        staging.write(
            &format!("predictions/{i:04}.pgm"),
            &netpbm::pgm(mask.width, mask.height, &mask.labels),
        )?;
        let rgb: Vec<u8> = mask
            .labels
            .iter()
            .flat_map(|&l| colours[l as usize].map(|v| (v * 255.0).round() as u8))
            .collect();
        staging.write(
            &format!("predictions/{i:04}.ppm"),
            &netpbm::ppm(mask.width, mask.height, &rgb),
        )?;
    }
    staging.commit()?;
    Ok(vec![summary])
}

fn model_classes(model: &SegModel) -> usize {
    match model {
        SegModel::Setr(s) => s.cfg.decoder.num_classes,
        SegModel::Hlg(h) => h.backbone.cfg.seg.num_classes,
    }
}

fn analyze(cfg: &RunConfig) -> Result<Vec<String>, CliError> {
    let analyzed = match (&cfg.model.seg, cfg.analyze_target) {
        (SegModelConfig::Setr(c), _) => Analyzed::Setr(c.clone()),
        (SegModelConfig::Hlg(c), AnalyzeTarget::Classifier) => Analyzed::HlgClassifier(c.clone()),
        (SegModelConfig::Hlg(c), AnalyzeTarget::Segmenter) => Analyzed::HlgSegmenter(c.clone()),
    };
    let report = analyzed.report(cfg.analyze_input);
    let table = render::cost_table(&report);
    let staging = Staging::new(&cfg.out_dir)?;
    staging.write("cost.txt", table.as_bytes())?;
    staging.write("cost.json", render::to_json(&report).as_bytes())?;
    let mut lines: Vec<String> = table.lines().map(str::to_string).collect();
    let matching = published_targets().into_iter().find(|t| {
        t.name == cfg.model.name
            && t.input == cfg.analyze_input
            && t.model.report(t.input).total_params == report.total_params
            && t.model.report(t.input).total_macs == report.total_macs
    });
    if let Some(target) = matching {
        let audited = render::audit_table(&[audit(&target)]);
        staging.write("audit.txt", audited.as_bytes())?;
        lines.extend(audited.lines().map(str::to_string));
    }
    staging.commit()?;
    Ok(lines)
}

fn visualize(
    cfg: &RunConfig,
    args: &VisualizeArgs,
    index: usize,
    checkpoint: Option<&Path>,
    allow: bool,
) -> Result<Vec<String>, CliError> {
    let (_, model, store) = load_checkpoint(cfg, checkpoint, allow)?;
    let corpus = data::load_corpus(&cfg.data, model_classes(&model))?;
    let sample = corpus
        .get(index)
        .ok_or_else(|| CliError::Usage(format!("--index {index} out of range: {} samples", corpus.len())))?;
    let image = batch_images::<f32>(&[sample])?;
    let fig = visualize::figure(&model, &store, &image, args)?;
    let staging = Staging::new(&cfg.out_dir)?;
    let file = format!("{}.pgm", fig.name);
    staging.write(
        &file,
        &netpbm::pgm(fig.width, fig.height, &netpbm::min_max_bytes(&fig.values)),
    )?;
    staging.commit()?;
    Ok(vec![format!(
        "wrote {} ({}x{})",
        cfg.out_dir.join(file).display(),
        fig.width,
        fig.height
    )])
}
