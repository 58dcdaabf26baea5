//! Command-line front end: `synth`, `augment`, `train`, `eval`, `analyze`.
//!
//! Every command accepts `--config FILE` with a JSON document of its resolved
//! settings; explicit flags override the file. Commands that write to an
//! output directory also store the resolved settings there, so the run can be
//! repeated with `--config DIR/<command>_config.json`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data_pipeline::{
    generate_synthetic, load_dataset, write_image, Dataset, DomainTransform, Sample, Split, SynthConfig,
};
use crate::discrepancy::{hypothesis_check, HandcraftedEmbedder, HypothesisReport};
use crate::error::{Error, Result};
use crate::fmaug::{build_training_samples_with_params, FmaugConfig};
use crate::frequency_views::{extract_view_bank, sample_view_params, GaussianParams};
use crate::image::Image;
use crate::metrics::EvalReport;
use crate::network::{CoupledNetwork, ModelConfig};
use crate::trainer::{evaluate, NetworkSegmenter, TrainConfig, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

#[derive(Debug, Parser)]
#[command(name = "freesdg", version, about = "Frequency-view domain generalization for binary segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic curvilinear-structure dataset.
    Synth(SynthArgs),
    /// Dump frequency views and mixed images as PNGs.
    Augment(AugmentArgs),
    /// Train the coupled network.
    Train(TrainArgs),
    /// Score a checkpoint on one manifest split.
    Eval(EvalArgs),
    /// Measure domain discrepancy under raw, uniform and per-image high-pass.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub domains: Option<usize>,
    /// Images per domain.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    /// Render every domain from the same geometries.
    #[arg(long)]
    pub shared_geometry: bool,
    /// Domains differ by a brightness offset only.
    #[arg(long)]
    pub brightness_only: bool,
    #[arg(long)]
    pub val_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRun {
    pub out: PathBuf,
    pub synth: SynthConfig,
}

#[derive(Debug, clap::Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of perturbed views N.
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub split: Option<Split>,
    /// Process at most this many images.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentRun {
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub image_size: usize,
    pub channels: usize,
    pub split: Option<Split>,
    pub limit: Option<usize>,
    pub anchor: GaussianParams,
    pub fmaug: FmaugConfig,
    pub seed: u64,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub base_channels: Option<usize>,
    /// Train on the anchor view only.
    #[arg(long)]
    pub no_fmaug: bool,
    /// Drop the reconstruction objective.
    #[arg(long)]
    pub no_ssl: bool,
    /// Remove the attention injection between decoders.
    #[arg(long)]
    pub no_att: bool,
    /// Continue from a checkpoint saved with optimizer state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Worker threads (results do not depend on this).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub resume: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Defaults to `test`.
    #[arg(long)]
    pub split: Option<Split>,
    /// Directory for `eval_report.json` and the resolved config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    pub split: Split,
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub size: Option<usize>,
    /// Directory for the report, the resolved config and `projection.tsv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeRun {
    pub manifest: PathBuf,
    pub image_size: usize,
    pub channels: usize,
    pub anchor: GaussianParams,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command, writing
/// human-readable output to `out`. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

pub fn dispatch(cmd: Command, out: &mut dyn Write) -> CliResult<()> {
    match cmd {
        Command::Synth(a) => cmd_synth(&resolve_synth(a)?, out),
        Command::Augment(a) => cmd_augment(&resolve_augment(a)?, out),
        Command::Train(a) => {
            if let Some(n) = a.threads {
                set_threads(n)?;
            }
            cmd_train(&resolve_train(a)?, out)
        }
        Command::Eval(a) => cmd_eval(&resolve_eval(a)?, out).map(|_| ()),
        Command::Analyze(a) => cmd_analyze(&resolve_analyze(a)?, out).map(|_| ()),
    }
}

fn set_threads(n: usize) -> CliResult<()> {
    if n == 0 {
        return usage("--threads must be >= 1");
    }
    // A second call in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn read_config<T: DeserializeOwned>(path: Option<&Path>) -> CliResult<Option<T>> {
    let Some(path) = path else {
        return Ok(None);
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map(Some)
        .or_else(|e| usage(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn required<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.map_or_else(|| usage(format!("{flag} is required")), Ok)
}

fn emit(out: &mut dyn Write, line: impl std::fmt::Display) -> CliResult<()> {
    writeln!(out, "{line}").map_err(|e| CliError::Runtime(Error::io("<stdout>", e)))
}

fn checked_anchor(p: &GaussianParams) -> CliResult<GaussianParams> {
    GaussianParams::new(p.radius(), p.sigma()).or_else(|e| usage(e.to_string()))
}

pub fn resolve_synth(a: SynthArgs) -> CliResult<SynthRun> {
    let base: Option<SynthRun> = read_config(a.config.as_deref())?;
    let mut synth = base.as_ref().map_or_else(SynthConfig::default, |b| b.synth.clone());
    if let Some(n) = a.domains {
        if n == 0 {
            return usage("--domains must be >= 1");
        }
        synth = synth.with_domains(n);
    }
    if a.brightness_only {
        synth.domains = (0..synth.domains.len())
            .map(|d| DomainTransform {
                brightness: 0.15 * d as f64,
                ..DomainTransform::IDENTITY
            })
            .collect();
    }
    if let Some(c) = a.count {
        synth.count = c;
    }
    if let Some(s) = a.seed {
        synth.seed = s;
    }
    if let Some(s) = a.size {
        synth.image_size = s;
    }
    if let Some(c) = a.channels {
        synth.channels = c;
    }
    if a.shared_geometry {
        synth.shared_geometry = true;
    }
    if let Some(v) = a.val_fraction {
        synth.val_fraction = v;
    }
    if synth.count == 0 {
        return usage("--count must be >= 1");
    }
    synth.validate().or_else(|e| usage(e.to_string()))?;
    let out = required(a.out.or(base.map(|b| b.out)), "--out")?;
    Ok(SynthRun { out, synth })
}

pub fn cmd_synth(run: &SynthRun, out: &mut dyn Write) -> CliResult<()> {
    create_dir(&run.out)?;
    let manifest = generate_synthetic(&run.synth, &run.out)?;
    write_json(run, &run.out.join("synth_config.json"))?;
    emit(out, manifest.display())
}

pub fn resolve_augment(a: AugmentArgs) -> CliResult<AugmentRun> {
    let base: Option<AugmentRun> = read_config(a.config.as_deref())?;
    let mut run = match base {
        Some(b) => b,
        None => AugmentRun {
            manifest: required(a.manifest.clone(), "--manifest")?,
            out: required(a.out.clone(), "--out")?,
            image_size: 64,
            channels: 3,
            split: None,
            limit: None,
            anchor: GaussianParams::ANCHOR,
            fmaug: FmaugConfig::default(),
            seed: 0,
        },
    };
    if let Some(m) = a.manifest {
        run.manifest = m;
    }
    if let Some(o) = a.out {
        run.out = o;
    }
    if let Some(v) = a.views {
        run.fmaug.views = v;
    }
    if let Some(s) = a.seed {
        run.seed = s;
    }
    if let Some(s) = a.size {
        run.image_size = s;
    }
    if a.split.is_some() {
        run.split = a.split;
    }
    if a.limit.is_some() {
        run.limit = a.limit;
    }
    if run.fmaug.views < 2 {
        return usage("--views must be >= 2");
    }
    run.fmaug.mask.validate().or_else(|e| usage(e.to_string()))?;
    run.anchor = checked_anchor(&run.anchor)?;
    Ok(run)
}

/// Signed values are mapped into `[0, 1]` through `v -> (v + a) / 2a` with
/// `a` the largest magnitude among one image's outputs.
pub fn cmd_augment(run: &AugmentRun, out: &mut dyn Write) -> CliResult<()> {
    let ds = load_dataset(&run.manifest, Some(run.image_size), run.channels)?;
    let samples: Vec<&Sample> = ds
        .samples
        .iter()
        .filter(|s| run.split.is_none_or(|sp| s.split == sp))
        .take(run.limit.unwrap_or(usize::MAX))
        .collect();
    if samples.is_empty() {
        return usage("no images selected");
    }
    create_dir(&run.out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let mapping_path = run.out.join("mapping.tsv");
    let mut mapping = BufWriter::new(File::create(&mapping_path).map_err(|e| Error::io(&mapping_path, e))?);
    let io = |e| CliError::Runtime(Error::io(&mapping_path, e));
    writeln!(mapping, "# file\tvalue_at_0\tvalue_at_255").map_err(io)?;
    let mut written = 0;
    for s in samples {
        let perturbed = sample_view_params(&mut rng, run.fmaug.views)?;
        let bank = extract_view_bank(&s.image, &run.anchor, &perturbed)?;
        let mixed = build_training_samples_with_params(&s.image, &s.mask, &run.anchor, &perturbed, &run.fmaug, &mut rng)?;
        let mut files: Vec<(String, &Image)> = bank
            .iter()
            .map(|v| {
                let name = if v.view_index == 0 {
                    "x0.png".to_string()
                } else {
                    format!("view_{}.png", v.view_index)
                };
                (name, &v.pixels)
            })
            .collect();
        files.extend(
            mixed
                .iter()
                .map(|m| (format!("mix_{:02}_v{}_v{}.png", m.pair.k, m.pair.i, m.pair.j), &m.mixed)),
        );
        let amp = files
            .iter()
            .flat_map(|(_, img)| img.data().iter().map(|v| v.abs()))
            .fold(1e-12, f64::max);
        let dir = run.out.join(&s.id);
        create_dir(&dir)?;
        for (name, img) in &files {
            let path = dir.join(name);
            write_image(&img.map(|v| (v + amp) / (2.0 * amp)), &path)?;
            writeln!(mapping, "{}/{}\t{:.9}\t{:.9}", s.id, name, -amp, amp).map_err(io)?;
            written += 1;
        }
    }
    mapping.flush().map_err(io)?;
    write_json(run, &run.out.join("augment_config.json"))?;
    emit(out, format!("wrote {written} images to {}", run.out.display()))
}

pub fn resolve_train(a: TrainArgs) -> CliResult<TrainRun> {
    let base: Option<TrainRun> = read_config(a.config.as_deref())?;
    let preset = |p: Preset| match p {
        Preset::Desk => (ModelConfig::desk(), TrainConfig::desk()),
        Preset::Paper => (ModelConfig::paper(), TrainConfig::paper()),
    };
    let mut run = match (base, a.preset) {
        (Some(b), None) => b,
        (Some(b), Some(p)) => {
            let (model, train) = preset(p);
            TrainRun { model, train, ..b }
        }
        (None, p) => {
            let (model, train) = preset(p.unwrap_or(Preset::Desk));
            TrainRun {
                manifest: required(a.manifest.clone(), "--manifest")?,
                out: required(a.out.clone(), "--out")?,
                model,
                train,
                resume: None,
            }
        }
    };
    if let Some(m) = a.manifest {
        run.manifest = m;
    }
    if let Some(o) = a.out {
        run.out = o;
    }
    if let Some(e) = a.epochs {
        run.train = run.train.with_epochs(e);
    }
    if let Some(b) = a.batch_size {
        run.train.batch_size = b;
    }
    if let Some(lr) = a.lr {
        run.train.base_lr = lr;
    }
    if let Some(v) = a.views {
        run.train.fmaug.views = v;
    }
    if let Some(s) = a.seed {
        run.train.seed = s;
    }
    if let Some(s) = a.size {
        run.model.image_size = s;
    }
    if let Some(d) = a.depth {
        run.model.depth = d;
    }
    if let Some(c) = a.base_channels {
        run.model.base_channels = c;
    }
    if a.no_fmaug {
        run.train.ablation.use_fmaug = false;
    }
    if a.no_ssl {
        run.train.ablation.use_ssl = false;
    }
    if a.no_att {
        run.train.ablation.use_att = false;
    }
    if a.resume.is_some() {
        run.resume = a.resume;
    }
    run.model.attention = run.train.ablation.use_att;
    run.model.validate().or_else(|e| usage(e.to_string()))?;
    run.train.validate().or_else(|e| usage(e.to_string()))?;
    run.train.anchor = checked_anchor(&run.train.anchor)?;
    Ok(run)
}

/// Writes `best.ckpt`, `last.ckpt` (with optimizer state), `train_log.jsonl`
/// and `train_config.json` into the output directory.
pub fn cmd_train(run: &TrainRun, out: &mut dyn Write) -> CliResult<()> {
    let ds = load_dataset(&run.manifest, Some(run.model.image_size), run.model.in_channels)?;
    let train = ds.split(Split::Train);
    if train.is_empty() {
        return usage("manifest has no train records");
    }
    let val = ds.split(Split::Val);
    create_dir(&run.out)?;
    let log_path = run.out.join("train_log.jsonl");
    let best_path = run.out.join("best.ckpt");
    let (mut trainer, log_file) = match &run.resume {
        Some(path) => {
            let last = Checkpoint::load(path)?;
            if last.network.config() != &run.model {
                return usage("checkpoint model settings differ from the resolved config");
            }
            if last.optimizer.is_none() {
                return usage("checkpoint has no optimizer state; resume from last.ckpt");
            }
            let best = best_path.exists().then(|| Checkpoint::load(&best_path)).transpose()?;
            let log = fs::OpenOptions::new().append(true).create(true).open(&log_path);
            (Trainer::resume(last, best, run.train.clone())?, log)
        }
        None => {
            let net = CoupledNetwork::new(run.model.clone(), run.train.seed)?;
            (Trainer::new(net, run.train.clone())?, File::create(&log_path))
        }
    };
    let mut log = BufWriter::new(log_file.map_err(|e| Error::io(&log_path, e))?);
    write_json(run, &run.out.join("train_config.json"))?;
    let start = trainer.epoch;
    let result = trainer.run(&train, &val, Some(&mut log))?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    result.best.save(&best_path)?;
    result.last.save(run.out.join("last.ckpt"))?;
    emit(
        out,
        format!(
            "trained epochs {start}..{} ({}); best val DICE {:.4} after epoch {}",
            trainer.epoch,
            run.train.ablation.label(),
            result.best.val_dice.unwrap_or(f64::NAN),
            result.best.epoch
        ),
    )?;
    emit(out, best_path.display())
}

pub fn resolve_eval(a: EvalArgs) -> CliResult<EvalRun> {
    let base: Option<EvalRun> = read_config(a.config.as_deref())?;
    let checkpoint = required(a.checkpoint.or(base.as_ref().map(|b| b.checkpoint.clone())), "--checkpoint")?;
    let manifest = required(a.manifest.or(base.as_ref().map(|b| b.manifest.clone())), "--manifest")?;
    Ok(EvalRun {
        checkpoint,
        manifest,
        split: a.split.or(base.as_ref().map(|b| b.split)).unwrap_or(Split::Test),
        out: a.out.or(base.and_then(|b| b.out)),
    })
}

pub fn cmd_eval(run: &EvalRun, out: &mut dyn Write) -> CliResult<EvalReport> {
    if !run.checkpoint.exists() {
        return Err(CliError::Runtime(Error::Checkpoint(format!(
            "missing checkpoint {}",
            run.checkpoint.display()
        ))));
    }
    let ckpt = Checkpoint::load(&run.checkpoint)?;
    let cfg = ckpt.network.config();
    let ds = load_dataset(&run.manifest, Some(cfg.image_size), cfg.in_channels)?;
    let samples = ds.split(run.split);
    if samples.is_empty() {
        return usage(format!("split {} is empty", run.split));
    }
    let report = evaluate(&NetworkSegmenter::new(&ckpt.network, ckpt.anchor), &samples)?;
    for r in &report.records {
        emit(out, format!("{}\tdice={:.6}\tmcc={:.6}", r.id, r.dice, r.mcc))?;
    }
    emit(
        out,
        format!(
            "mean\tdice={:.6}\tmcc={:.6}\tn={}",
            report.mean_dice,
            report.mean_mcc,
            report.records.len()
        ),
    )?;
    if let Some(dir) = &run.out {
        create_dir(dir)?;
        write_json(&report, &dir.join("eval_report.json"))?;
        write_json(run, &dir.join("eval_config.json"))?;
    }
    Ok(report)
}

pub fn resolve_analyze(a: AnalyzeArgs) -> CliResult<AnalyzeRun> {
    let base: Option<AnalyzeRun> = read_config(a.config.as_deref())?;
    let mut run = match base {
        Some(b) => b,
        None => AnalyzeRun {
            manifest: required(a.manifest.clone(), "--manifest")?,
            image_size: 64,
            channels: 3,
            anchor: GaussianParams::ANCHOR,
            seed: 0,
            out: None,
        },
    };
    if let Some(m) = a.manifest {
        run.manifest = m;
    }
    if let Some(s) = a.seed {
        run.seed = s;
    }
    if let Some(s) = a.size {
        run.image_size = s;
    }
    if a.out.is_some() {
        run.out = a.out;
    }
    run.anchor = checked_anchor(&run.anchor)?;
    Ok(run)
}

pub fn cmd_analyze(run: &AnalyzeRun, out: &mut dyn Write) -> CliResult<HypothesisReport> {
    let ds: Dataset = load_dataset(&run.manifest, Some(run.image_size), run.channels)?;
    if ds.domains().len() < 2 {
        return usage("analyze needs a manifest with at least 2 domains");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let report = hypothesis_check(&ds, &run.anchor, &HandcraftedEmbedder::default(), &mut rng)?;
    for cond in [&report.raw, &report.uniform, &report.discriminative] {
        for (domain, v) in &cond.inner {
            let v = v.map_or("absent".to_string(), |x| format!("{x:.6}"));
            emit(out, format!("{}\tinner\t{domain}\t{v}", cond.condition))?;
        }
        for d in &cond.inter {
            emit(out, format!("{}\tinter\t{}-{}\t{:.6}", cond.condition, d.a, d.b, d.distance))?;
        }
    }
    let verdict = |name: &str, v: &crate::discrepancy::Verdict, dir: &str| {
        format!(
            "{name}\t{}\t{:.6} -> {:.6}\tratio={:.4}",
            if v.holds { dir } else { "not observed" },
            v.before,
            v.after,
            v.ratio
        )
    };
    emit(out, verdict("H1_inter", &report.h1_inter, "decrease"))?;
    emit(out, verdict("H1_inner", &report.h1_inner, "decrease"))?;
    emit(out, verdict("H2_inner", &report.h2_inner, "increase"))?;
    emit(out, format!("real_data\t{}", report.real_data))?;
    if let Some(dir) = &run.out {
        create_dir(dir)?;
        write_json(&report, &dir.join("analyze_report.json"))?;
        write_json(run, &dir.join("analyze_config.json"))?;
        let path = dir.join("projection.tsv");
        let mut text = String::from("condition\tid\tdomain\tx\ty\n");
        for p in &report.projection {
            text.push_str(&format!("{}\t{}\t{}\t{:.9}\t{:.9}\n", p.condition, p.id, p.domain, p.x, p.y));
        }
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(report)
}
