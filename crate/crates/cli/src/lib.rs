//! The `editlab` command line: `gen-data`, `train`, `edit` and `eval`.
//!
//! Every run is determined by its flags, an optional `--config` JSON file and
//! its input files. Flags take precedence over the config file.

mod config;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use editlab_core::{load_tensor, ppm, save_tensor, Rng, ValueDomain, VideoTensor};
use editlab_data::{gen_dataset, Dataset, Grammar};
use editlab_metrics::report;
use editlab_model::checkpoint::Checkpoint;
use editlab_model::codec::TextEncoder;
use editlab_model::denoiser::{DenoiserParams, TemporalInit};
use editlab_model::diffusion::train;
use editlab_model::guidance::{sample_edit, Guidance, SampleOptions};
use thiserror::Error;

pub use config::{EditConfig, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] editlab_core::CoreError),
    #[error(transparent)]
    Data(#[from] editlab_data::DataError),
    #[error(transparent)]
    Model(#[from] editlab_model::ModelError),
    #[error(transparent)]
    Metrics(#[from] editlab_metrics::MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Parser)]
#[command(name = "editlab", version, about = "Instruction-guided video editing lab")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset of (input, instruction, edited) triplets.
    GenData(GenDataArgs),
    /// Train a denoiser on a dataset.
    Train(TrainArgs),
    /// Edit a video with a trained checkpoint.
    Edit(EditArgs),
    /// Compute the metrics report for a video.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path; the JSON sidecar is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss log CSV (defaults to `<out>.loss.csv`).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub base_channels: Option<usize>,
    #[arg(long, value_parser = ["random", "identity"])]
    pub temporal_init: Option<String>,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Input video: a `.vten` file or a directory of PPM frames.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub instruction: String,
    /// Output `.vten` path.
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for PPM frames (defaults to `<out>.frames`).
    #[arg(long)]
    pub frames_dir: Option<PathBuf>,
    #[arg(long)]
    pub s_text: Option<f64>,
    #[arg(long)]
    pub s_video: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use only the fully conditioned prediction at every step.
    #[arg(long)]
    pub conditional: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Video to score: a `.vten` file or a directory of PPM frames.
    #[arg(long)]
    pub video: PathBuf,
    /// Reference frame set for the Fréchet distance.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Report path; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub block: Option<usize>,
    #[arg(long)]
    pub radius: Option<usize>,
}

/// Loads a pixel video from a `.vten` file or a directory of PPM frames.
pub fn load_video(path: &Path) -> Result<VideoTensor, CliError> {
    if !path.exists() {
        return Err(CliError::Input(format!("no such file or directory: {}", path.display())));
    }
    let video = if path.is_dir() { ppm::load_dir(path)? } else { load_tensor(path)? };
    if video.domain() != ValueDomain::PixelU8 {
        return Ok(video.with_domain(ValueDomain::PixelU8)?);
    }
    Ok(video)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn gen_data(args: GenDataArgs, mut cfg: RunConfig) -> Result<(), CliError> {
    if let Some(f) = args.frames {
        cfg.scene.frames = f;
    }
    if let Some(h) = args.height {
        cfg.scene.height = h;
    }
    if let Some(w) = args.width {
        cfg.scene.width = w;
    }
    let seed = args.seed.unwrap_or(cfg.train.seed);
    let ds = gen_dataset(args.count, &cfg.scene, seed)?;
    ds.save(&args.out)?;
    Ok(())
}

fn run_train(args: TrainArgs, mut cfg: RunConfig) -> Result<(), CliError> {
    let t = &mut cfg.train;
    t.steps = args.steps.unwrap_or(t.steps);
    t.batch_size = args.batch_size.unwrap_or(t.batch_size);
    t.lambda = args.lambda.unwrap_or(t.lambda);
    t.lr = args.lr.unwrap_or(t.lr);
    t.seed = args.seed.unwrap_or(t.seed);
    if let Some(c) = args.base_channels {
        cfg.arch.base_channels = c;
    }
    match args.temporal_init.as_deref() {
        Some("random") => cfg.arch.temporal_init = TemporalInit::Random,
        Some("identity") => cfg.arch.temporal_init = TemporalInit::Identity,
        _ => {}
    }
    cfg.train.validate()?;
    cfg.arch.validate()?;

    let data = Dataset::load(&args.data)?;
    let grammar = Grammar::default();
    let text = TextEncoder::random(grammar.vocabulary().len(), cfg.arch.text_dim, cfg.train.seed)?;
    let mut params = DenoiserParams::init(&cfg.arch, &mut Rng::derive(cfg.train.seed, 1))?;

    let log_path = args.log.unwrap_or_else(|| with_suffix(&args.out, ".loss.csv"));
    let mut log = BufWriter::new(File::create(&log_path)?);
    writeln!(log, "step,loss_sd,loss_fd,loss_total")?;
    let mut write_err = None;
    train(&mut params, &data.triplets, &text, cfg.codec, &cfg.train, |step, stats| {
        let l = stats.losses;
        if let Err(e) = writeln!(log, "{},{},{},{}", step + 1, l.loss_sd, l.loss_fd, l.loss_total) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    log.flush()?;
    Checkpoint { params, text, codec: cfg.codec, schedule: cfg.train.schedule_spec() }.save(&args.out)?;
    Ok(())
}

fn run_edit(args: EditArgs, mut cfg: RunConfig) -> Result<(), CliError> {
    let e = &mut cfg.edit;
    e.steps = args.steps.unwrap_or(e.steps);
    e.seed = args.seed.unwrap_or(e.seed);
    e.scales.text = args.s_text.unwrap_or(e.scales.text);
    e.scales.video = args.s_video.unwrap_or(e.scales.video);

    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let input = load_video(&args.input)?;
    let ids = Grammar::default().encode(&args.instruction)?;
    let instruction = ckpt.text.encode(&ids)?;
    let guidance = if args.conditional { Guidance::Conditional } else { Guidance::Scaled(e.scales) };
    let options = SampleOptions { steps: e.steps, guidance, codec: ckpt.codec };
    let schedule = ckpt.schedule.build()?;
    let out = sample_edit(&ckpt.params, &input, &instruction, &options, &schedule, &mut Rng::new(e.seed))?;
    save_tensor(&out, &args.out)?;
    ppm::save_frames(&out, args.frames_dir.unwrap_or_else(|| with_suffix(&args.out, ".frames")))?;
    Ok(())
}

fn run_eval(args: EvalArgs, mut cfg: RunConfig) -> Result<(), CliError> {
    cfg.metrics.block = args.block.unwrap_or(cfg.metrics.block);
    cfg.metrics.radius = args.radius.unwrap_or(cfg.metrics.radius);
    let video = load_video(&args.video)?;
    let reference = args.reference.as_deref().map(load_video).transpose()?;
    let json = report(&video, reference.as_ref(), &cfg.metrics)?.to_json()?;
    match args.out {
        Some(p) => std::fs::write(p, json + "\n")?,
        None => println!("{json}"),
    }
    Ok(())
}

/// Executes one parsed command.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::GenData(a) => gen_data(a, cfg),
        Command::Train(a) => run_train(a, cfg),
        Command::Edit(a) => run_edit(a, cfg),
        Command::Eval(a) => run_eval(a, cfg),
    }
}

/// Parses `args`, runs, and maps failures to a one-line diagnostic on stderr.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("editlab: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("editlab: {}", e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
