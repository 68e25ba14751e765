use std::path::PathBuf;
use std::process::ExitCode;

use casar::neuralcore::ActionHead;
use casar::{Error, ErrorKind};
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod settings;

/// Contact-aware skeletal action recognition.
#[derive(Debug, Parser)]
#[command(name = "casar", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Synth(SynthArgs),
    /// Label every frame with contact/distant joints from posed object meshes.
    DeriveContact(DeriveArgs),
    /// Train the per-frame contact network.
    TrainContact(TrainContactArgs),
    /// Train the clip-level action network on top of a frozen contact network.
    TrainAction(TrainActionArgs),
    /// Evaluate both networks and write metrics.json, confusion.csv and per_object.csv.
    Eval(EvalArgs),
    /// Classify clips and print one JSON object per clip to stdout.
    Predict(PredictArgs),
    /// Train and score the four contact-map ablation variants.
    Ablation(AblationArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Number of action classes (at least 2).
    #[arg(long, default_value_t = 6)]
    classes: usize,
    #[arg(long, default_value_t = 100)]
    clips_per_class: usize,
    /// Standard deviation of joint noise in meters.
    #[arg(long, default_value_t = 0.002)]
    noise: f64,
    #[arg(long, default_value_t = 20)]
    min_frames: usize,
    #[arg(long, default_value_t = 60)]
    max_frames: usize,
    /// Also write train.jsonl/test.jsonl with the last N clips of every class held out.
    #[arg(long, default_value_t = 0)]
    test_per_class: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    /// 2 cm contact, 20 cm distant.
    H2o,
    /// 2 cm contact, 10 cm distant.
    Fpha,
}

#[derive(Debug, Args)]
struct DeriveArgs {
    /// Clip file (JSONL).
    #[arg(long)]
    clips: PathBuf,
    /// Directory of `<mesh_id>.obj` files.
    #[arg(long)]
    meshes: PathBuf,
    /// Output contact-target file (JSONL).
    #[arg(long)]
    out: PathBuf,
    /// Dataset config JSON [default: config.json next to the clip file, if present].
    #[arg(long)]
    config: Option<PathBuf>,
    /// Threshold preset; --eta-c/--eta-d override it [default: thresholds from the dataset config, h2o].
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Contact threshold in meters [default: 0.02].
    #[arg(long)]
    eta_c: Option<f64>,
    /// Distant threshold in meters [default: 0.20, or 0.10 with --preset fpha].
    #[arg(long)]
    eta_d: Option<f64>,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset directory (clips.jsonl, contacts.jsonl, meshes/, config.json) or a
    /// clip file inside one. A directory with train.jsonl/test.jsonl uses the split.
    #[arg(long)]
    data: PathBuf,
    /// Training config JSON with optional `dataset`, `contact` and `action` sections.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainContactArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Output checkpoint; the sidecar goes to `<stem>.meta.json`.
    #[arg(long)]
    out: PathBuf,
    /// Hidden width [default: 256].
    #[arg(long)]
    hidden: Option<usize>,
    /// Epochs [default: 100].
    #[arg(long)]
    epochs: Option<usize>,
    /// Initial learning rate [default: 1e-4].
    #[arg(long)]
    lr: Option<f64>,
    /// Learning-rate multiplier per period [default: 0.7].
    #[arg(long)]
    lr_decay: Option<f64>,
    /// Epochs per learning-rate period [default: 20].
    #[arg(long)]
    lr_period: Option<usize>,
    /// Mini-batch size [default: 64].
    #[arg(long)]
    batch_size: Option<usize>,
    /// Focal loss alpha [default: 0.5].
    #[arg(long)]
    alpha: Option<f64>,
    /// Focal loss gamma [default: 4].
    #[arg(long)]
    gamma: Option<f64>,
    /// Initialization and shuffling seed [default: 0].
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainActionArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Trained contact checkpoint.
    #[arg(long)]
    contact_ckpt: PathBuf,
    /// Output checkpoint; the sidecar goes to `<stem>.meta.json`.
    #[arg(long)]
    out: PathBuf,
    /// Hidden width [default: 5000].
    #[arg(long)]
    hidden: Option<usize>,
    /// Epochs [default: 600].
    #[arg(long)]
    epochs: Option<usize>,
    /// Initial learning rate [default: 1e-5].
    #[arg(long)]
    lr: Option<f64>,
    /// Learning-rate multiplier per period [default: 0.7].
    #[arg(long)]
    lr_decay: Option<f64>,
    /// Epochs per learning-rate period [default: 200].
    #[arg(long)]
    lr_period: Option<usize>,
    /// Mini-batch size [default: 16].
    #[arg(long)]
    batch_size: Option<usize>,
    /// Output head and loss [default: sigmoid-ce].
    #[arg(long, value_enum)]
    head: Option<HeadArg>,
    /// Contact loss weight for joint training; only 0 is supported [default: 0].
    #[arg(long)]
    lambda: Option<f64>,
    /// Frames per clip after resampling [default: 32].
    #[arg(long)]
    frames_per_clip: Option<usize>,
    /// Feed thresholded contact-maps instead of probabilities [default: off].
    #[arg(long)]
    binarize: bool,
    /// Train on the skeleton encoding alone [default: off].
    #[arg(long)]
    no_contact: bool,
    /// Initialization and shuffling seed [default: 0].
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum HeadArg {
    SigmoidCe,
    SoftmaxCe,
}

impl From<HeadArg> for ActionHead {
    fn from(h: HeadArg) -> Self {
        match h {
            HeadArg::SigmoidCe => ActionHead::SigmoidCe,
            HeadArg::SoftmaxCe => ActionHead::SoftmaxCe,
        }
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Dataset directory or clip file; a directory with test.jsonl evaluates that split.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    contact_ckpt: PathBuf,
    #[arg(long)]
    action_ckpt: PathBuf,
    /// Report directory.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Clip file (JSONL, one or more clips).
    #[arg(long)]
    clip: PathBuf,
    #[arg(long)]
    contact_ckpt: PathBuf,
    #[arg(long)]
    action_ckpt: PathBuf,
}

#[derive(Debug, Args)]
struct AblationArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Held-out clip file [default: test.jsonl in the dataset directory].
    #[arg(long)]
    test: Option<PathBuf>,
    /// Report directory.
    #[arg(long)]
    report: PathBuf,
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Validation => 2,
        ErrorKind::Io => 3,
        ErrorKind::Numeric => 4,
    }
}

fn fail(kind: &str, code: u8, message: String) -> ExitCode {
    let line = serde_json::json!({ "error": kind, "code": code, "message": message });
    eprintln!("{line}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.kind().to_string();
            let detail = e.to_string();
            let first = detail.lines().next().unwrap_or_default().trim_start_matches("error: ");
            return fail("usage", 2, format!("{message}: {first}"));
        }
    };
    if let Err(e) = commands::init_threads() {
        return report(e);
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(e),
    }
}

fn report(e: Error) -> ExitCode {
    let kind = match e.kind() {
        ErrorKind::Validation => "validation",
        ErrorKind::Io => "io",
        ErrorKind::Numeric => "numeric",
    };
    fail(kind, exit_code(e.kind()), e.to_string())
}
