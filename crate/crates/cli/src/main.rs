mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "soundprobe",
    version,
    about = "Probe text/audio embedding alignment with contrastive probes and Procrustes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check an embedding directory and report every format or invariant violation.
    Validate { dir: PathBuf },
    /// Generate a synthetic text/audio pair with a hidden linear map.
    ///
    /// Writes `<out>/text` and `<out>/audio` embedding directories and
    /// `<out>/map.json` holding the hidden map.
    Synth(SynthArgs),
    /// Make seeded train/test partitions of the probe classes.
    Split(SplitArgs),
    /// Train one probe on the training classes of a split.
    Train(TrainArgs),
    /// Evaluate a trained probe on the held-out classes of a split.
    ///
    /// With --per-class, writes a CSV with columns
    /// `class,n_clips,acc@K...` (one accuracy column per K).
    Eval(EvalArgs),
    /// Grid search with held-in selection, held-out evaluation and the
    /// permuted-text control.
    Grid(GridArgs),
    /// Procrustes probe fit on the training classes of a split.
    Procrustes(ProcrustesArgs),
    /// Run every (text, audio, split, variant) combination from a JSON config.
    ///
    /// Writes `results.json`, `summary.csv` and `per_class.csv` to the
    /// output directory.
    ///
    /// summary.csv columns: `text_model,audio_model,split,variant,acc@K...,control_acc@K...`
    ///
    /// per_class.csv columns: `text_model,audio_model,split,variant,run,class,n_clips,acc@K...`
    /// where `run` is `primary` or `control`.
    Matrix(MatrixArgs),
    /// Rank correlation of per-class accuracies between text models.
    ///
    /// Output CSV, one block per audio model: a header row
    /// `audio_model,text_model,<model>...` then one row per text model with
    /// the split-averaged Spearman correlations. When several result files
    /// are given, model names are prefixed with `b<i>:`.
    Compare(CompareArgs),
    /// Export 2-D coordinates of all classes after Procrustes alignment.
    ///
    /// CSV columns: `class,modality,x,y`, two rows per class (text, then audio).
    Viz(VizArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 144)]
    classes: usize,
    #[arg(long, default_value_t = 30)]
    clips: usize,
    #[arg(long, default_value_t = 64)]
    d1: usize,
    #[arg(long, default_value_t = 48)]
    d2: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, value_enum, default_value_t = MapArg::Orthogonal)]
    map: MapArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MapArg {
    Orthogonal,
    RandomLinear,
}

#[derive(Args)]
struct SplitArgs {
    /// Embedding directory whose class list is the retrieval registry.
    #[arg(long)]
    registry: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    n: usize,
    #[arg(long, default_value_t = 0.7)]
    train_frac: f64,
    /// Use the first N registry classes as probe classes (default: min(100, all)).
    #[arg(long, conflicts_with = "probe_file")]
    probe_classes: Option<usize>,
    /// File with one probe class name per line.
    #[arg(long)]
    probe_file: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PairArgs {
    #[arg(long)]
    text: PathBuf,
    #[arg(long)]
    audio: PathBuf,
    /// Split file written by `split`.
    #[arg(long)]
    split: PathBuf,
    /// Which split of the file to use.
    #[arg(long, default_value_t = 0)]
    index: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Linear,
    Nonlinear,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    pair: PairArgs,
    #[arg(long, value_enum, default_value_t = VariantArg::Linear)]
    variant: VariantArg,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.07)]
    tau: f64,
    #[arg(long, default_value_t = 64)]
    negatives: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    proj_dim: usize,
    #[arg(long, default_value_t = 0.1)]
    val_frac: f64,
    #[arg(long, default_value_t = 20)]
    patience: usize,
    /// Put the positive pair in the log-sum-exp.
    #[arg(long)]
    include_positive: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSON with the config, training curves and parameters.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    pair: PairArgs,
    /// Probe file written by `train`.
    #[arg(long)]
    probe: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 3])]
    k: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    per_class: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    pair: PairArgs,
    #[arg(long, value_enum, default_value_t = VariantArg::Linear)]
    variant: VariantArg,
    #[arg(long, value_delimiter = ',', default_values_t = [1e-3, 1e-4])]
    lrs: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.07, 0.2])]
    taus: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [64, 128])]
    negatives: Vec<usize>,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    proj_dim: usize,
    #[arg(long, default_value_t = 0.1)]
    val_frac: f64,
    #[arg(long, default_value_t = 20)]
    patience: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 3])]
    k: Vec<usize>,
    /// Skip the permuted-text control.
    #[arg(long)]
    no_control: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Cosine,
    Euclidean,
}

#[derive(Args)]
struct ProcrustesArgs {
    #[command(flatten)]
    pair: PairArgs,
    #[arg(long, value_enum, default_value_t = MetricArg::Cosine)]
    metric: MetricArg,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 3])]
    k: Vec<usize>,
    #[arg(long)]
    no_control: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MatrixArgs {
    #[arg(long)]
    config: PathBuf,
    /// Worker threads; results do not depend on this.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// `results.json` files or directories containing one.
    #[arg(required = true)]
    results: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = VariantArg::Linear)]
    variant: VariantArg,
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VizArgs {
    #[arg(long)]
    text: PathBuf,
    #[arg(long)]
    audio: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write fit metadata as JSON.
    #[arg(long)]
    metadata: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
