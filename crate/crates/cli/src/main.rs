//! Command-line entry point: synthesize, preprocess, train, evaluate,
//! benchmark and export activations.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use intercnn::inference::LabelSpace;
use intercnn::models::ModelKind;
use intercnn::nn::BlockKind;

use config::{parse_block, parse_model, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "intercnn", version, about = "Multi-stream driver behavior recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for data synthesis, initialization and shuffling.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Args, Clone)]
struct ModelFlags {
    /// Network: plain | tscnn | intercnn.
    #[arg(long, value_parser = parse_model)]
    model: Option<ModelKind>,
    /// 2D block: vanilla | mobilenet | mobilenet_v2.
    #[arg(long, value_parser = parse_block)]
    block: Option<BlockKind>,
}

fn parse_labels(s: &str) -> Result<LabelSpace, String> {
    match s {
        "full9" => Ok(LabelSpace::Full9),
        "agg5" => Ok(LabelSpace::Agg5),
        _ => Err(format!("unknown label space `{s}` (full9|agg5)")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic two-view dataset (manifest plus containers).
    Synth {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Crop, decimate and compute flows for every clip of a dataset.
    Preprocess {
        #[command(flatten)]
        common: Common,
        /// Directory holding `manifest.json`.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Output directory for preprocessed clips.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Train a model with early stopping; writes the best checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        /// Preprocessed data directory.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Label space to train in: full9 | agg5.
        #[arg(long, value_parser = parse_labels)]
        labels: Option<LabelSpace>,
        /// Front-stream dropout probability (overrides the config).
        #[arg(long, value_name = "P")]
        dropout: Option<f64>,
        /// Start from this checkpoint instead of a fresh initialization.
        #[arg(long, value_name = "DIR")]
        init: Option<PathBuf>,
        /// Checkpoint directory; also receives `history.txt`.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a split; prints the JSON report.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Preprocessed data directory.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Checkpoint directory.
        #[arg(long, value_name = "DIR")]
        checkpoint: PathBuf,
        /// Split to evaluate: train | validation | test.
        #[arg(long, default_value = "test")]
        split: String,
        /// Label space to score in: full9 | agg5.
        #[arg(long, value_parser = parse_labels, default_value = "full9")]
        labels: LabelSpace,
        /// Block the front frames and flows.
        #[arg(long)]
        occlude: bool,
        /// With --occlude, block each window with this probability.
        #[arg(long, value_name = "P", default_value_t = 1.0)]
        occlude_p: f64,
        /// Temporal voting poll size (1 disables voting).
        #[arg(long, value_name = "N", default_value_t = intercnn::inference::DEFAULT_POLL)]
        vote_n: usize,
        /// Directory to write `eval.json` into.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Latency, parameter and FLOP report for each block kind.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Network to benchmark: plain | tscnn | intercnn.
        #[arg(long, value_parser = parse_model)]
        model: Option<ModelKind>,
        /// Comma-separated block kinds.
        #[arg(long, value_delimiter = ',', value_parser = parse_block,
              default_value = "vanilla,mobilenet,mobilenet_v2")]
        blocks: Vec<BlockKind>,
        /// Timed forward passes per block kind.
        #[arg(long, default_value_t = 20)]
        iters: usize,
        /// Directory to write `bench.json` into.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Export hidden activations of one window to a tensor container.
    ExportActs {
        #[command(flatten)]
        common: Common,
        /// Preprocessed data directory.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Checkpoint directory.
        #[arg(long, value_name = "DIR")]
        checkpoint: PathBuf,
        /// Split to draw the window from.
        #[arg(long, default_value = "test")]
        split: String,
        /// Window index within the split.
        #[arg(long, default_value_t = 0)]
        window: usize,
        /// Comma-separated layer tags; omit to list the available tags.
        #[arg(long, value_delimiter = ',')]
        tags: Vec<String>,
        /// Output container path.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
}

/// Configuration problems; reported with exit code 2.
#[derive(Debug)]
struct UsageError(anyhow::Error);

fn load(common: &Common, o: Overrides) -> Result<RunConfig, UsageError> {
    RunConfig::load(
        common.config.as_deref(),
        &Overrides {
            seed: common.seed,
            ..o
        },
    )
    .map_err(UsageError)
}

fn run(cli: Cli) -> Result<Result<(), anyhow::Error>, UsageError> {
    Ok(match cli.command {
        Command::Synth { common, out } => {
            let cfg = load(&common, Overrides::default())?;
            commands::synth(&cfg, &out)
        }
        Command::Preprocess { common, data, out } => {
            let cfg = load(&common, Overrides::default())?;
            commands::preprocess(&cfg, &data, &out)
        }
        Command::Train {
            common,
            model,
            data,
            labels,
            dropout,
            init,
            out,
        } => {
            let mut cfg = load(
                &common,
                Overrides {
                    model: model.model,
                    block: model.block,
                    classes: labels.map(LabelSpace::classes),
                    ..Overrides::default()
                },
            )?;
            if let Some(p) = dropout {
                cfg.train.stream_dropout_p = p;
                cfg.validate().map_err(UsageError)?;
            }
            commands::train(&cfg, &data, init.as_deref(), &out)
        }
        Command::Eval {
            common,
            data,
            checkpoint,
            split,
            labels,
            occlude,
            occlude_p,
            vote_n,
            out,
        } => {
            let cfg = load(&common, Overrides::default())?;
            let split = commands::parse_split(&split).map_err(UsageError)?;
            if vote_n == 0 || !(0.0..=1.0).contains(&occlude_p) {
                return Err(UsageError(anyhow::anyhow!("--vote-n must be >= 1 and --occlude-p in [0, 1]")));
            }
            let opts = intercnn::inference::EvalOptions {
                labels,
                occlusion: if occlude {
                    intercnn::inference::Occlusion::BlockFront
                } else {
                    intercnn::inference::Occlusion::None
                },
                occlusion_p: occlude_p,
                vote_n,
                seed: cfg.seed,
            };
            commands::eval(&cfg, &data, &checkpoint, split, &opts, out.as_deref())
        }
        Command::Bench {
            common,
            model,
            blocks,
            iters,
            out,
        } => {
            let cfg = load(
                &common,
                Overrides {
                    model,
                    ..Overrides::default()
                },
            )?;
            if iters == 0 {
                return Err(UsageError(anyhow::anyhow!("--iters must be >= 1")));
            }
            commands::bench(&cfg, &blocks, iters, out.as_deref())
        }
        Command::ExportActs {
            common,
            data,
            checkpoint,
            split,
            window,
            tags,
            out,
        } => {
            let cfg = load(&common, Overrides::default())?;
            let split = commands::parse_split(&split).map_err(UsageError)?;
            commands::export_acts(&cfg, &data, &checkpoint, split, window, &tags, out.as_deref())
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(UsageError(e)) => {
            eprintln!("usage error: {e:#}");
            ExitCode::from(2)
        }
    }
}
