use std::path::PathBuf;
use std::process::ExitCode;

use atdl::config::LoadedConfig;
use atdl::experiment::{self, Context, ConvertKind, Outcome, Overrides};
use atdl::{AppError, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// All-layer transfer of deep networks: pretrain a source network, transfer
/// it to a small target task, compare against baselines and screen sources.
#[derive(Debug, Parser)]
#[command(name = "atdl", version)]
struct Cli {
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output on stderr; repeat for debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only errors on stderr.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides ATDL_OUT_DIR and the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TransferFlags {
    /// Covariance ridge; overrides the config.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Weight distances by the covariance itself instead of its inverse.
    #[arg(long)]
    literal_sigma: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pretrain and fine-tune the source network.
    Pretrain {
        #[command(flatten)]
        common: Common,
    },
    /// Transfer a source model to the target over the fine-tuning grid.
    Transfer {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: TransferFlags,
        /// Source model (default: source.atdlnn in the output directory).
        #[arg(long)]
        source_model: Option<PathBuf>,
    },
    /// Run the comparison methods on the same folds and grid.
    Baselines {
        #[command(flatten)]
        common: Common,
        /// Source model for methods that reuse one.
        #[arg(long)]
        source_model: Option<PathBuf>,
    },
    /// Rank candidate source models by relation-vector separation.
    Screen {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: TransferFlags,
        /// Directory of .atdlnn source models.
        #[arg(long)]
        candidates: PathBuf,
        /// Also fine-tune each candidate and correlate accuracy with separation.
        #[arg(long)]
        with_performance: bool,
    },
    /// Convert a dataset to the container format.
    Convert {
        kind: Kind,
        /// Input files: images and labels for idx, batches for cifar10, one table for csv.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, short)]
        output: PathBuf,
        /// Label column for csv input.
        #[arg(long, default_value = "label")]
        label_column: String,
        /// Divisor bringing csv features into [0, 1].
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
    /// Evaluate a saved model on the configured target dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: TransferFlags,
        #[arg(long)]
        model: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Idx,
    Cifar10,
    Csv,
}

fn context(common: &Common, flags: Option<&TransferFlags>) -> Result<Context> {
    let loaded = LoadedConfig::load(&common.config)?;
    let o = Overrides {
        seed: common.seed,
        out_dir: common.out.clone(),
        epsilon: flags.and_then(|f| f.epsilon),
        literal_sigma: flags.is_some_and(|f| f.literal_sigma),
    };
    Context::new(loaded, &o)
}

fn run(cli: Cli) -> Result<Outcome> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| AppError::Config(format!("--threads {n}: {e}")))?;
    }
    match cli.command {
        Command::Pretrain { common } => experiment::cmd_pretrain(&context(&common, None)?),
        Command::Transfer {
            common,
            flags,
            source_model,
        } => {
            let ctx = context(&common, Some(&flags))?;
            let src = source_model.unwrap_or_else(|| experiment::default_source_model(&ctx));
            experiment::cmd_transfer(&ctx, &src)
        }
        Command::Baselines { common, source_model } => experiment::cmd_baselines(&context(&common, None)?, source_model.as_deref()),
        Command::Screen {
            common,
            flags,
            candidates,
            with_performance,
        } => experiment::cmd_screen(&context(&common, Some(&flags))?, &candidates, with_performance),
        Command::Convert {
            kind,
            inputs,
            output,
            label_column,
            scale,
        } => {
            let kind = match kind {
                Kind::Idx => ConvertKind::Idx,
                Kind::Cifar10 => ConvertKind::Cifar10,
                Kind::Csv => ConvertKind::Csv,
            };
            experiment::cmd_convert(kind, &inputs, &output, &label_column, scale)
        }
        Command::Eval { common, flags, model } => experiment::cmd_eval(&context(&common, Some(&flags))?, &model),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli) {
        Ok(out) => {
            print!("{}", out.render());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
