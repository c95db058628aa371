mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use c2f_core::ErrorKind;

#[derive(Parser)]
#[command(name = "c2f", version, about = "Coarse-to-fine segmentation with synthetic data and self-training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a training container (and optionally a validation container).
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write a dense validation set here.
        #[arg(long)]
        val: Option<PathBuf>,
        /// Keep every real scene densely labeled (a pool for `sample`).
        #[arg(long)]
        dense: bool,
    },
    /// Turn dense real records into coarse ones.
    Coarsify {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Only these ids (one per line); other dense real records are dropped.
        #[arg(long)]
        ids: Option<PathBuf>,
    },
    /// Pseudo-label the unlabeled pixels of coarse records.
    Pseudolabel {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Choose the next real images to annotate.
    Sample {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(short, long)]
        k: usize,
        /// Id list to write: the already chosen ids followed by the new picks.
        #[arg(long)]
        out: PathBuf,
        /// Required for model-based sampling.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Previously chosen ids.
        #[arg(long)]
        chosen: Option<PathBuf>,
        /// Overrides sampler.mode from the config.
        #[arg(long, value_parser = ["model-based", "uniform"])]
        mode: Option<String>,
    },
    /// Pre-train and run the self-training rounds.
    Selftrain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dense dataset.
    Evaluate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fine-only versus coarse+synthetic across annotation budgets.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dense real pool plus synthetic records (`generate --dense`).
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        val: PathBuf,
        /// Budget points in hours, ascending.
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        /// Methods to run: fine-only, fine+coarse, ours.
        #[arg(long, value_delimiter = ',', default_values_t = ["fine-only".to_string(), "ours".to_string()])]
        methods: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check containers.
    Verify {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Treat the files as successive label versions: manual labels must
        /// not change and the coarse labeled fraction must not fall.
        #[arg(long)]
        sequence: bool,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.chain().find_map(|c| c.downcast_ref::<c2f_core::Error>()) {
        return match e.kind() {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numerical => 3,
        };
    }
    if err.chain().any(|c| c.is::<std::io::Error>()) {
        return 2;
    }
    if err.chain().any(|c| c.is::<commands::Violations>()) {
        return 2;
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Generate { config, out, val, dense } => {
            commands::generate(config.as_deref(), &out, val.as_deref(), dense)
        }
        Command::Coarsify { config, input, out, ids } => {
            commands::coarsify(config.as_deref(), &input, &out, ids.as_deref())
        }
        Command::Pseudolabel { config, model, input, out } => {
            commands::pseudolabel(config.as_deref(), &model, &input, &out)
        }
        Command::Sample { config, input, k, out, model, chosen, mode } => {
            commands::sample(config.as_deref(), &input, k, &out, model.as_deref(), chosen.as_deref(), mode.as_deref())
        }
        Command::Selftrain { config, data, val, out } => commands::selftrain(config.as_deref(), &data, &val, &out),
        Command::Evaluate { config, model, data, out } => {
            commands::evaluate(config.as_deref(), &model, &data, out.as_deref())
        }
        Command::Sweep { config, pool, val, grid, methods, out } => {
            commands::sweep(config.as_deref(), &pool, &val, &grid, &methods, &out)
        }
        Command::Verify { files, sequence } => commands::verify(&files, sequence),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
