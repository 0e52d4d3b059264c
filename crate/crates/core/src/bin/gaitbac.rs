use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gaitbac::pipeline::{Command, ModelKind, Pipeline, PipelineConfig, PipelineError};

#[derive(Parser)]
#[command(name = "gaitbac", version, about = "Gait features and eBAC regression pipeline")]
struct Cli {
    /// Configuration file of `section.key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set mlp.n_hidden=8`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Seed for both the split and the network initialisation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Write a synthetic corpus into the data directory.
    Synth,
    /// Recordings to the feature table.
    Featurize {
        /// Also write the attitude filter trace of every recording.
        #[arg(long)]
        dump_attitude: bool,
    },
    /// EMA logs to the eBAC label table.
    Label,
    /// Pair feature rows with labels.
    Join,
    /// Seeded train/validation/test partition.
    Split,
    /// Fit one model on the training split.
    Train { model: ModelKind },
    /// Metrics of one model on every split.
    Evaluate { model: ModelKind },
    /// Comparison table of all three models.
    Report,
    /// Every stage in order.
    Pipeline {
        /// Generate the synthetic corpus first.
        #[arg(long)]
        synth: bool,
    },
    /// Print the effective configuration.
    Config,
}

fn overrides(cli: &Cli) -> Result<Vec<(String, String)>, PipelineError> {
    let mut out = Vec::new();
    for raw in &cli.set {
        let (k, v) = raw
            .split_once('=')
            .ok_or_else(|| PipelineError::config(format!("--set `{raw}`: expected KEY=VALUE")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    let path = |p: &PathBuf| p.display().to_string();
    if let Some(p) = &cli.data_dir {
        out.push(("paths.data_dir".into(), path(p)));
    }
    if let Some(p) = &cli.out_dir {
        out.push(("paths.out_dir".into(), path(p)));
    }
    if let Some(s) = cli.seed {
        out.push(("split.seed".into(), s.to_string()));
        out.push(("mlp.seed".into(), s.to_string()));
    }
    Ok(out)
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let cfg = PipelineConfig::load(cli.config.as_deref(), &overrides(cli)?)?;
    let command = match cli.command {
        Sub::Config => {
            print!("{}", cfg.to_text());
            return Ok(());
        }
        Sub::Synth => Command::Synth,
        Sub::Featurize { dump_attitude } => Command::Featurize { dump_attitude },
        Sub::Label => Command::Label,
        Sub::Join => Command::Join,
        Sub::Split => Command::Split,
        Sub::Train { model } => Command::Train(model),
        Sub::Evaluate { model } => Command::Evaluate(model),
        Sub::Report => Command::Report,
        Sub::Pipeline { synth } => Command::Pipeline { synth },
    };
    let pipeline = Pipeline::new(cfg);
    for path in pipeline.run(&command)? {
        println!("{}", path.display());
    }
    if matches!(command, Command::Report | Command::Pipeline { .. }) {
        print!("{}", pipeline.read_report()?.to_table());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
