use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wavestack::config::{parse_seeds, ExperimentConfig, Kind};
use wavestack::runner;

#[derive(Parser)]
#[command(name = "wavestack", version, about = "Stacked and flexible metasurface experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file.
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated seeds, overriding the config.
    #[arg(long)]
    seeds: Option<String>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    parallel: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Joint transmit/receive stack training towards a diagonal channel.
    MimoDiag(RunArgs),
    /// Peak-to-average power ratio versus stream count.
    Papr(RunArgs),
    /// Direction finding with a DFT-trained stack.
    Doa(RunArgs),
    /// Letter classification by received energy.
    Semantic(RunArgs),
    /// Single-element diversity gain versus morphing range.
    FimDiversity(RunArgs),
    /// Multi-antenna capacity with morphing arrays.
    FimCapacity(RunArgs),
    /// Parse a config and print the effective settings.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(args: &RunArgs, kind: Kind) -> wavestack::Result<ExperimentConfig> {
    let mut config = ExperimentConfig::from_path(&args.config)?;
    if config.kind() != kind {
        return Err(wavestack::Error::Config {
            key: "kind".into(),
            message: format!("config is for `{}` but subcommand is `{kind}`", config.kind()),
        });
    }
    if let Some(s) = &args.seeds {
        config.seeds = parse_seeds(s)?;
    }
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, kind) = match &cli.command {
        Command::ValidateConfig { config } => {
            return match ExperimentConfig::from_path(config) {
                Ok(c) => {
                    print!("{}", c.to_text());
                    println!("# config_hash = {}", c.hash());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            };
        }
        Command::MimoDiag(a) => (a, Kind::MimoDiag),
        Command::Papr(a) => (a, Kind::Papr),
        Command::Doa(a) => (a, Kind::Doa),
        Command::Semantic(a) => (a, Kind::Semantic),
        Command::FimDiversity(a) => (a, Kind::FimDiversity),
        Command::FimCapacity(a) => (a, Kind::FimCapacity),
    };
    let config = match load(args, kind) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match runner::run(&config, args.parallel) {
        Ok(record) => {
            for (k, s) in &record.aggregate {
                println!("{k}: mean {} std {}", s.mean, s.std);
            }
            println!("wrote {}", config.out_dir.join("report.json").display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
