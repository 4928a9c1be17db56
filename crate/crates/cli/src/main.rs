use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sfag_core::commands::{execute, reproduce, CliError, Command};
use sfag_core::io::{ConfigError, IngestError, RunConfig};
use sfag_core::trainer::Objective;

#[derive(Parser)]
#[command(name = "sfag", version, about = "Train, audit and backtest synthetic return series")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML run config with [simulate], [train], [generate] and [strategy] tables
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed for every stage
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a GARCH(1,1) return series as stand-in market data
    Simulate {
        #[arg(long)]
        n: Option<usize>,
    },
    /// Validate a `date,close` or `date,return` CSV and write its returns
    Ingest { input: PathBuf },
    /// Train a generator on a return CSV
    Train {
        input: PathBuf,
        #[arg(long, value_parser = parse_objective)]
        objective: Option<Objective>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Sample synthetic return paths from a generator checkpoint
    Generate {
        checkpoint: PathBuf,
        #[arg(long)]
        n_paths: Option<usize>,
        #[arg(long)]
        windows: Option<usize>,
    },
    /// Stylized-fact gaps of synthetic series against a real one
    Evaluate {
        #[arg(long)]
        real: PathBuf,
        #[arg(required = true)]
        synth: Vec<PathBuf>,
    },
    /// Momentum backtest on one or more return series
    Backtest {
        #[arg(required = true)]
        series: Vec<PathBuf>,
    },
    /// Merge reports and emit plot data
    Report {
        reports: Vec<PathBuf>,
        #[arg(long)]
        real: Option<PathBuf>,
        #[arg(long, num_args = 1..)]
        synth: Vec<PathBuf>,
    },
    /// Re-run the command embedded in a report and compare outputs byte for byte
    Reproduce { report: PathBuf },
}

fn parse_objective(s: &str) -> Result<Objective, String> {
    match s {
        "sfag" => Ok(Objective::Sfag),
        "wgan-gp" => Ok(Objective::WganGp),
        _ => Err(format!("unknown objective {s:?} (expected sfag or wgan-gp)")),
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load_or_default(path).map_err(|e| match e {
        ConfigError::Io { path, source } => CliError::Input(IngestError::Io { path, source }),
        e @ ConfigError::Parse { .. } => CliError::Config(e.to_string()),
    })?;
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    Ok(cfg)
}

fn build(cmd: Cmd, cfg: RunConfig) -> Command {
    let seed = cfg.seed_or_default();
    match cmd {
        Cmd::Simulate { n } => {
            let mut config = cfg.simulate;
            if let Some(n) = n {
                config.n = n;
            }
            Command::Simulate { seed, config }
        }
        Cmd::Ingest { input } => Command::Ingest { input },
        Cmd::Train {
            input,
            objective,
            iterations,
        } => {
            let mut config = cfg.train;
            if let Some(o) = objective {
                config.objective = o;
            }
            if let Some(i) = iterations {
                config.iterations = i;
            }
            Command::Train { input, config }
        }
        Cmd::Generate {
            checkpoint,
            n_paths,
            windows,
        } => {
            let mut config = cfg.generate;
            if let Some(n) = n_paths {
                config.n_paths = n;
            }
            if let Some(w) = windows {
                config.windows = w;
            }
            Command::Generate {
                checkpoint,
                seed,
                config,
            }
        }
        Cmd::Evaluate { real, synth } => Command::Evaluate { real, synth },
        Cmd::Backtest { series } => Command::Backtest {
            series,
            config: cfg.strategy,
        },
        Cmd::Report { reports, real, synth } => Command::Report { reports, real, synth },
        Cmd::Reproduce { .. } => unreachable!("handled before build"),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let out = cli.common.out;
    if let Cmd::Reproduce { report } = cli.cmd {
        let r = reproduce(&report, &out)?;
        println!("reproduced {} ({} files identical)", r.report.display(), r.compared.len());
        return Ok(());
    }
    let cfg = load_config(cli.common.config.as_deref(), cli.common.seed)?;
    let cmd = build(cli.cmd, cfg);
    let report = execute(&cmd, &out)?;
    println!("{}", out.join(cmd.report_file()).display());
    for f in &report.outputs {
        log::debug!("wrote {}", out.join(f).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
