use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use cdbfl::harness::{
    parse_sweep_param, report, run_experiment, sweep, ExperimentConfig, OutputFormat, ResultsBundle,
    SHIFTED_MEAN,
};
use cdbfl::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Decentralized Bayesian federated learning simulator.
#[derive(Parser)]
#[command(name = "cdbfl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run one experiment per value of a parameter.
    Sweep {
        config: PathBuf,
        /// `key=v1,v2,...`, e.g. `L=1,2,4,8,12`.
        #[arg(long)]
        param: String,
        #[command(flatten)]
        common: Common,
    },
    /// Summarize a results directory (or a directory of runs).
    Report { dir: PathBuf },
}

#[derive(Args)]
struct Common {
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: the config's, else `results`].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Extra `key=value` config overrides.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

fn load(path: &Path, common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut overrides = Vec::new();
    for kv in &common.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seed) = common.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    let mut cfg = ExperimentConfig::load(path, &overrides)
        .with_context(|| format!("loading {}", path.display()))?;
    if let Some(out) = &common.out {
        cfg.output.dir = Some(out.clone());
    }
    if cfg.output.dir.is_none() {
        cfg.output.dir = Some(PathBuf::from("results"));
    }
    if let Some(f) = common.format {
        cfg.output.format = match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        };
    }
    Ok(cfg)
}

fn describe(b: &ResultsBundle) -> String {
    let Some(s) = &b.summary else {
        return "diverged".into();
    };
    let mut line = String::new();
    if let Some(v) = s.set("validation") {
        line += &format!("acc {:.4} ece {:.4}", v.accuracy, v.ece);
    }
    if let Some(v) = s.set(SHIFTED_MEAN) {
        line += &format!(" | shifted acc {:.4} ece {:.4}", v.accuracy, v.ece);
    }
    if let Some(r) = s.comm.ratios {
        line += &format!(" | savings {:.2}%", r.savings_percent);
    }
    line
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run { config, common } => {
            let cfg = load(&config, &common)?;
            let dir = cfg.output.dir.clone().expect("set in load");
            let bundle = run_experiment(&cfg)?;
            println!("{} [{}] -> {}", cfg.algorithm.name(), describe(&bundle), dir.display());
        }
        Command::Sweep {
            config,
            param,
            common,
        } => {
            let cfg = load(&config, &common)?;
            let dir = cfg.output.dir.clone().expect("set in load");
            let (key, values) = parse_sweep_param(&param)?;
            let entries = sweep(&cfg, &key, &values, Some(&dir))?;
            for e in &entries {
                println!("{key}={} [{}]", e.value, describe(&e.bundle));
            }
            println!("-> {}", dir.display());
            if let Some(e) = entries.iter().find(|e| e.bundle.failure.is_some()) {
                let f = e.bundle.failure.as_ref().expect("checked");
                return Err(Error::Diverged {
                    round: f.round,
                    device: f.device,
                    detail: format!("{key}={}: {}", e.value, f.detail),
                }
                .into());
            }
        }
        Command::Report { dir } => print!("{}", report(&dir)?),
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => EXIT_CONFIG,
        Some(Error::Diverged { .. }) => EXIT_DIVERGED,
        _ => EXIT_FAILURE,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
