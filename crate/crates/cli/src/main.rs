use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use raysense_cli::config::ExperimentConfig;
use raysense_cli::{criteria, experiments, output};

#[derive(Parser)]
#[command(name = "raysense", version, about = "Numerical experiments on scattering rays, X-ray transforms and Gaussian beams")]
struct Cli {
    /// TOML experiment config; defaults apply to anything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Size of the worker pool (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scattering relation over an entering fan.
    Scatter,
    /// Linearized flow and its quadratic remainder along one ray.
    Linearize,
    /// Fan transform, principal symbol and normal operator.
    Xray,
    /// Gaussian beam propagation, reflection, residuals or interactions.
    Beam,
    /// Conjugate-point census and complete-set search.
    Caustics,
    /// Perturbation to transform to flow-change chain.
    SensitivityChain,
    /// Runs the acceptance criteria.
    Selftest {
        /// Criterion numbers (comma separated); default all.
        #[arg(long, value_delimiter = ',')]
        only: Vec<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Scatter => "scatter",
            Command::Linearize => "linearize",
            Command::Xray => "xray",
            Command::Beam => "beam",
            Command::Caustics => "caustics",
            Command::SensitivityChain => "sensitivity-chain",
            Command::Selftest { .. } => "selftest",
        }
    }
}

fn load(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Command::Selftest { only } = &cli.command {
        if !only.is_empty() {
            cfg.selftest.only = only.clone();
        }
    }
    cfg.validate_for(cli.command.name())?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let workers = cli
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
        .max(1);
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global() {
        eprintln!("error: worker pool: {e}");
        return ExitCode::from(2);
    }
    let outputs = match experiments::run(name, &cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::FAILURE;
        }
    };
    match output::write_all(&cli.out, name, cfg.seed, workers, &cfg, &outputs) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::FAILURE;
        }
    }
    if name == "selftest" {
        let failed = outputs.iter().any(|o| match &o.artifact {
            output::Artifact::Csv(t) => t.rows.iter().any(|r| r[2] == "false" && r[3] == "false"),
            _ => false,
        });
        if failed {
            eprintln!("unexpected criterion failure (of {})", criteria::N_CRITERIA);
            return ExitCode::FAILURE;
        }
    }
    ExitCode::SUCCESS
}
