use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use bilevel::checks::{gradcheck, oracle, CheckReport};
use bilevel::experiment::{load_summary, run_to_dir, summarize, ExperimentConfig, ExperimentError};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "bilevel",
    version,
    about = "Learn data augmentation by online bilevel optimization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to the config's out_dir, then runs/<name>-seed<N>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate completed runs into a per-mode table.
    Summarize {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Finite-difference checks of every differentiable operation.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Analytic and unrolled-derivative checks of the hypergradient.
    Oracle {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Failure before any work started; maps to exit code 2.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path).map_err(|e| ConfigError(e.to_string()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn cmd_run(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(config, seed)?;
    let out = out.or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| {
        let name = if cfg.name.is_empty() {
            cfg.mode.as_str()
        } else {
            cfg.name.as_str()
        };
        PathBuf::from("runs").join(format!("{name}-seed{}", cfg.seed))
    });
    let summary = run_to_dir(&cfg, &out).map_err(|e| match e {
        ExperimentError::Config(m) => anyhow::Error::new(ConfigError(m)),
        other => anyhow::Error::new(other).context("run failed"),
    })?;
    println!(
        "{} seed={} test_accuracy={:.4} val_accuracy={:.4} cost={} wall_ms={:.0} -> {}",
        summary.mode.as_str(),
        summary.seed,
        summary.final_test_accuracy,
        summary.final_val_accuracy,
        summary.cost_multiplier,
        summary.wall_time_ms,
        out.display()
    );
    if let Some(m) = summary.selected_magnitude {
        println!("selected magnitude: {m}");
    }
    Ok(())
}

fn cmd_summarize(dirs: &[PathBuf], csv: Option<PathBuf>) -> Result<()> {
    let runs = dirs
        .iter()
        .map(|d| load_summary(d).with_context(|| format!("reading {}", d.display())))
        .collect::<Result<Vec<_>>>()?;
    let table = summarize(&runs)?;
    print!("{}", table.to_text());
    if let Some(p) = csv {
        std::fs::write(&p, table.to_csv()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn report(reports: &[CheckReport]) -> Result<()> {
    for r in reports {
        println!("{r}");
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    anyhow::ensure!(failed == 0, "{failed} of {} checks failed", reports.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run { config, seed, out } => cmd_run(&config, seed, out),
        Command::Summarize { dirs, csv } => cmd_summarize(&dirs, csv),
        Command::Gradcheck { seed } => report(&gradcheck::full_suite(seed)),
        Command::Oracle { seed } => report(&oracle::oracle_suite(seed)),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
