use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use hew_harness::config::{threads_from_env, ExperimentConfig, Regime};
use hew_harness::protocol::{run_protocol, ProtocolOptions};
use hew_harness::sweep::{hyperparameter_sweep, tuned_config, SweepGrid};
use hew_harness::{fetch, plot, runner, verify};

#[derive(Parser)]
#[command(name = "hew", about = "Horizon-aware weighted local SGD experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured method and seed, writing JSONL metrics and a summary.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Tune hyperparameters on the leading seeds and write a tuned config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Where to write the tuned config (defaults to `<run dir>/tuned.toml`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run property suites (`all` or a comma-separated list).
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
        /// Write the JSON report here as well as printing a summary.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Render SVG figures for a directory of metrics.
    Plot {
        #[arg(long)]
        input: PathBuf,
    },
    /// Download (or import from `--local`) a dataset and verify its checksums.
    FetchData {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        local: Option<PathBuf>,
    },
    /// Sweep, run and plot the three client regimes on fetched datasets.
    Protocol {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated subset of `covertype,mnist`.
        #[arg(long, default_value = "covertype,mnist")]
        datasets: String,
        /// Comma-separated subset of `hom-equal,hom-random,het-random`.
        #[arg(long, default_value = "hom-equal,hom-random,het-random")]
        regimes: String,
    },
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    cfg.apply_env_overrides();
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config } => {
            let cfg = load_config(&config)?;
            let report = runner::run_experiment(&cfg, None)?;
            println!("metrics written to {}", report.dir.display());
            for f in &report.summary.failures {
                eprintln!("{} seed {} failed after {} rounds: {}", f.method, f.seed, f.completed_rounds, f.error);
            }
            Ok(report.summary.failures.is_empty())
        }
        Command::Sweep { config, out } => {
            let cfg = load_config(&config)?;
            let selections = hyperparameter_sweep(&cfg, None, &SweepGrid::default())?;
            let tuned = tuned_config(&cfg, &selections);
            let dir = cfg.run_dir()?;
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("sweep.json"), serde_json::to_vec_pretty(&selections)?)?;
            let out = out.unwrap_or_else(|| dir.join("tuned.toml"));
            std::fs::write(&out, tuned.to_toml()?)?;
            for s in &selections {
                println!("{}: {:?}", s.kind, s.selected);
            }
            println!("tuned config written to {}", out.display());
            Ok(true)
        }
        Command::Verify { suite, report } => {
            let rep = verify::run_suites(&suite)?;
            for s in &rep.suites {
                println!("[{}] {} ({:.1}s)", if s.passed { "PASS" } else { "FAIL" }, s.suite, s.seconds);
                for c in &s.checks {
                    println!(
                        "    {} {}: observed {:.3e}, tolerance {:.1e}, {} instances",
                        if c.passed { "ok  " } else { "FAIL" },
                        c.name,
                        c.observed,
                        c.tolerance,
                        c.instances
                    );
                    if let Some(f) = c.first_failure.as_ref().filter(|_| !c.passed) {
                        println!("         first failure: {f}");
                    }
                }
            }
            if let Some(path) = report {
                std::fs::write(&path, serde_json::to_vec_pretty(&rep)?)?;
            }
            Ok(rep.passed)
        }
        Command::Plot { input } => {
            for p in plot::emit_plots(&input)? {
                println!("{}", p.display());
            }
            Ok(true)
        }
        Command::FetchData { dataset, out, local } => {
            for p in fetch::fetch_dataset(&dataset, &out, local.as_deref())? {
                println!("{}", p.display());
            }
            Ok(true)
        }
        Command::Protocol { data_dir, out, datasets, regimes } => {
            let mut opts = ProtocolOptions::new(data_dir, out);
            opts.datasets = datasets.split(',').map(|s| s.trim().to_string()).collect();
            opts.regimes = regimes.split(',').map(|s| s.trim().parse()).collect::<Result<Vec<Regime>>>()?;
            let rep = run_protocol(&opts)?;
            for c in &rep.comparisons {
                println!(
                    "{} {}: HEW {:.6} vs HEW-Fixed {:.6} (final training objective, mean over {} seeds)",
                    c.dataset,
                    c.regime.name(),
                    c.hew_mean,
                    c.hew_fixed_mean,
                    c.seeds.len()
                );
            }
            println!("finished in {:.0}s", rep.seconds);
            Ok(rep.outcomes.iter().all(|o| o.failed_runs == 0))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(n) = threads_from_env() {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring threads") {
            eprintln!("{e:#}");
            return ExitCode::FAILURE;
        }
    }
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
