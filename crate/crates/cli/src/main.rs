use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info};
use pdnac_cli::config::ExperimentConfig;
use pdnac_cli::output::write_json;
use pdnac_cli::{exit_code, plot, selftest, sweep};
use pdnac_core::features::FeatureMap;
use pdnac_core::oracle::oracle_report;
use pdnac_core::{Error, Result, TabularCmdp};

#[derive(Parser)]
#[command(name = "pdnac", version, about = "Primal-dual natural actor-critic experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep over the config's sample budgets and seeds.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for the sweep (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Replace the config's seed list with this single seed.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Plot median gap and violation against T from sweep summaries.
    Plot {
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Exact report for an instance file: optimum, Slater margin, mixing, critic constants.
    Oracle {
        instance: PathBuf,
        /// Anchor state of the one-hot critic features (default: last state).
        #[arg(long)]
        anchor: Option<usize>,
        #[arg(long, default_value_t = 32)]
        probes: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo check of the stochastic-recursion error bound.
    Selftest {
        #[arg(long, default_value_t = 1000)]
        replicas: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn init_logging() {
    let level = std::env::var("PDNAC_LOG_LEVEL").unwrap_or_else(|_| "warn".into());
    env_logger::Builder::new().parse_filters(&level).format_timestamp(None).init();
}

fn thread_pool(jobs: Option<usize>) -> Result<()> {
    if let Some(n) = jobs {
        if n == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run { config, out, jobs, seed_override } => {
            thread_pool(jobs)?;
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed_override {
                cfg.seeds = vec![s];
            }
            let out = out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("pdnac-out"));
            let prep = sweep::prepare(cfg)?;
            let summary = sweep::run_sweep(&prep, Some(&out))?;
            for m in &summary.per_t {
                info!("T = {}: median gap {:?}, median violation {:?}", m.t_budget, m.median_avg_gap, m.median_avg_violation);
            }
            println!(
                "wrote {} cells to {}; slope_gap = {:?}, slope_violation = {:?}",
                summary.cells.len(),
                out.display(),
                summary.slope_gap,
                summary.slope_violation
            );
            Ok(0)
        }
        Command::Plot { summaries, out } => {
            let report = plot::plot_summaries(&summaries, &out)?;
            print_json(&report)?;
            Ok(0)
        }
        Command::Oracle { instance, anchor, probes, out } => {
            let text = std::fs::read_to_string(&instance)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", instance.display())))?;
            let cmdp = TabularCmdp::from_json(&text)?;
            let n = cmdp.n_states();
            let features = FeatureMap::anchored_one_hot(n, anchor.unwrap_or(n - 1))?;
            let report = oracle_report(&cmdp, &features, probes, 0)?;
            print_json(&report)?;
            if let Some(out) = out {
                write_json(&out.join("oracle.json"), &report)?;
            }
            if report.feasible {
                Ok(0)
            } else {
                error!("instance is infeasible: no policy satisfies the constraint");
                Ok(3)
            }
        }
        Command::Selftest { replicas, seed, out } => {
            let report = selftest::run_selftest(replicas, seed)?;
            print_json(&report)?;
            if let Some(out) = out {
                write_json(&out.join("selftest.json"), &report)?;
            }
            Ok(if report.pass { 0 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
