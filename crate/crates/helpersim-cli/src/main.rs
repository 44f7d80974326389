use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use helpersim_cli::runner::{
    certify_ce, compare_strategies, run_scenario, RunOverrides, SummaryReport,
};
use helpersim_cli::scenario::ScenarioFile;
use helpersim_cli::CliError;
use helpersim::learning::StrategyKind;

/// Batch simulator for decentralized helper selection: seeded runs,
/// centralized benchmark, CSV traces and equilibrium certification.
#[derive(Parser)]
#[command(name = "helpersim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario's replications and write CSV traces plus summary.toml.
    Run {
        scenario: PathBuf,
        /// Output directory (overrides the scenario file).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Explicit replication seeds (overrides the scenario file).
        #[arg(long, value_delimiter = ',')]
        seed_list: Option<Vec<u64>>,
        /// Replication count (overrides the scenario file).
        #[arg(long)]
        replications: Option<usize>,
    },
    /// Run the same scenario under several strategies, side by side.
    Compare {
        scenario: PathBuf,
        /// Comma-separated strategies: rths,r2hs,best-response.
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<String>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the post-burn-in empirical joint distribution for correlated
    /// equilibrium.
    CertifyCe {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn print_report(report: &SummaryReport) {
    println!(
        "{} peers x {} helpers, horizon {}, burn-in {}",
        report.scenario_peers, report.scenario_helpers, report.horizon, report.burn_in_stage
    );
    println!(
        "{:>6} {:>12} {:>12} {:>10} {:>10} {:>10} {:>10} {:>8}",
        "seed", "final_regret", "welfare", "w/opt", "jain_peer", "jain_help", "server", "switch"
    );
    for r in &report.replication {
        println!(
            "{:>6} {:>12.3} {:>12.1} {:>10.4} {:>10.4} {:>10.4} {:>10.1} {:>8.4}",
            r.seed,
            r.final_worst_regret,
            r.time_avg_welfare,
            r.welfare_ratio,
            r.jain_peers,
            r.jain_helpers,
            r.mean_server_load,
            r.switching_rate
        );
    }
    let a = &report.aggregate;
    println!(
        "aggregate over {} replications: R* {:.1}, deficit {:.1}, median final regret {:.3}, \
         welfare ratio mean {:.4} (min {:.4}), jain peers {:.4}, jain helpers {:.4}, \
         server load {:.1}, switching {:.4}",
        a.replications,
        a.r_star,
        a.min_bandwidth_deficit,
        a.median_final_worst_regret,
        a.mean_welfare_ratio,
        a.min_welfare_ratio,
        a.mean_jain_peers,
        a.mean_jain_helpers,
        a.mean_server_load,
        a.mean_switching_rate
    );
    if let Some(certified) = a.ce_certified {
        println!("CE certified in {certified}/{} replications", a.replications);
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run {
            scenario,
            out,
            seed_list,
            replications,
        } => {
            let scenario = ScenarioFile::load(&scenario)?;
            let overrides = RunOverrides {
                output_dir: out,
                seed_list,
                replications,
            };
            let effective = overrides.apply(&scenario);
            let report = run_scenario(&effective)?;
            print_report(&report);
            println!("artifacts written to {}", effective.output_dir.display());
        }
        Command::Compare {
            scenario,
            strategies,
            out,
        } => {
            let scenario = ScenarioFile::load(&scenario)?;
            let mut effective = scenario.clone();
            if let Some(dir) = out {
                effective.output_dir = dir;
            }
            let names: Vec<String> = strategies
                .or_else(|| effective.compare_strategies.clone())
                .unwrap_or_else(|| vec![effective.strategy.clone()]);
            let kinds: Vec<StrategyKind> = names
                .iter()
                .map(|n| n.parse().map_err(|e: helpersim::learning::LearningError| {
                    CliError::Schema(e.to_string())
                }))
                .collect::<Result<_, _>>()?;
            let rows = compare_strategies(&effective, &kinds)?;
            println!(
                "{:>14} {:>10} {:>8} {:>14} {:>10} {:>10} {:>10}",
                "strategy", "w/opt", "switch", "median_regret", "mean_rate", "jain_peer", "jain_help"
            );
            for row in &rows {
                println!(
                    "{:>14} {:>10.4} {:>8.4} {:>14.3} {:>10.1} {:>10.4} {:>10.4}",
                    row.strategy,
                    row.welfare_ratio,
                    row.switching_rate,
                    row.median_final_worst_regret,
                    row.mean_rate,
                    row.jain_peers,
                    row.jain_helpers
                );
            }
            println!(
                "comparison written to {}",
                effective.output_dir.join("compare.csv").display()
            );
        }
        Command::CertifyCe { scenario, out } => {
            let scenario = ScenarioFile::load(&scenario)?;
            let mut effective = scenario.clone();
            if let Some(dir) = out {
                effective.output_dir = dir;
            }
            let verdict = certify_ce(&effective)?;
            println!(
                "seed {} over {} stages (burn-in {}), {} distinct profiles",
                verdict.seed, verdict.stages, verdict.burn_in_stage, verdict.support
            );
            println!(
                "max deviation gain {:.4} against tolerance {:.4}: {}",
                verdict.outcome.max_gain,
                verdict.outcome.tolerance,
                if verdict.outcome.certified {
                    "approximate correlated equilibrium CERTIFIED"
                } else {
                    "NOT a correlated equilibrium at this tolerance"
                }
            );
            if !verdict.outcome.certified {
                println!("violations: {}", verdict.outcome.violations);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
