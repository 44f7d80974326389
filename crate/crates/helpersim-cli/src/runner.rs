//! Scenario execution: seeded replications, the centralized benchmark,
//! summary aggregation, strategy comparison and CE certification.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;

use helpersim::benchmark::{optimal_welfare, solve_centralized, BenchmarkError, StateSpace};
use helpersim::env::{run_simulation, MetricsTrace, SimError, SimulationConfig};
use helpersim::game::{check_correlated_equilibrium, jain_fairness, CapacityVector};
use helpersim::learning::StrategyKind;

use crate::output::write_metric_files;
use crate::scenario::ScenarioFile;
use crate::CliError;

/// Enumeration guard for CE certification: joint profiles beyond this are
/// refused.
pub const CE_PROFILE_BOUND: u128 = 4096;

/// Command-line overrides; a set flag wins over the scenario file.
#[derive(Clone, Debug, Default)]
pub struct RunOverrides {
    pub output_dir: Option<PathBuf>,
    pub seed_list: Option<Vec<u64>>,
    pub replications: Option<usize>,
}

impl RunOverrides {
    pub fn apply(&self, scenario: &ScenarioFile) -> ScenarioFile {
        let mut s = scenario.clone();
        if let Some(dir) = &self.output_dir {
            s.output_dir = dir.clone();
        }
        if let Some(seeds) = &self.seed_list {
            s.seed_list = Some(seeds.clone());
        }
        if let Some(k) = self.replications {
            s.replications = k;
            if self.seed_list.is_none() {
                s.seed_list = None;
            }
        }
        s
    }
}

/// Result of one CE check.
#[derive(Clone, Debug, Serialize)]
pub struct CeOutcome {
    pub tolerance: f64,
    pub max_gain: f64,
    pub violations: usize,
    pub certified: bool,
}

/// Metrics of a single seeded run.
#[derive(Clone, Debug, Serialize)]
pub struct ReplicationSummary {
    pub seed: u64,
    pub final_worst_regret: f64,
    pub mean_rate: f64,
    pub time_avg_welfare: f64,
    pub r_star: f64,
    /// Welfare against the realized per-stage optimum; ≤ 1 by construction.
    pub welfare_ratio: f64,
    /// Welfare against the stationary-expectation optimum R*.
    pub welfare_ratio_stationary: f64,
    pub jain_peers: f64,
    pub jain_helpers: f64,
    pub mean_server_load: f64,
    pub switching_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ce_check: Option<CeOutcome>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AggregateSummary {
    pub replications: usize,
    pub r_star: f64,
    pub min_bandwidth_deficit: f64,
    pub median_final_worst_regret: f64,
    pub mean_rate: f64,
    pub mean_welfare_ratio: f64,
    pub min_welfare_ratio: f64,
    pub max_welfare_ratio: f64,
    pub mean_jain_peers: f64,
    pub mean_jain_helpers: f64,
    pub mean_server_load: f64,
    pub mean_switching_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ce_certified: Option<usize>,
}

/// Full report of a scenario run: per-replication rows plus aggregates.
#[derive(Clone, Debug, Serialize)]
pub struct SummaryReport {
    pub scenario_peers: usize,
    pub scenario_helpers: usize,
    pub horizon: usize,
    pub burn_in_stage: usize,
    pub aggregate: AggregateSummary,
    pub replication: Vec<ReplicationSummary>,
}

fn median(sorted: &mut [f64]) -> f64 {
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite metric"));
    let n = sorted.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

fn map_sim_err(e: SimError) -> CliError {
    match e {
        SimError::Config(msg) => CliError::Config(msg),
        SimError::Chain(e) => CliError::Config(e.to_string()),
        other => CliError::Simulation(other.to_string()),
    }
}

fn map_bench_err(e: BenchmarkError) -> CliError {
    match e {
        BenchmarkError::BudgetExceeded { .. } => CliError::Budget(e.to_string()),
        other => CliError::Simulation(other.to_string()),
    }
}

/// Centralized benchmark optimum for the scenario's chains.
pub fn benchmark_optimum(config: &SimulationConfig) -> Result<f64, CliError> {
    let states = StateSpace::from_chains(&config.chains).map_err(map_bench_err)?;
    let (_, r_star) = solve_centralized(&states, config.n_peers).map_err(map_bench_err)?;
    Ok(r_star)
}

fn joint_profile_count(n_peers: usize, n_helpers: usize) -> u128 {
    (n_helpers as u128)
        .checked_pow(n_peers as u32)
        .unwrap_or(u128::MAX)
}

fn ce_outcome(
    scenario: &ScenarioFile,
    config: &SimulationConfig,
    trace: &MetricsTrace,
) -> Result<CeOutcome, CliError> {
    let burn_in = scenario.burn_in_stage();
    let dist = trace
        .empirical_distribution(burn_in)
        .map_err(|e| CliError::Simulation(e.to_string()))?;
    let expected = config.expected_capacities().map_err(map_sim_err)?;
    let tolerance = scenario.ce_check.tolerance_fraction * trace.mean_rate(burn_in);
    let violations = check_correlated_equilibrium(&dist, &expected, tolerance)
        .map_err(|e| CliError::Simulation(e.to_string()))?;
    let all_gains = check_correlated_equilibrium(&dist, &expected, f64::NEG_INFINITY)
        .map_err(|e| CliError::Simulation(e.to_string()))?;
    let max_gain = all_gains
        .iter()
        .map(|v| v.gain)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(CeOutcome {
        tolerance,
        max_gain,
        violations: violations.len(),
        certified: violations.is_empty(),
    })
}

fn summarize_replication(
    scenario: &ScenarioFile,
    config: &SimulationConfig,
    trace: &MetricsTrace,
    r_star: f64,
) -> Result<ReplicationSummary, CliError> {
    let burn_in = scenario.burn_in_stage();
    let n_peers = config.n_peers;
    let mut realized_optimum_sum = 0.0;
    for record in &trace.records()[burn_in..] {
        let caps = CapacityVector::new(record.capacities.clone())
            .map_err(|e| CliError::Simulation(e.to_string()))?;
        realized_optimum_sum += optimal_welfare(&caps, n_peers).map_err(map_bench_err)?;
    }
    let stages = (trace.len() - burn_in) as f64;
    let time_avg_welfare = trace.mean_welfare(burn_in);
    let welfare_ratio = time_avg_welfare * stages / realized_optimum_sum;
    let ce_check = if scenario.ce_check.enabled {
        Some(ce_outcome(scenario, config, trace)?)
    } else {
        None
    };
    Ok(ReplicationSummary {
        seed: config.seed,
        final_worst_regret: trace.final_worst_regret(),
        mean_rate: trace.mean_rate(burn_in),
        time_avg_welfare,
        r_star,
        welfare_ratio,
        welfare_ratio_stationary: time_avg_welfare / r_star,
        jain_peers: jain_fairness(&trace.mean_rates_per_peer(burn_in))
            .map_err(|e| CliError::Simulation(e.to_string()))?,
        jain_helpers: jain_fairness(&trace.mean_loads(burn_in))
            .map_err(|e| CliError::Simulation(e.to_string()))?,
        mean_server_load: trace.mean_server_load(burn_in),
        switching_rate: trace.switching_rate(burn_in),
        ce_check,
    })
}

fn aggregate(
    replications: &[ReplicationSummary],
    r_star: f64,
    deficit: f64,
    ce_enabled: bool,
) -> AggregateSummary {
    let k = replications.len();
    let mean = |f: &dyn Fn(&ReplicationSummary) -> f64| {
        replications.iter().map(f).sum::<f64>() / k as f64
    };
    let mut regrets: Vec<f64> = replications.iter().map(|r| r.final_worst_regret).collect();
    AggregateSummary {
        replications: k,
        r_star,
        min_bandwidth_deficit: deficit,
        median_final_worst_regret: median(&mut regrets),
        mean_rate: mean(&|r| r.mean_rate),
        mean_welfare_ratio: mean(&|r| r.welfare_ratio),
        min_welfare_ratio: replications
            .iter()
            .map(|r| r.welfare_ratio)
            .fold(f64::INFINITY, f64::min),
        max_welfare_ratio: replications
            .iter()
            .map(|r| r.welfare_ratio)
            .fold(f64::NEG_INFINITY, f64::max),
        mean_jain_peers: mean(&|r| r.jain_peers),
        mean_jain_helpers: mean(&|r| r.jain_helpers),
        mean_server_load: mean(&|r| r.mean_server_load),
        mean_switching_rate: mean(&|r| r.switching_rate),
        ce_certified: ce_enabled.then(|| {
            replications
                .iter()
                .filter(|r| r.ce_check.as_ref().is_some_and(|c| c.certified))
                .count()
        }),
    }
}

/// Runs every replication of a scenario, writes the per-replication metric
/// CSVs and `summary.toml`, and returns the report.
///
/// Replications run in parallel on independent generators; artifacts are
/// written sequentially in seed-list order afterwards, so reruns are
/// byte-identical.
pub fn run_scenario(scenario: &ScenarioFile) -> Result<SummaryReport, CliError> {
    let seeds = scenario.seeds();
    if scenario.ce_check.enabled {
        let profiles = joint_profile_count(scenario.peers, scenario.helpers);
        if profiles > CE_PROFILE_BOUND {
            return Err(CliError::Budget(format!(
                "CE check needs {profiles} joint profiles enumerable, over the {CE_PROFILE_BOUND} bound; \
                 disable ce_check or shrink the instance"
            )));
        }
    }

    let base_config = scenario.to_sim_config(seeds[0], None)?;
    let r_star = benchmark_optimum(&base_config)?;
    let deficit = base_config.min_bandwidth_deficit();

    let runs: Vec<(MetricsTrace, ReplicationSummary)> = seeds
        .par_iter()
        .map(|&seed| {
            let config = scenario.to_sim_config(seed, None)?;
            let trace = run_simulation(&config).map_err(map_sim_err)?;
            let summary = summarize_replication(scenario, &config, &trace, r_star)?;
            Ok((trace, summary))
        })
        .collect::<Result<_, CliError>>()?;

    for (seed, (trace, _)) in seeds.iter().zip(&runs) {
        let dir = scenario.output_dir.join(format!("rep_{seed:04}"));
        write_metric_files(&dir, trace, &scenario.metrics.files, r_star, deficit)?;
    }

    let replication: Vec<ReplicationSummary> = runs.into_iter().map(|(_, s)| s).collect();
    let report = SummaryReport {
        scenario_peers: scenario.peers,
        scenario_helpers: scenario.helpers,
        horizon: scenario.horizon,
        burn_in_stage: scenario.burn_in_stage(),
        aggregate: aggregate(&replication, r_star, deficit, scenario.ce_check.enabled),
        replication,
    };
    let text = toml::to_string_pretty(&report)
        .map_err(|e| CliError::Simulation(format!("summary serialization: {e}")))?;
    std::fs::create_dir_all(&scenario.output_dir)?;
    std::fs::write(scenario.output_dir.join("summary.toml"), text)?;
    Ok(report)
}

/// One row of the strategy comparison.
#[derive(Clone, Debug, Serialize)]
pub struct StrategyRow {
    pub strategy: String,
    pub welfare_ratio: f64,
    pub switching_rate: f64,
    pub median_final_worst_regret: f64,
    pub mean_rate: f64,
    pub jain_peers: f64,
    pub jain_helpers: f64,
}

/// Runs the scenario once per strategy over the same seeds and tabulates
/// the side-by-side summary; also writes `compare.csv`.
pub fn compare_strategies(
    scenario: &ScenarioFile,
    kinds: &[StrategyKind],
) -> Result<Vec<StrategyRow>, CliError> {
    if kinds.is_empty() {
        return Err(CliError::Config("no strategies to compare".into()));
    }
    let seeds = scenario.seeds();
    let base_config = scenario.to_sim_config(seeds[0], Some(kinds[0]))?;
    let r_star = benchmark_optimum(&base_config)?;

    let mut rows = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let summaries: Vec<ReplicationSummary> = seeds
            .par_iter()
            .map(|&seed| {
                let config = scenario.to_sim_config(seed, Some(kind))?;
                let trace = run_simulation(&config).map_err(map_sim_err)?;
                summarize_replication(scenario, &config, &trace, r_star)
            })
            .collect::<Result<_, CliError>>()?;
        let k = summaries.len() as f64;
        let mut regrets: Vec<f64> = summaries.iter().map(|s| s.final_worst_regret).collect();
        rows.push(StrategyRow {
            strategy: kind.name().to_string(),
            welfare_ratio: summaries.iter().map(|s| s.welfare_ratio).sum::<f64>() / k,
            switching_rate: summaries.iter().map(|s| s.switching_rate).sum::<f64>() / k,
            median_final_worst_regret: median(&mut regrets),
            mean_rate: summaries.iter().map(|s| s.mean_rate).sum::<f64>() / k,
            jain_peers: summaries.iter().map(|s| s.jain_peers).sum::<f64>() / k,
            jain_helpers: summaries.iter().map(|s| s.jain_helpers).sum::<f64>() / k,
        });
    }

    let mut csv = String::from(
        "strategy,welfare_ratio,switching_rate,median_final_worst_regret,mean_rate,jain_peers,jain_helpers\n",
    );
    for row in &rows {
        use std::fmt::Write as _;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            row.strategy,
            row.welfare_ratio,
            row.switching_rate,
            row.median_final_worst_regret,
            row.mean_rate,
            row.jain_peers,
            row.jain_helpers
        );
    }
    std::fs::create_dir_all(&scenario.output_dir)?;
    std::fs::write(scenario.output_dir.join("compare.csv"), csv)?;
    Ok(rows)
}

/// CE certification verdict for one seeded run.
#[derive(Clone, Debug, Serialize)]
pub struct CeVerdict {
    pub seed: u64,
    pub stages: usize,
    pub burn_in_stage: usize,
    pub support: usize,
    pub outcome: CeOutcome,
}

/// Builds the post-burn-in empirical joint distribution of the scenario's
/// first seed and checks it against the expected game. Refuses instances
/// whose joint profile space exceeds [`CE_PROFILE_BOUND`].
pub fn certify_ce(scenario: &ScenarioFile) -> Result<CeVerdict, CliError> {
    let profiles = joint_profile_count(scenario.peers, scenario.helpers);
    if profiles > CE_PROFILE_BOUND {
        return Err(CliError::Budget(format!(
            "instance has {profiles} joint profiles, over the {CE_PROFILE_BOUND} enumeration bound \
             (need helpers^peers <= {CE_PROFILE_BOUND})"
        )));
    }
    let seed = scenario.seeds()[0];
    let config = scenario.to_sim_config(seed, None)?;
    let trace = run_simulation(&config).map_err(map_sim_err)?;
    let burn_in = scenario.burn_in_stage();
    let dist = trace
        .empirical_distribution(burn_in)
        .map_err(|e| CliError::Simulation(e.to_string()))?;
    let outcome = ce_outcome(scenario, &config, &trace)?;
    Ok(CeVerdict {
        seed,
        stages: trace.len(),
        burn_in_stage: burn_in,
        support: dist.support_len(),
        outcome,
    })
}
