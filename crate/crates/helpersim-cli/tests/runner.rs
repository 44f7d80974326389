//! Runner integration: artifact shape, determinism of the comparison
//! table, and the documented behavior of the shipped scenarios.

use std::path::Path;

use helpersim::learning::StrategyKind;
use helpersim_cli::runner::{certify_ce, compare_strategies, run_scenario};
use helpersim_cli::scenario::ScenarioFile;
use helpersim_cli::CliError;

fn scenario_from(name: &str, out: &Path) -> ScenarioFile {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name);
    let mut scenario = ScenarioFile::load(&path).unwrap();
    scenario.output_dir = out.to_path_buf();
    scenario
}

fn parse_csv(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|line| line.split(',').map(|s| s.to_string()).collect())
        .collect()
}

#[test]
fn csv_artifacts_have_exact_shape_and_parse_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut scenario = scenario_from("baseline.toml", dir.path());
    scenario.horizon = 500;
    scenario.seed_list = Some(vec![3]);
    run_scenario(&scenario).unwrap();

    let rep = dir.path().join("rep_0003");
    for (file, columns) in [
        ("regret.csv", 1 + scenario.peers + 1),
        ("welfare.csv", 3),
        ("loads.csv", 1 + scenario.helpers),
        ("rates.csv", 1 + scenario.peers),
        ("server.csv", 3),
    ] {
        let text = std::fs::read_to_string(rep.join(file)).unwrap();
        let rows = parse_csv(&text);
        assert_eq!(rows.len(), 1 + scenario.horizon, "{file}: row count");
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), columns, "{file} line {i}: column count");
        }
        // Every data cell parses back.
        for row in &rows[1..] {
            row[0].parse::<usize>().unwrap();
            for cell in &row[1..] {
                cell.parse::<f64>().unwrap();
            }
        }
        // Stages run 0..horizon.
        assert_eq!(rows[1][0], "0");
        assert_eq!(rows[scenario.horizon][0], (scenario.horizon - 1).to_string());
    }
}

#[test]
fn summary_welfare_never_exceeds_either_optimum() {
    let dir = tempfile::tempdir().unwrap();
    let mut scenario = scenario_from("baseline.toml", dir.path());
    scenario.horizon = 2000;
    scenario.seed_list = Some(vec![0, 1, 2, 3]);
    let report = run_scenario(&scenario).unwrap();
    for r in &report.replication {
        assert!(r.welfare_ratio <= 1.0 + 1e-6);
        // The stationary bound holds statistically; these runs sit well
        // inside it.
        assert!(r.time_avg_welfare < r.r_star);
    }
}

#[test]
fn single_strategy_comparison_matches_the_run_summary() {
    let dir = tempfile::tempdir().unwrap();
    let mut scenario = scenario_from("baseline.toml", dir.path());
    scenario.horizon = 1000;
    scenario.seed_list = Some(vec![0, 1]);
    let report = run_scenario(&scenario).unwrap();
    let rows = compare_strategies(&scenario, &[StrategyKind::R2hs]).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].strategy, "r2hs");
    assert_eq!(
        rows[0].median_final_worst_regret,
        report.aggregate.median_final_worst_regret
    );
    assert_eq!(rows[0].welfare_ratio, report.aggregate.mean_welfare_ratio);
    assert_eq!(rows[0].switching_rate, report.aggregate.mean_switching_rate);
}

#[test]
fn full_information_strategy_is_no_worse_than_bandit() {
    let dir = tempfile::tempdir().unwrap();
    let mut scenario = scenario_from("baseline.toml", dir.path());
    scenario.horizon = 4000;
    scenario.seed_list = Some(vec![0, 1, 2]);
    let rows = compare_strategies(&scenario, &[StrategyKind::Rths, StrategyKind::R2hs]).unwrap();
    assert!(rows[0].welfare_ratio >= 0.90, "rths {}", rows[0].welfare_ratio);
    assert!(rows[1].welfare_ratio >= 0.90, "r2hs {}", rows[1].welfare_ratio);
    assert!(
        rows[0].median_final_worst_regret <= rows[1].median_final_worst_regret,
        "bandit feedback should not beat full information: {} vs {}",
        rows[0].median_final_worst_regret,
        rows[1].median_final_worst_regret
    );
}

#[test]
fn oscillation_scenario_writes_the_full_swap_loads() {
    let dir = tempfile::tempdir().unwrap();
    let mut scenario = scenario_from("oscillation.toml", dir.path());
    scenario.horizon = 50;
    scenario.seed_list = Some(vec![0]);
    run_scenario(&scenario).unwrap();
    let text = std::fs::read_to_string(dir.path().join("rep_0000/loads.csv")).unwrap();
    let rows = parse_csv(&text);
    // All ten peers start on helper 0 and swap in lockstep every stage.
    for (i, row) in rows[1..].iter().enumerate() {
        let expected = if i % 2 == 0 { ("10", "0") } else { ("0", "10") };
        assert_eq!((row[1].as_str(), row[2].as_str()), expected, "stage {i}");
    }
}

#[test]
fn frozen_best_response_equilibrium_certifies_as_point_mass() {
    // Two peers split across distinctly-sized constant helpers stay put:
    // the split is a pure equilibrium, and its point-mass trace passes.
    let scenario = ScenarioFile::from_str_validated(
        r#"
        peers = 2
        helpers = 2
        horizon = 2000
        strategy = "best-response"
        initial_helpers = [0, 1]
        [capacity]
        levels = [700.0]
        [[helper_override]]
        helper = 1
        levels = [900.0]
        [ce_check]
        enabled = true
        tolerance_fraction = 0.01
        "#,
    )
    .unwrap();
    let verdict = certify_ce(&scenario).unwrap();
    assert!(verdict.outcome.certified);
    assert_eq!(verdict.support, 1, "trace should freeze on one profile");
    assert!(verdict.outcome.max_gain <= 0.0);
}

#[test]
fn certify_ce_refuses_oversized_instances() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenario_from("baseline.toml", dir.path());
    // 4^10 joint profiles is over the 4096 bound.
    let err = certify_ce(&scenario).unwrap_err();
    assert!(matches!(err, CliError::Budget(_)), "{err}");
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn run_rejects_ce_check_on_oversized_instances() {
    let dir = tempfile::tempdir().unwrap();
    let mut scenario = scenario_from("baseline.toml", dir.path());
    scenario.ce_check.enabled = true;
    let err = run_scenario(&scenario).unwrap_err();
    assert!(matches!(err, CliError::Budget(_)), "{err}");
}

#[test]
fn ce_scenario_reports_per_replication_outcomes() {
    let dir = tempfile::tempdir().unwrap();
    let mut scenario = scenario_from("ce-certify.toml", dir.path());
    scenario.horizon = 4000;
    scenario.seed_list = Some(vec![0, 1]);
    let report = run_scenario(&scenario).unwrap();
    assert_eq!(report.replication.len(), 2);
    for r in &report.replication {
        let ce = r.ce_check.as_ref().expect("ce enabled");
        assert!(ce.tolerance > 0.0);
        assert!(ce.max_gain.is_finite());
    }
    assert!(report.aggregate.ce_certified.is_some());
    let summary = std::fs::read_to_string(dir.path().join("summary.toml")).unwrap();
    assert!(summary.contains("ce_check"));
}
