//! Minimal end-to-end run: ten peers learn to share four fluctuating
//! helpers, printed against the centralized optimum.

use helpersim::benchmark::{solve_centralized, StateSpace};
use helpersim::env::{
    run_simulation, CapacityChain, DemandModel, InitialAssignment, SimulationConfig,
    DEFAULT_DEMAND, DEFAULT_LEVELS, DEFAULT_SELF_LOOP,
};
use helpersim::learning::{LearningParams, StrategyKind};

fn main() {
    let n_peers = 10;
    let n_helpers = 4;
    let config = SimulationConfig {
        n_peers,
        n_helpers,
        horizon: 10_000,
        params: LearningParams::new(0.001, 0.05, 70.0, n_helpers).unwrap(),
        chains: (0..n_helpers)
            .map(|_| {
                CapacityChain::slowly_varying(DEFAULT_LEVELS.to_vec(), DEFAULT_SELF_LOOP).unwrap()
            })
            .collect(),
        demand: DemandModel::uniform(DEFAULT_DEMAND).unwrap(),
        strategies: vec![StrategyKind::R2hs; n_peers],
        initial_assignment: InitialAssignment::UniformRandom,
        seed: 0,
    };

    let trace = run_simulation(&config).unwrap();
    let states = StateSpace::from_chains(&config.chains).unwrap();
    let (_, r_star) = solve_centralized(&states, n_peers).unwrap();

    let burn_in = config.horizon / 5;
    println!("stages simulated:        {}", trace.len());
    println!("centralized optimum R*:  {r_star:.1}");
    println!(
        "time-averaged welfare:   {:.1}  ({:.1}% of R*)",
        trace.mean_welfare(burn_in),
        100.0 * trace.mean_welfare(burn_in) / r_star
    );
    println!(
        "final worst-peer regret: {:.2}  ({:.2}% of mean rate)",
        trace.final_worst_regret(),
        100.0 * trace.final_worst_regret() / trace.mean_rate(burn_in)
    );
    println!(
        "mean server load:        {:.1}  (minimum bandwidth deficit {:.1})",
        trace.mean_server_load(burn_in),
        config.min_bandwidth_deficit()
    );
}
