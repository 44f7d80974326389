//! The stochastic world and the stage loop.
//!
//! Each stage: capacity chains step, every peer draws an action from its
//! current strategy, rates resolve as `C/σ`, learners digest the outcome,
//! and the metrics harness records the stage. The whole trace is a pure
//! function of the configuration, seed included.

mod markov;

pub use markov::{CapacityChain, ChainError, ROW_SUM_TOL, STATIONARY_RESIDUAL_TOL};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::game::{
    counterfactual_utility, realized_utility, social_welfare, AssignmentProfile, CapacityVector,
    EmpiricalJointDistribution, GameError, HelperId, HistoryLog, PeerId,
};
use crate::learning::{
    build_learner, HelperSelector, LearningError, LearningParams, SquareMatrix, StageFeedback,
    StrategyKind,
};

/// Default capacity levels.
pub const DEFAULT_LEVELS: [f64; 3] = [700.0, 800.0, 900.0];
/// Default self-loop probability of the capacity chains; gives 50-stage
/// expected dwell times, slow relative to the learners' memory.
pub const DEFAULT_SELF_LOOP: f64 = 0.98;
/// Default per-peer demand. Ten peers at this rate outstrip the worst-case
/// supply of four 700-capacity helpers, so the server-deficit regime is
/// exercised.
pub const DEFAULT_DEMAND: f64 = 350.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("stage {stage}: {source}")]
    Learning { stage: usize, source: LearningError },
    #[error("stage {stage}: {source}")]
    Game { stage: usize, source: GameError },
    #[error(
        "stage {stage}: peer p{peer} strategy broke the exploration floor: p(h{action}) = {prob} < {floor}"
    )]
    FloorViolation {
        stage: usize,
        peer: usize,
        action: usize,
        prob: f64,
        floor: f64,
    },
}

/// Per-peer target streaming rate; uniform by default, per-peer override
/// available.
#[derive(Clone, Debug, PartialEq)]
pub struct DemandModel {
    uniform: f64,
    overrides: Option<Vec<f64>>,
}

impl DemandModel {
    pub fn uniform(rate: f64) -> Result<Self, SimError> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(SimError::Config(format!("demand rate must be > 0, got {rate}")));
        }
        Ok(Self {
            uniform: rate,
            overrides: None,
        })
    }

    pub fn per_peer(rates: Vec<f64>) -> Result<Self, SimError> {
        if rates.is_empty() || rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(SimError::Config(
                "per-peer demands must be nonempty and positive".to_string(),
            ));
        }
        Ok(Self {
            uniform: rates[0],
            overrides: Some(rates),
        })
    }

    pub fn rate_for(&self, peer: PeerId) -> f64 {
        match &self.overrides {
            Some(rates) => rates.get(peer.0).copied().unwrap_or(self.uniform),
            None => self.uniform,
        }
    }

    pub fn total(&self, n_peers: usize) -> f64 {
        (0..n_peers).map(|i| self.rate_for(PeerId(i))).sum()
    }
}

/// How peers start before any feedback exists.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialAssignment {
    /// Each peer draws uniformly over the helpers.
    UniformRandom,
    /// Everyone starts on one helper (the classic oscillation setup).
    Fixed(HelperId),
    /// Explicit per-peer initial actions.
    PerPeer(Vec<HelperId>),
}

/// Full description of one simulation run.
#[derive(Clone, Debug)]
pub struct SimulationConfig {
    pub n_peers: usize,
    pub n_helpers: usize,
    pub horizon: usize,
    pub params: LearningParams,
    /// One capacity chain per helper.
    pub chains: Vec<CapacityChain>,
    pub demand: DemandModel,
    /// One strategy kind per peer.
    pub strategies: Vec<StrategyKind>,
    pub initial_assignment: InitialAssignment,
    pub seed: u64,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_peers < 1 {
            return Err(SimError::Config("need at least one peer".into()));
        }
        if self.n_helpers < 1 {
            return Err(SimError::Config("need at least one helper".into()));
        }
        if self.horizon < 1 {
            return Err(SimError::Config("horizon must be at least 1".into()));
        }
        if self.chains.len() != self.n_helpers {
            return Err(SimError::Config(format!(
                "{} capacity chains for {} helpers",
                self.chains.len(),
                self.n_helpers
            )));
        }
        if self.strategies.len() != self.n_peers {
            return Err(SimError::Config(format!(
                "{} strategies for {} peers",
                self.strategies.len(),
                self.n_peers
            )));
        }
        if self.params.m != self.n_helpers {
            return Err(SimError::Config(format!(
                "learning params built for {} actions but the game has {} helpers",
                self.params.m, self.n_helpers
            )));
        }
        match &self.initial_assignment {
            InitialAssignment::UniformRandom => {}
            InitialAssignment::Fixed(h) => {
                if h.0 >= self.n_helpers {
                    return Err(SimError::Config(format!(
                        "initial helper h{} out of range",
                        h.0
                    )));
                }
            }
            InitialAssignment::PerPeer(actions) => {
                if actions.len() != self.n_peers
                    || actions.iter().any(|h| h.0 >= self.n_helpers)
                {
                    return Err(SimError::Config(
                        "per-peer initial actions must list one valid helper per peer".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Required surplus server bandwidth if every helper's minimum capacity
    /// were fully utilized: `max(0, Σ demand − Σ min-level)`.
    pub fn min_bandwidth_deficit(&self) -> f64 {
        let demand = self.demand.total(self.n_peers);
        let min_supply: f64 = self.chains.iter().map(|c| c.min_capacity()).sum();
        (demand - min_supply).max(0.0)
    }

    /// Stationary mean capacity per helper, the capacity vector of the
    /// expected game.
    pub fn expected_capacities(&self) -> Result<CapacityVector, SimError> {
        let means = self
            .chains
            .iter()
            .map(|c| c.expected_capacity())
            .collect::<Result<Vec<_>, _>>()?;
        CapacityVector::new(means).map_err(|source| SimError::Game { stage: 0, source })
    }
}

/// Sum of per-peer shortfalls `Σ max(0, R_i − r_i)`: demand the helpers did
/// not cover and the server must.
pub fn server_load(rates: &[f64], demand: &DemandModel) -> f64 {
    rates
        .iter()
        .enumerate()
        .map(|(i, &r)| (demand.rate_for(PeerId(i)) - r).max(0.0))
        .sum()
}

/// Aggregate-deficit alternative: `max(0, Σ R_i − Σ r_i)`. Unlike the
/// per-peer sum this credits one peer's surplus against another's
/// shortfall.
pub fn server_load_aggregate(rates: &[f64], demand: &DemandModel) -> f64 {
    let total_demand = demand.total(rates.len());
    let total_rate: f64 = rates.iter().sum();
    (total_demand - total_rate).max(0.0)
}

/// Exact recency-weighted internal regret, tracked by the harness from full
/// information. `D(j,k)` folds `ε·(û(k) − u)` into row `j` whenever `j` is
/// played and decays everything by `(1−ε)` each stage — the ground truth the
/// learners' own estimates approximate, measured identically for every
/// strategy kind.
#[derive(Clone, Debug)]
pub struct InternalRegretMeter {
    epsilon: f64,
    d: SquareMatrix,
}

impl InternalRegretMeter {
    pub fn new(n_helpers: usize, epsilon: f64) -> Self {
        Self {
            epsilon,
            d: SquareMatrix::zeros(n_helpers),
        }
    }

    pub fn update(&mut self, played: HelperId, realized: f64, counterfactuals: &[f64]) {
        self.d.scale(1.0 - self.epsilon);
        for (k, &cf) in counterfactuals.iter().enumerate() {
            if k == played.0 {
                continue;
            }
            self.d
                .add(played, HelperId(k), self.epsilon * (cf - realized));
        }
    }

    /// Largest positive regret entry, 0 when none.
    pub fn max_regret(&self) -> f64 {
        self.d.max_entry().max(0.0)
    }
}

/// Everything recorded about one stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageRecord {
    pub stage: usize,
    pub profile: AssignmentProfile,
    /// Per-helper capacity this stage.
    pub capacities: Vec<f64>,
    /// Per-peer realized rate.
    pub rates: Vec<f64>,
    /// Per-peer max internal regret (harness-measured).
    pub regrets: Vec<f64>,
    pub welfare: f64,
    pub server_load: f64,
}

/// Stage-by-stage record of a run; length equals the horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsTrace {
    n_peers: usize,
    n_helpers: usize,
    records: Vec<StageRecord>,
}

impl MetricsTrace {
    pub fn n_peers(&self) -> usize {
        self.n_peers
    }

    pub fn n_helpers(&self) -> usize {
        self.n_helpers
    }

    pub fn records(&self) -> &[StageRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Max over peers of the harness regret at the final stage.
    pub fn final_worst_regret(&self) -> f64 {
        self.records
            .last()
            .map(|r| r.regrets.iter().copied().fold(0.0, f64::max))
            .unwrap_or(0.0)
    }

    /// Mean rate over peers and stages from `from_stage` on.
    pub fn mean_rate(&self, from_stage: usize) -> f64 {
        let slice = &self.records[from_stage.min(self.records.len())..];
        if slice.is_empty() {
            return 0.0;
        }
        let total: f64 = slice.iter().map(|r| r.rates.iter().sum::<f64>()).sum();
        total / (slice.len() * self.n_peers) as f64
    }

    pub fn mean_welfare(&self, from_stage: usize) -> f64 {
        let slice = &self.records[from_stage.min(self.records.len())..];
        if slice.is_empty() {
            return 0.0;
        }
        slice.iter().map(|r| r.welfare).sum::<f64>() / slice.len() as f64
    }

    pub fn mean_server_load(&self, from_stage: usize) -> f64 {
        let slice = &self.records[from_stage.min(self.records.len())..];
        if slice.is_empty() {
            return 0.0;
        }
        slice.iter().map(|r| r.server_load).sum::<f64>() / slice.len() as f64
    }

    /// Per-helper mean connection counts from `from_stage` on.
    pub fn mean_loads(&self, from_stage: usize) -> Vec<f64> {
        let slice = &self.records[from_stage.min(self.records.len())..];
        let mut means = vec![0.0; self.n_helpers];
        if slice.is_empty() {
            return means;
        }
        for record in slice {
            for (j, &load) in record.profile.loads().iter().enumerate() {
                means[j] += load as f64;
            }
        }
        for m in &mut means {
            *m /= slice.len() as f64;
        }
        means
    }

    /// Per-peer mean rates from `from_stage` on.
    pub fn mean_rates_per_peer(&self, from_stage: usize) -> Vec<f64> {
        let slice = &self.records[from_stage.min(self.records.len())..];
        let mut means = vec![0.0; self.n_peers];
        if slice.is_empty() {
            return means;
        }
        for record in slice {
            for (i, &r) in record.rates.iter().enumerate() {
                means[i] += r;
            }
        }
        for m in &mut means {
            *m /= slice.len() as f64;
        }
        means
    }

    /// Fraction of peer-stages (from `from_stage` on) where a peer's helper
    /// differs from its previous one.
    pub fn switching_rate(&self, from_stage: usize) -> f64 {
        let start = from_stage.max(1).min(self.records.len());
        if start >= self.records.len() {
            return 0.0;
        }
        let mut switches = 0u64;
        let mut transitions = 0u64;
        for w in self.records[start - 1..].windows(2) {
            let prev = w[0].profile.choices();
            let next = w[1].profile.choices();
            for (a, b) in prev.iter().zip(next) {
                transitions += 1;
                if a != b {
                    switches += 1;
                }
            }
        }
        switches as f64 / transitions as f64
    }

    /// Joint-profile frequency table over stages from `from_stage` on.
    pub fn empirical_distribution(
        &self,
        from_stage: usize,
    ) -> Result<EmpiricalJointDistribution, GameError> {
        let mut dist = EmpiricalJointDistribution::new();
        for record in &self.records[from_stage.min(self.records.len())..] {
            dist.record(record.profile.clone())?;
        }
        Ok(dist)
    }

    /// One peer's private history over the whole run.
    pub fn history_for(&self, peer: PeerId) -> Result<HistoryLog, GameError> {
        let mut log = HistoryLog::new();
        for record in &self.records {
            let action = record.profile.choice(peer)?;
            log.record(record.stage, action, record.rates[peer.0])?;
        }
        Ok(log)
    }
}

/// Runs one seeded simulation to completion.
///
/// Stage order: chains step, peers draw actions, rates resolve, learners
/// update, metrics record. Initial capacity levels are sampled from the
/// stationary distribution; the trace is bit-reproducible for a fixed
/// config.
pub fn run_simulation(config: &SimulationConfig) -> Result<MetricsTrace, SimError> {
    config.validate()?;
    let n = config.n_peers;
    let h = config.n_helpers;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut chains = config.chains.clone();
    for chain in &mut chains {
        chain.sample_stationary(&mut rng)?;
    }

    let initial_actions: Vec<HelperId> = match &config.initial_assignment {
        InitialAssignment::UniformRandom => (0..n).map(|_| HelperId(rng.gen_range(0..h))).collect(),
        InitialAssignment::Fixed(action) => vec![*action; n],
        InitialAssignment::PerPeer(actions) => actions.clone(),
    };

    let mut learners: Vec<Box<dyn HelperSelector>> = Vec::with_capacity(n);
    for (i, &kind) in config.strategies.iter().enumerate() {
        let learner = build_learner(kind, &config.params, h, initial_actions[i])
            .map_err(|source| SimError::Learning { stage: 0, source })?;
        learners.push(learner);
    }
    let mut meters: Vec<InternalRegretMeter> = (0..n)
        .map(|_| InternalRegretMeter::new(h, config.params.epsilon))
        .collect();

    let mut records = Vec::with_capacity(config.horizon);
    let mut counterfactuals = vec![0.0f64; h];
    for stage in 0..config.horizon {
        for chain in &mut chains {
            chain.step(&mut rng);
        }
        let capacities = CapacityVector::new(chains.iter().map(|c| c.capacity()).collect())
            .map_err(|source| SimError::Game { stage, source })?;

        let choices: Vec<HelperId> = learners
            .iter_mut()
            .map(|learner| learner.next_action(&mut rng))
            .collect();
        let profile = AssignmentProfile::new(choices, h)
            .map_err(|source| SimError::Game { stage, source })?;

        let mut rates = Vec::with_capacity(n);
        for i in 0..n {
            let rate = realized_utility(&profile, &capacities, PeerId(i))
                .map_err(|source| SimError::Game { stage, source })?;
            rates.push(rate);
        }

        for i in 0..n {
            let peer = PeerId(i);
            for (k, slot) in counterfactuals.iter_mut().enumerate() {
                *slot = counterfactual_utility(&profile, &capacities, peer, HelperId(k))
                    .map_err(|source| SimError::Game { stage, source })?;
            }
            let played = profile.choice(peer).expect("peer is assigned");
            learners[i]
                .observe(&StageFeedback {
                    played,
                    realized: rates[i],
                    counterfactuals: &counterfactuals,
                })
                .map_err(|source| SimError::Learning { stage, source })?;
            meters[i].update(played, rates[i], &counterfactuals);

            let strategy = learners[i].strategy();
            let sum: f64 = strategy.as_slice().iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(SimError::Learning {
                    stage,
                    source: LearningError::Game(GameError::InvalidStrategy { sum }),
                });
            }
            if let Some(floor) = learners[i].exploration_floor() {
                for (k, &p) in strategy.as_slice().iter().enumerate() {
                    if p < floor - 1e-12 {
                        return Err(SimError::FloorViolation {
                            stage,
                            peer: i,
                            action: k,
                            prob: p,
                            floor,
                        });
                    }
                }
            }
        }

        let welfare = social_welfare(&profile, &capacities)
            .map_err(|source| SimError::Game { stage, source })?;
        let load = server_load(&rates, &config.demand);
        let regrets: Vec<f64> = meters.iter().map(|m| m.max_regret()).collect();
        records.push(StageRecord {
            stage,
            capacities: capacities.as_slice().to_vec(),
            profile,
            rates,
            regrets,
            welfare,
            server_load: load,
        });
    }

    Ok(MetricsTrace {
        n_peers: n,
        n_helpers: h,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_chains(h: usize) -> Vec<CapacityChain> {
        (0..h)
            .map(|_| {
                CapacityChain::slowly_varying(DEFAULT_LEVELS.to_vec(), DEFAULT_SELF_LOOP).unwrap()
            })
            .collect()
    }

    fn base_config(n: usize, h: usize, horizon: usize, kind: StrategyKind) -> SimulationConfig {
        SimulationConfig {
            n_peers: n,
            n_helpers: h,
            horizon,
            params: LearningParams::with_defaults(h, 900.0).unwrap(),
            chains: default_chains(h),
            demand: DemandModel::uniform(DEFAULT_DEMAND).unwrap(),
            strategies: vec![kind; n],
            initial_assignment: InitialAssignment::UniformRandom,
            seed: 7,
        }
    }

    #[test]
    fn server_load_examples() {
        let demand = DemandModel::uniform(350.0).unwrap();
        assert_eq!(server_load(&[400.0, 360.0, 350.0], &demand), 0.0);
        let rates = vec![280.0; 10];
        assert!((server_load(&rates, &demand) - 700.0).abs() < 1e-12);
        assert_eq!(server_load(&[0.0], &demand), 350.0);
    }

    #[test]
    fn aggregate_server_load_credits_surplus() {
        let demand = DemandModel::uniform(350.0).unwrap();
        // Per-peer: 100; aggregate: surplus 50 offsets, leaving 50.
        assert_eq!(server_load(&[250.0, 400.0], &demand), 100.0);
        assert_eq!(server_load_aggregate(&[250.0, 400.0], &demand), 50.0);
    }

    #[test]
    fn min_bandwidth_deficit_examples() {
        let mut config = base_config(10, 4, 1, StrategyKind::R2hs);
        assert_eq!(config.min_bandwidth_deficit(), 700.0);

        config.demand = DemandModel::uniform(200.0).unwrap();
        // 2000 demanded, 2800 minimum supply.
        assert_eq!(config.min_bandwidth_deficit(), 0.0);
    }

    #[test]
    fn single_stage_trace_matches_direct_evaluation() {
        let mut config = base_config(3, 2, 1, StrategyKind::BestResponse);
        config.initial_assignment =
            InitialAssignment::PerPeer(vec![HelperId(0), HelperId(1), HelperId(0)]);
        let trace = run_simulation(&config).unwrap();
        assert_eq!(trace.len(), 1);
        let record = &trace.records()[0];
        assert_eq!(record.profile.loads(), &[2, 1]);
        let caps = CapacityVector::new(record.capacities.clone()).unwrap();
        for i in 0..3 {
            let direct = realized_utility(&record.profile, &caps, PeerId(i)).unwrap();
            assert_eq!(record.rates[i], direct);
        }
        assert_eq!(
            record.welfare,
            social_welfare(&record.profile, &caps).unwrap()
        );
    }

    #[test]
    fn identical_seeds_give_identical_traces() {
        let config = base_config(5, 3, 400, StrategyKind::R2hs);
        let a = run_simulation(&config).unwrap();
        let b = run_simulation(&config).unwrap();
        assert_eq!(a, b);

        let mut other = config.clone();
        other.seed = 8;
        let c = run_simulation(&other).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rates_conserve_occupied_capacity() {
        let config = base_config(6, 3, 300, StrategyKind::Rths);
        let trace = run_simulation(&config).unwrap();
        for record in trace.records() {
            let occupied: f64 = record
                .profile
                .loads()
                .iter()
                .zip(&record.capacities)
                .filter(|(&load, _)| load >= 1)
                .map(|(_, &c)| c)
                .sum();
            assert_eq!(record.welfare, occupied);
            let per_peer: f64 = record.rates.iter().sum();
            assert!((per_peer - occupied).abs() <= 1e-9 * occupied.max(1.0));
        }
    }

    #[test]
    fn capacities_stay_in_the_level_set() {
        let config = base_config(4, 2, 500, StrategyKind::R2hs);
        let trace = run_simulation(&config).unwrap();
        for record in trace.records() {
            for &c in &record.capacities {
                assert!(DEFAULT_LEVELS.contains(&c));
            }
        }
    }

    #[test]
    fn learners_drive_internal_regret_down() {
        // Long memory and a responsive probability scale; see the scenario
        // files for the rationale behind these values.
        let mut config = base_config(10, 4, 6000, StrategyKind::R2hs);
        config.params = LearningParams::new(0.001, 0.05, 70.0, 4).unwrap();
        let trace = run_simulation(&config).unwrap();
        let mean_rate = trace.mean_rate(trace.len() / 5);
        let final_regret = trace.final_worst_regret();
        assert!(
            final_regret < 0.10 * mean_rate,
            "final worst regret {final_regret} vs mean rate {mean_rate}"
        );
    }

    #[test]
    fn config_validation_catches_shape_mismatches() {
        let mut config = base_config(3, 2, 10, StrategyKind::Rths);
        config.chains.pop();
        assert!(matches!(
            run_simulation(&config),
            Err(SimError::Config(_))
        ));

        let mut config = base_config(3, 2, 10, StrategyKind::Rths);
        config.params = LearningParams::with_defaults(4, 900.0).unwrap();
        assert!(matches!(
            run_simulation(&config),
            Err(SimError::Config(_))
        ));
    }

    #[test]
    fn trace_offers_history_and_distribution_views() {
        let config = base_config(3, 2, 50, StrategyKind::R2hs);
        let trace = run_simulation(&config).unwrap();
        let log = trace.history_for(PeerId(1)).unwrap();
        assert_eq!(log.len(), 50);
        assert!(log.entries().windows(2).all(|w| w[0].stage < w[1].stage));

        let dist = trace.empirical_distribution(10).unwrap();
        assert_eq!(dist.total(), 40);
        assert_eq!(dist.shape(), Some((3, 2)));
    }
}
