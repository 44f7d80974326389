//! Scenario files: the TOML schema driving the runner.
//!
//! A scenario mirrors `SimulationConfig` plus run bookkeeping (replications,
//! output directory, metric selection, the CE-check toggle). Unknown keys
//! are rejected so typos fail loudly instead of silently running defaults.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use helpersim::env::{
    CapacityChain, DemandModel, InitialAssignment, SimulationConfig, DEFAULT_DEMAND,
    DEFAULT_LEVELS, DEFAULT_SELF_LOOP,
};
use helpersim::game::HelperId;
use helpersim::learning::{LearningParams, StrategyKind, DEFAULT_DELTA, DEFAULT_EPSILON};

use crate::CliError;

/// Metric files the runner can emit.
pub const METRIC_FILES: [&str; 5] = ["regret", "welfare", "loads", "rates", "server"];

fn default_replications() -> usize {
    1
}

fn default_strategy() -> String {
    "r2hs".to_string()
}

fn default_burn_in() -> f64 {
    0.2
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_levels() -> Vec<f64> {
    DEFAULT_LEVELS.to_vec()
}

fn default_self_loop() -> f64 {
    DEFAULT_SELF_LOOP
}

fn default_demand_rate() -> f64 {
    DEFAULT_DEMAND
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

fn default_ce_tolerance() -> f64 {
    0.01
}

fn default_metric_files() -> Vec<String> {
    METRIC_FILES.iter().map(|s| s.to_string()).collect()
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningSection {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Defaults to 2·H·C_max when absent.
    #[serde(default)]
    pub mu: Option<f64>,
}

impl Default for LearningSection {
    fn default() -> Self {
        Self {
            epsilon: default_epsilon(),
            delta: default_delta(),
            mu: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacitySection {
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    #[serde(default = "default_self_loop")]
    pub self_loop: f64,
    /// Full row-stochastic matrix; overrides `self_loop` when present.
    #[serde(default)]
    pub transition: Option<Vec<Vec<f64>>>,
}

impl Default for CapacitySection {
    fn default() -> Self {
        Self {
            levels: default_levels(),
            self_loop: default_self_loop(),
            transition: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandSection {
    #[serde(default = "default_demand_rate")]
    pub rate: f64,
    /// Per-peer demands; overrides `rate` when present.
    #[serde(default)]
    pub per_peer: Option<Vec<f64>>,
}

impl Default for DemandSection {
    fn default() -> Self {
        Self {
            rate: default_demand_rate(),
            per_peer: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CeSection {
    #[serde(default)]
    pub enabled: bool,
    /// CE tolerance as a fraction of the post-burn-in mean per-peer rate.
    #[serde(default = "default_ce_tolerance")]
    pub tolerance_fraction: f64,
}

impl Default for CeSection {
    fn default() -> Self {
        Self {
            enabled: false,
            tolerance_fraction: default_ce_tolerance(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    #[serde(default = "default_metric_files")]
    pub files: Vec<String>,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            files: default_metric_files(),
        }
    }
}

/// Per-helper capacity process override.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HelperOverride {
    pub helper: usize,
    #[serde(default)]
    pub levels: Option<Vec<f64>>,
    #[serde(default)]
    pub self_loop: Option<f64>,
    #[serde(default)]
    pub transition: Option<Vec<Vec<f64>>>,
}

/// Parsed scenario file.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub peers: usize,
    pub helpers: usize,
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// Explicit seeds; overrides `seed`/`replications` when present.
    #[serde(default)]
    pub seed_list: Option<Vec<u64>>,
    /// Strategy applied to every peer: rths | r2hs | best-response.
    #[serde(default = "default_strategy")]
    pub strategy: String,
    /// Per-peer strategies; overrides `strategy` when present.
    #[serde(default)]
    pub strategies: Option<Vec<String>>,
    /// Strategies for the `compare` subcommand when no flag is given.
    #[serde(default)]
    pub compare_strategies: Option<Vec<String>>,
    #[serde(default = "default_burn_in")]
    pub burn_in_fraction: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Start every peer on this helper instead of a uniform draw.
    #[serde(default)]
    pub initial_helper: Option<usize>,
    /// Explicit per-peer initial helpers; overrides `initial_helper`.
    #[serde(default)]
    pub initial_helpers: Option<Vec<usize>>,
    #[serde(default)]
    pub learning: LearningSection,
    #[serde(default)]
    pub capacity: CapacitySection,
    #[serde(default)]
    pub demand: DemandSection,
    #[serde(default)]
    pub ce_check: CeSection,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub helper_override: Vec<HelperOverride>,
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Io(std::io::Error::new(
                e.kind(),
                format!("cannot read scenario {}: {e}", path.display()),
            ))
        })?;
        let scenario: ScenarioFile = toml::from_str(&text)
            .map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_str_validated(text: &str) -> Result<Self, CliError> {
        let scenario: ScenarioFile =
            toml::from_str(text).map_err(|e| CliError::Schema(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.peers < 1 || self.helpers < 1 {
            return Err(CliError::Schema(
                "peers and helpers must be at least 1".into(),
            ));
        }
        if self.horizon < 1 {
            return Err(CliError::Schema("horizon must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(CliError::Schema(format!(
                "burn_in_fraction must be in [0,1), got {}",
                self.burn_in_fraction
            )));
        }
        if self.seed_list.as_ref().is_some_and(|s| s.is_empty()) {
            return Err(CliError::Schema("seed_list must not be empty".into()));
        }
        if self.replications < 1 && self.seed_list.is_none() {
            return Err(CliError::Schema("replications must be at least 1".into()));
        }
        if let Some(strategies) = &self.strategies {
            if strategies.len() != self.peers {
                return Err(CliError::Schema(format!(
                    "strategies lists {} entries for {} peers",
                    strategies.len(),
                    self.peers
                )));
            }
        }
        if let Some(rates) = &self.demand.per_peer {
            if rates.len() != self.peers {
                return Err(CliError::Schema(format!(
                    "demand.per_peer lists {} entries for {} peers",
                    rates.len(),
                    self.peers
                )));
            }
        }
        if let Some(h) = self.initial_helper {
            if h >= self.helpers {
                return Err(CliError::Schema(format!(
                    "initial_helper {h} out of range ({} helpers)",
                    self.helpers
                )));
            }
        }
        if let Some(initials) = &self.initial_helpers {
            if initials.len() != self.peers || initials.iter().any(|&h| h >= self.helpers) {
                return Err(CliError::Schema(format!(
                    "initial_helpers must list one valid helper per peer ({} peers, {} helpers)",
                    self.peers, self.helpers
                )));
            }
        }
        for name in &self.metrics.files {
            if !METRIC_FILES.contains(&name.as_str()) {
                return Err(CliError::Schema(format!(
                    "unknown metrics file {name:?}; expected one of {METRIC_FILES:?}"
                )));
            }
        }
        for over in &self.helper_override {
            if over.helper >= self.helpers {
                return Err(CliError::Schema(format!(
                    "helper_override.helper {} out of range ({} helpers)",
                    over.helper, self.helpers
                )));
            }
        }
        self.strategy_kinds()?;
        Ok(())
    }

    /// Seeds of the replications, in run order.
    pub fn seeds(&self) -> Vec<u64> {
        match &self.seed_list {
            Some(list) => list.clone(),
            None => (0..self.replications as u64)
                .map(|k| self.seed.wrapping_add(k))
                .collect(),
        }
    }

    /// First stage included in post-burn-in statistics.
    pub fn burn_in_stage(&self) -> usize {
        (self.horizon as f64 * self.burn_in_fraction).floor() as usize
    }

    pub fn strategy_kinds(&self) -> Result<Vec<StrategyKind>, CliError> {
        let parse = |name: &str| {
            name.parse::<StrategyKind>()
                .map_err(|e| CliError::Schema(e.to_string()))
        };
        match &self.strategies {
            Some(names) => names.iter().map(|n| parse(n)).collect(),
            None => Ok(vec![parse(&self.strategy)?; self.peers]),
        }
    }

    pub fn chains(&self) -> Result<Vec<CapacityChain>, CliError> {
        let base = build_chain(
            &self.capacity.levels,
            self.capacity.self_loop,
            self.capacity.transition.as_ref(),
        )?;
        let mut chains = vec![base; self.helpers];
        for over in &self.helper_override {
            let levels = over.levels.as_deref().unwrap_or(&self.capacity.levels);
            let self_loop = over.self_loop.unwrap_or(self.capacity.self_loop);
            let transition = over.transition.as_ref().or(self.capacity.transition.as_ref());
            chains[over.helper] = build_chain(levels, self_loop, transition)?;
        }
        Ok(chains)
    }

    pub fn learning_params(&self) -> Result<LearningParams, CliError> {
        let chains = self.chains()?;
        let max_capacity = chains
            .iter()
            .map(|c| c.max_capacity())
            .fold(f64::NEG_INFINITY, f64::max);
        let mu = self
            .learning
            .mu
            .unwrap_or(2.0 * self.helpers as f64 * max_capacity);
        LearningParams::new(self.learning.epsilon, self.learning.delta, mu, self.helpers)
            .map_err(|e| CliError::Schema(e.to_string()))
    }

    pub fn demand_model(&self) -> Result<DemandModel, CliError> {
        match &self.demand.per_peer {
            Some(rates) => DemandModel::per_peer(rates.clone()),
            None => DemandModel::uniform(self.demand.rate),
        }
        .map_err(|e| CliError::Config(e.to_string()))
    }

    /// Builds the full simulation config for one replication. When
    /// `strategy_override` is given it replaces every peer's strategy (used
    /// by `compare`).
    pub fn to_sim_config(
        &self,
        seed: u64,
        strategy_override: Option<StrategyKind>,
    ) -> Result<SimulationConfig, CliError> {
        let strategies = match strategy_override {
            Some(kind) => vec![kind; self.peers],
            None => self.strategy_kinds()?,
        };
        let initial_assignment = match (&self.initial_helpers, self.initial_helper) {
            (Some(list), _) => {
                InitialAssignment::PerPeer(list.iter().map(|&h| HelperId(h)).collect())
            }
            (None, Some(h)) => InitialAssignment::Fixed(HelperId(h)),
            (None, None) => InitialAssignment::UniformRandom,
        };
        let config = SimulationConfig {
            n_peers: self.peers,
            n_helpers: self.helpers,
            horizon: self.horizon,
            params: self.learning_params()?,
            chains: self.chains()?,
            demand: self.demand_model()?,
            strategies,
            initial_assignment,
            seed,
        };
        config
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(config)
    }
}

fn build_chain(
    levels: &[f64],
    self_loop: f64,
    transition: Option<&Vec<Vec<f64>>>,
) -> Result<CapacityChain, CliError> {
    let chain = match transition {
        Some(matrix) => CapacityChain::new(levels.to_vec(), matrix.clone(), 0),
        None if levels.len() == 1 => CapacityChain::constant(levels[0]),
        None => CapacityChain::slowly_varying(levels.to_vec(), self_loop),
    };
    chain.map_err(|e| CliError::Schema(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "peers = 3\nhelpers = 2\nhorizon = 100\n";

    #[test]
    fn minimal_scenario_uses_documented_defaults() {
        let s = ScenarioFile::from_str_validated(MINIMAL).unwrap();
        assert_eq!(s.seeds(), vec![0]);
        assert_eq!(s.burn_in_stage(), 20);
        assert_eq!(s.strategy_kinds().unwrap(), vec![StrategyKind::R2hs; 3]);
        let chains = s.chains().unwrap();
        assert_eq!(chains.len(), 2);
        assert_eq!(chains[0].levels(), &[700.0, 800.0, 900.0]);
        let params = s.learning_params().unwrap();
        assert_eq!(params.mu, 2.0 * 2.0 * 900.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ScenarioFile::from_str_validated("peers = 3\nhelpers = 2\nhorizon = 10\nhorizont = 5\n")
            .unwrap_err();
        assert!(matches!(err, CliError::Schema(_)), "{err}");

        let err = ScenarioFile::from_str_validated(
            "peers = 3\nhelpers = 2\nhorizon = 10\n[learning]\nepsilonn = 0.1\n",
        )
        .unwrap_err();
        assert!(matches!(err, CliError::Schema(_)), "{err}");
    }

    #[test]
    fn strategy_lists_must_match_peer_count() {
        let err = ScenarioFile::from_str_validated(
            "peers = 3\nhelpers = 2\nhorizon = 10\nstrategies = [\"rths\"]\n",
        )
        .unwrap_err();
        assert!(matches!(err, CliError::Schema(_)));
    }

    #[test]
    fn helper_overrides_replace_individual_chains() {
        let text = "peers = 2\nhelpers = 2\nhorizon = 10\n\
                    [[helper_override]]\nhelper = 1\nlevels = [500.0]\n";
        let s = ScenarioFile::from_str_validated(text).unwrap();
        let chains = s.chains().unwrap();
        assert_eq!(chains[0].levels().len(), 3);
        assert_eq!(chains[1].levels(), &[500.0]);
    }

    #[test]
    fn explicit_transition_matrix_is_honored() {
        let text = "peers = 2\nhelpers = 2\nhorizon = 10\n\
                    [capacity]\nlevels = [700.0, 900.0]\ntransition = [[0.9, 0.1], [0.3, 0.7]]\n";
        let s = ScenarioFile::from_str_validated(text).unwrap();
        let chains = s.chains().unwrap();
        let pi = chains[0].stationary_distribution().unwrap();
        assert!((pi[0] - 0.75).abs() < 1e-10);
    }

    #[test]
    fn seed_list_wins_over_replication_count() {
        let text = "peers = 2\nhelpers = 2\nhorizon = 10\nreplications = 5\nseed_list = [7, 9]\n";
        let s = ScenarioFile::from_str_validated(text).unwrap();
        assert_eq!(s.seeds(), vec![7, 9]);
    }

    #[test]
    fn bad_metric_names_are_rejected() {
        let err = ScenarioFile::from_str_validated(
            "peers = 2\nhelpers = 2\nhorizon = 10\n[metrics]\nfiles = [\"regrets\"]\n",
        )
        .unwrap_err();
        assert!(matches!(err, CliError::Schema(_)));
    }
}
