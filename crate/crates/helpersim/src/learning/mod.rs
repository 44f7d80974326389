//! Learning strategies for repeated helper selection.
//!
//! Two regret-driven strategies share the same play-probability rule and
//! differ in how they estimate regret:
//!
//! * [`rths::RthsLearner`] tracks exponentially recency-weighted averages of
//!   exact counterfactual utilities (full-information feedback, available in
//!   simulation).
//! * [`r2hs::R2hsLearner`] sees only its own realized utility and builds
//!   proxy regrets from importance-weighted utilities via a recursive
//!   accumulator matrix.
//!
//! [`best_response::BestResponseLearner`] is the deliberately unstable
//! baseline: it jumps to the myopically best helper every stage, which on
//! symmetric instances makes all peers swap in lockstep forever.

use rand::{Rng, RngCore};
use thiserror::Error;

use crate::game::{GameError, HelperId, MixedStrategy};

pub mod best_response;
pub mod r2hs;
pub mod rths;

/// Default constant step size ε.
pub const DEFAULT_EPSILON: f64 = 0.05;
/// Default exploration weight δ.
pub const DEFAULT_DELTA: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearningError {
    #[error("learning parameter {name} out of range: {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("regret learning needs at least two actions, got {0}")]
    TooFewActions(usize),
    #[error("params are sized for {params_m} actions but the learner has {n_helpers}")]
    ActionCountMismatch { params_m: usize, n_helpers: usize },
    #[error("stage action h{action} was played with zero probability; cannot importance-weight")]
    ZeroPlayProbability { action: usize },
    #[error("feedback carries {got} counterfactual entries, expected {expected}")]
    FeedbackShape { got: usize, expected: usize },
    #[error("unknown strategy name {0:?} (expected rths, r2hs or best-response)")]
    UnknownStrategy(String),
    #[error(transparent)]
    Game(#[from] GameError),
}

/// Tunable constants of the regret-driven strategies.
///
/// `m` is the action count (the number of helpers); the probability update
/// treats it as constant across stages.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningParams {
    /// Constant step size ε in (0,1) of the recency-weighted averages.
    pub epsilon: f64,
    /// Exploration weight δ in (0,1); every action keeps probability ≥ δ/m.
    pub delta: f64,
    /// Normalization constant μ > 0 scaling regret into probability.
    pub mu: f64,
    /// Action count, ≥ 2.
    pub m: usize,
}

impl LearningParams {
    pub fn new(epsilon: f64, delta: f64, mu: f64, m: usize) -> Result<Self, LearningError> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(LearningError::InvalidParameter {
                name: "epsilon",
                value: epsilon,
            });
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(LearningError::InvalidParameter {
                name: "delta",
                value: delta,
            });
        }
        if !(mu.is_finite() && mu > 0.0) {
            return Err(LearningError::InvalidParameter { name: "mu", value: mu });
        }
        if m < 2 {
            return Err(LearningError::TooFewActions(m));
        }
        Ok(Self {
            epsilon,
            delta,
            mu,
            m,
        })
    }

    /// Defaults for a game with `m` helpers whose largest capacity level is
    /// `max_capacity`: ε = δ = 0.05 and μ = 2·m·C_max, large enough that the
    /// probability clamp rarely binds at realistic regret magnitudes.
    pub fn with_defaults(m: usize, max_capacity: f64) -> Result<Self, LearningError> {
        Self::new(
            DEFAULT_EPSILON,
            DEFAULT_DELTA,
            2.0 * m as f64 * max_capacity,
            m,
        )
    }

    /// Minimum probability any action keeps after an update.
    pub fn exploration_floor(&self) -> f64 {
        self.delta / self.m as f64
    }
}

/// Dense H×H matrix over ordered action pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, row: HelperId, col: HelperId) -> f64 {
        self.data[row.0 * self.n + col.0]
    }

    pub fn set(&mut self, row: HelperId, col: HelperId, value: f64) {
        self.data[row.0 * self.n + col.0] = value;
    }

    pub fn add(&mut self, row: HelperId, col: HelperId, delta: f64) {
        self.data[row.0 * self.n + col.0] += delta;
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn max_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Mutable learner state shared by the regret strategies: the regret matrix
/// `Q`, the proxy accumulator `T` (bandit variant only), the current mixed
/// strategy and the most recent action.
#[derive(Clone, Debug, PartialEq)]
pub struct RegretState {
    q: SquareMatrix,
    t: SquareMatrix,
    p: MixedStrategy,
    last_action: HelperId,
}

impl RegretState {
    /// Fresh state: zero regrets, uniform strategy.
    pub fn new(n_helpers: usize, initial_action: HelperId) -> Self {
        Self {
            q: SquareMatrix::zeros(n_helpers),
            t: SquareMatrix::zeros(n_helpers),
            p: MixedStrategy::uniform(n_helpers),
            last_action: initial_action,
        }
    }

    pub fn n_helpers(&self) -> usize {
        self.p.len()
    }

    pub fn regret(&self, row: HelperId, col: HelperId) -> f64 {
        self.q.get(row, col)
    }

    pub fn regret_matrix(&self) -> &SquareMatrix {
        &self.q
    }

    pub fn proxy_matrix(&self) -> &SquareMatrix {
        &self.t
    }

    pub fn strategy(&self) -> &MixedStrategy {
        &self.p
    }

    pub fn last_action(&self) -> HelperId {
        self.last_action
    }

    /// Largest positive regret entry, 0 when none.
    pub fn max_regret(&self) -> f64 {
        self.q.max_entry().max(0.0)
    }

    pub(crate) fn q_mut(&mut self) -> &mut SquareMatrix {
        &mut self.q
    }

    pub(crate) fn t_mut(&mut self) -> &mut SquareMatrix {
        &mut self.t
    }

    pub(crate) fn set_strategy(&mut self, p: MixedStrategy) {
        debug_assert_eq!(p.len(), self.n_helpers());
        self.p = p;
    }

    pub(crate) fn set_last_action(&mut self, action: HelperId) {
        self.last_action = action;
    }
}

/// Play-probability update shared by both regret strategies:
///
/// ```text
/// p(k) = (1 − δ)·min{ Q(j,k)/μ, 1/(m−1) } + δ/m     for k ≠ j
/// p(j) = 1 − Σ_{k≠j} p(k)
/// ```
///
/// with `j` the last played action. The clamp keeps the off-`j` mass at most
/// `1 − δ/m`, so the result is always a valid distribution and every action
/// retains at least `δ/m` probability.
pub fn update_play_probabilities(
    state: &RegretState,
    params: &LearningParams,
) -> Result<MixedStrategy, LearningError> {
    let n = state.n_helpers();
    let j = state.last_action;
    let m = params.m as f64;
    let cap = 1.0 / (m - 1.0);
    let mut probs = vec![0.0; n];
    let mut off_mass = 0.0;
    for (k, slot) in probs.iter_mut().enumerate() {
        if k == j.0 {
            continue;
        }
        let q = state.q.get(j, HelperId(k));
        let p = (1.0 - params.delta) * (q / params.mu).min(cap) + params.delta / m;
        *slot = p;
        off_mass += p;
    }
    probs[j.0] = 1.0 - off_mass;
    MixedStrategy::new(probs).map_err(LearningError::from)
}

/// Draws an action from a mixed strategy by inverse-CDF sampling.
pub fn sample_action<R: Rng + ?Sized>(p: &MixedStrategy, rng: &mut R) -> HelperId {
    let x: f64 = rng.gen();
    let mut cumulative = 0.0;
    for (k, &pk) in p.as_slice().iter().enumerate() {
        cumulative += pk;
        if x < cumulative {
            return HelperId(k);
        }
    }
    // Rounding left a sliver above the accumulated mass.
    HelperId(p.len() - 1)
}

/// What a peer observes at the end of one stage.
///
/// `counterfactuals[k]` is the exact utility the peer would have received
/// had it alone played `k` this stage. Bandit strategies ignore it and use
/// only `realized`.
#[derive(Clone, Debug)]
pub struct StageFeedback<'a> {
    pub played: HelperId,
    pub realized: f64,
    pub counterfactuals: &'a [f64],
}

/// A per-peer decision-maker driven by the simulation loop: asked for an
/// action at the start of each stage, shown the outcome at the end.
pub trait HelperSelector {
    /// The mixed strategy the next action is drawn from (a point mass for
    /// deterministic strategies).
    fn strategy(&self) -> &MixedStrategy;

    /// Picks this stage's action, advancing the generator if the strategy
    /// is randomized.
    fn next_action(&mut self, rng: &mut dyn RngCore) -> HelperId;

    /// Digests the stage outcome, updating regrets and play probabilities.
    fn observe(&mut self, feedback: &StageFeedback<'_>) -> Result<(), LearningError>;

    /// Largest positive regret entry the learner currently holds, when it
    /// maintains one.
    fn max_regret(&self) -> f64 {
        0.0
    }

    /// Probability floor every action is guaranteed after the first update,
    /// when the strategy maintains one.
    fn exploration_floor(&self) -> Option<f64> {
        None
    }
}

/// Which decision rule a peer runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StrategyKind {
    Rths,
    R2hs,
    BestResponse,
}

impl StrategyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::Rths => "rths",
            StrategyKind::R2hs => "r2hs",
            StrategyKind::BestResponse => "best-response",
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = LearningError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rths" => Ok(StrategyKind::Rths),
            "r2hs" => Ok(StrategyKind::R2hs),
            "best-response" | "best_response" => Ok(StrategyKind::BestResponse),
            other => Err(LearningError::UnknownStrategy(other.to_string())),
        }
    }
}

/// Builds a boxed learner of the requested kind.
pub fn build_learner(
    kind: StrategyKind,
    params: &LearningParams,
    n_helpers: usize,
    initial_action: HelperId,
) -> Result<Box<dyn HelperSelector>, LearningError> {
    Ok(match kind {
        StrategyKind::Rths => Box::new(rths::RthsLearner::new(*params, n_helpers, initial_action)?),
        StrategyKind::R2hs => Box::new(r2hs::R2hsLearner::new(*params, n_helpers, initial_action)?),
        StrategyKind::BestResponse => Box::new(best_response::BestResponseLearner::new(
            n_helpers,
            initial_action,
        )?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state_with_row(n: usize, j: usize, row: &[(usize, f64)]) -> RegretState {
        let mut state = RegretState::new(n, HelperId(j));
        for &(k, v) in row {
            state.q_mut().set(HelperId(j), HelperId(k), v);
        }
        state
    }

    #[test]
    fn zero_regret_gives_pure_exploration_probabilities() {
        let params = LearningParams::new(0.05, 0.1, 100.0, 4).unwrap();
        let state = state_with_row(4, 0, &[]);
        let p = update_play_probabilities(&state, &params).unwrap();
        for k in 1..4 {
            assert!((p.prob(HelperId(k)) - 0.025).abs() < 1e-12);
        }
        assert!((p.prob(HelperId(0)) - 0.925).abs() < 1e-12);
    }

    #[test]
    fn saturated_regrets_clamp_at_uniform_off_mass() {
        let params = LearningParams::new(0.05, 0.1, 100.0, 4).unwrap();
        // Q/μ ≥ 1/(m−1) everywhere off-diagonal.
        let state = state_with_row(4, 0, &[(1, 1e6), (2, 1e6), (3, 1e6)]);
        let p = update_play_probabilities(&state, &params).unwrap();
        for k in 1..4 {
            assert!((p.prob(HelperId(k)) - 0.325).abs() < 1e-12);
        }
        assert!((p.prob(HelperId(0)) - 0.025).abs() < 1e-12);
    }

    #[test]
    fn two_action_update_matches_hand_arithmetic() {
        // m=2, δ=0.2, Q(j,k)/μ = 0.4.
        let params = LearningParams::new(0.05, 0.2, 10.0, 2).unwrap();
        let state = state_with_row(2, 0, &[(1, 4.0)]);
        let p = update_play_probabilities(&state, &params).unwrap();
        assert!((p.prob(HelperId(1)) - 0.42).abs() < 1e-12);
        assert!((p.prob(HelperId(0)) - 0.58).abs() < 1e-12);
    }

    #[test]
    fn point_mass_always_samples_its_action() {
        let p = MixedStrategy::point_mass(HelperId(2), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            assert_eq!(sample_action(&p, &mut rng), HelperId(2));
        }
    }

    #[test]
    fn uniform_sampling_frequencies_converge() {
        let p = MixedStrategy::uniform(4);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut counts = [0u64; 4];
        let draws = 1_000_000;
        for _ in 0..draws {
            counts[sample_action(&p, &mut rng).0] += 1;
        }
        for &c in &counts {
            let freq = c as f64 / draws as f64;
            assert!(
                (freq - 0.25).abs() < 0.005,
                "frequency {freq} too far from 0.25"
            );
        }
    }

    #[test]
    fn sampling_is_deterministic_for_a_fixed_seed() {
        let p = MixedStrategy::new(vec![0.2, 0.3, 0.5]).unwrap();
        let draw = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| sample_action(&p, &mut rng).0).collect::<Vec<_>>()
        };
        assert_eq!(draw(99), draw(99));
        assert_ne!(draw(99), draw(100));
    }

    #[test]
    fn strategy_kind_round_trips_through_names() {
        for kind in [StrategyKind::Rths, StrategyKind::R2hs, StrategyKind::BestResponse] {
            assert_eq!(kind.name().parse::<StrategyKind>().unwrap(), kind);
        }
        assert!("regret-matching".parse::<StrategyKind>().is_err());
    }

    #[test]
    fn params_reject_out_of_range_values() {
        assert!(LearningParams::new(0.0, 0.1, 1.0, 4).is_err());
        assert!(LearningParams::new(0.1, 1.0, 1.0, 4).is_err());
        assert!(LearningParams::new(0.1, 0.1, 0.0, 4).is_err());
        assert!(matches!(
            LearningParams::new(0.1, 0.1, 1.0, 1),
            Err(LearningError::TooFewActions(1))
        ));
    }

    #[test]
    fn learners_reject_params_sized_for_a_different_game() {
        let params = LearningParams::new(0.05, 0.1, 100.0, 4).unwrap();
        for kind in [StrategyKind::Rths, StrategyKind::R2hs] {
            assert!(matches!(
                build_learner(kind, &params, 3, HelperId(0)),
                Err(LearningError::ActionCountMismatch {
                    params_m: 4,
                    n_helpers: 3
                })
            ));
        }
    }

    proptest! {
        #[test]
        fn probabilities_respect_simplex_and_exploration_floor(
            regrets in proptest::collection::vec(0.0f64..5000.0, 16),
            j in 0usize..4,
            delta in 0.01f64..0.9,
            mu in 10.0f64..10000.0,
        ) {
            let params = LearningParams::new(0.05, delta, mu, 4).unwrap();
            let mut state = RegretState::new(4, HelperId(j));
            for row in 0..4 {
                for col in 0..4 {
                    if row != col {
                        state.q_mut().set(HelperId(row), HelperId(col), regrets[row * 4 + col]);
                    }
                }
            }
            let p = update_play_probabilities(&state, &params).unwrap();
            let floor = params.exploration_floor();
            let sum: f64 = p.as_slice().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9);
            for k in 0..4 {
                prop_assert!(p.prob(HelperId(k)) >= floor - 1e-12);
            }
        }

        #[test]
        fn off_action_probability_is_monotone_in_regret(
            base in 0.0f64..50.0,
            bump in 0.1f64..50.0,
        ) {
            // Stay below the clamp: Q/μ < 1/(m−1).
            let params = LearningParams::new(0.05, 0.1, 1000.0, 4).unwrap();
            let lo = state_with_row(4, 0, &[(1, base), (2, 30.0), (3, 10.0)]);
            let hi = state_with_row(4, 0, &[(1, base + bump), (2, 30.0), (3, 10.0)]);
            let p_lo = update_play_probabilities(&lo, &params).unwrap();
            let p_hi = update_play_probabilities(&hi, &params).unwrap();
            prop_assert!(p_hi.prob(HelperId(1)) > p_lo.prob(HelperId(1)));

            // In the clamp-free region the most-regretted action is the
            // most likely alternative.
            let argmax_q = if base + bump > 30.0 { 1 } else { 2 };
            let argmax_p = (1..4)
                .max_by(|&a, &b| {
                    p_hi.prob(HelperId(a))
                        .partial_cmp(&p_hi.prob(HelperId(b)))
                        .unwrap()
                })
                .unwrap();
            prop_assert_eq!(argmax_p, argmax_q);
        }
    }
}
