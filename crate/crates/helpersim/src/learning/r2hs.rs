//! Regret tracking from bandit feedback.
//!
//! The learner never sees counterfactual utilities. Instead it maintains a
//! proxy accumulator matrix `T` over ordered action pairs: whenever action
//! `x` is played with probability `p(x)` and yields utility `u`, column `x`
//! receives `p(j)·u/p(x)` in every row `j`, and the whole matrix decays by
//! `(1−ε)`. The importance ratio makes stages where `x` was actually played
//! stand in for the stages where `j` was played, so
//! `ε·(T(j,k) − T(j,j))⁺` estimates the recency-weighted gain of having
//! played `k` whenever `j` was played — using realized utilities only.
//!
//! [`direct_proxy_regret`] evaluates the same quantity term-by-term from a
//! recorded history; it shares no state with the recursion and serves as an
//! independent cross-check.

use rand::RngCore;

use crate::game::{HelperId, MixedStrategy};

use super::{
    sample_action, update_play_probabilities, HelperSelector, LearningError, LearningParams,
    RegretState, SquareMatrix, StageFeedback,
};

/// How the proxy accumulator evolves between stages.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TUpdateRule {
    /// Decay by `(1−ε)` before adding the stage increment, so that `ε·T`
    /// carries the recency weights `ε(1−ε)^{n−τ}`. This is the form whose
    /// regrets match the term-by-term sums; use it.
    #[default]
    Decayed,
    /// Plain cumulative sum without decay, kept for comparison; its regrets
    /// drift away from the recency-weighted sums over long runs.
    Cumulative,
}

/// Applies one stage to the proxy matrix: optional decay, then the
/// importance-weighted increment `T(j, played) += p(j)·u / p(played)`.
///
/// `strategy` must be the distribution the action was drawn from this
/// stage; a zero play probability cannot be importance-weighted.
pub fn update_proxy_matrix(
    t: &mut SquareMatrix,
    played: HelperId,
    utility: f64,
    strategy: &MixedStrategy,
    epsilon: f64,
    rule: TUpdateRule,
) -> Result<(), LearningError> {
    let p_played = strategy.prob(played);
    if p_played <= 0.0 {
        return Err(LearningError::ZeroPlayProbability { action: played.0 });
    }
    if rule == TUpdateRule::Decayed {
        t.scale(1.0 - epsilon);
    }
    let scale = utility / p_played;
    for j in 0..t.size() {
        t.add(HelperId(j), played, strategy.prob(HelperId(j)) * scale);
    }
    Ok(())
}

/// Regret row of the played action derived from the proxy matrix:
/// `Q(played, k) = ε·(T(played, k) − T(played, played))⁺`.
pub fn regret_row_from_proxy(t: &SquareMatrix, played: HelperId, epsilon: f64) -> Vec<f64> {
    let own = t.get(played, played);
    (0..t.size())
        .map(|k| {
            if k == played.0 {
                0.0
            } else {
                epsilon * (t.get(played, HelperId(k)) - own).max(0.0)
            }
        })
        .collect()
}

/// Full regret matrix derived from the proxy matrix, row by row.
pub fn regret_from_proxy(t: &SquareMatrix, epsilon: f64) -> SquareMatrix {
    let mut q = SquareMatrix::zeros(t.size());
    for j in 0..t.size() {
        let row = regret_row_from_proxy(t, HelperId(j), epsilon);
        for (k, &value) in row.iter().enumerate() {
            q.set(HelperId(j), HelperId(k), value);
        }
    }
    q
}

/// One stage of a recorded trajectory, as consumed by the direct estimator.
#[derive(Clone, Debug)]
pub struct PlayRecord {
    pub action: HelperId,
    pub utility: f64,
    /// Distribution the action was drawn from at that stage.
    pub strategy: MixedStrategy,
}

/// Term-by-term evaluation of the recency-weighted proxy regrets over a
/// full history:
///
/// ```text
/// Q(j,k) = [ Σ_{τ: a^τ=k} ε(1−ε)^{n−τ}·(p^τ(j)/p^τ(k))·u^τ
///          − Σ_{τ: a^τ=j} ε(1−ε)^{n−τ}·u^τ ]⁺
/// ```
///
/// Quadratic in history length per call and deliberately free of the
/// recursive accumulator; exists to cross-check it.
pub fn direct_proxy_regret(
    history: &[PlayRecord],
    epsilon: f64,
    n_helpers: usize,
) -> SquareMatrix {
    let mut q = SquareMatrix::zeros(n_helpers);
    for j in 0..n_helpers {
        for k in 0..n_helpers {
            if j == k {
                continue;
            }
            let mut gain = 0.0;
            let mut own = 0.0;
            let mut weight = epsilon;
            for record in history.iter().rev() {
                if record.action.0 == k {
                    let ratio =
                        record.strategy.prob(HelperId(j)) / record.strategy.prob(HelperId(k));
                    gain += weight * ratio * record.utility;
                }
                if record.action.0 == j {
                    own += weight * record.utility;
                }
                weight *= 1.0 - epsilon;
            }
            q.set(HelperId(j), HelperId(k), (gain - own).max(0.0));
        }
    }
    q
}

/// Bandit-feedback regret-tracking learner.
pub struct R2hsLearner {
    params: LearningParams,
    state: RegretState,
    rule: TUpdateRule,
    started: bool,
}

impl R2hsLearner {
    pub fn new(
        params: LearningParams,
        n_helpers: usize,
        initial_action: HelperId,
    ) -> Result<Self, LearningError> {
        Self::with_rule(params, n_helpers, initial_action, TUpdateRule::Decayed)
    }

    pub fn with_rule(
        params: LearningParams,
        n_helpers: usize,
        initial_action: HelperId,
        rule: TUpdateRule,
    ) -> Result<Self, LearningError> {
        if n_helpers < 2 {
            return Err(LearningError::TooFewActions(n_helpers));
        }
        if params.m != n_helpers {
            return Err(LearningError::ActionCountMismatch {
                params_m: params.m,
                n_helpers,
            });
        }
        Ok(Self {
            params,
            state: RegretState::new(n_helpers, initial_action),
            rule,
            started: false,
        })
    }

    pub fn state(&self) -> &RegretState {
        &self.state
    }
}

impl HelperSelector for R2hsLearner {
    fn strategy(&self) -> &MixedStrategy {
        self.state.strategy()
    }

    fn next_action(&mut self, rng: &mut dyn RngCore) -> HelperId {
        if !self.started {
            self.started = true;
            return self.state.last_action();
        }
        let action = sample_action(self.state.strategy(), rng);
        self.state.set_last_action(action);
        action
    }

    fn observe(&mut self, feedback: &StageFeedback<'_>) -> Result<(), LearningError> {
        debug_assert_eq!(feedback.played, self.state.last_action());
        let strategy = self.state.strategy().clone();
        update_proxy_matrix(
            self.state.t_mut(),
            feedback.played,
            feedback.realized,
            &strategy,
            self.params.epsilon,
            self.rule,
        )?;
        *self.state.q_mut() = regret_from_proxy(self.state.proxy_matrix(), self.params.epsilon);
        let p = update_play_probabilities(&self.state, &self.params)?;
        self.state.set_strategy(p);
        Ok(())
    }

    fn max_regret(&self) -> f64 {
        self.state.max_regret()
    }

    fn exploration_floor(&self) -> Option<f64> {
        Some(self.params.exploration_floor())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn first_increment_fills_the_played_column() {
        let mut t = SquareMatrix::zeros(2);
        let p = MixedStrategy::new(vec![0.5, 0.5]).unwrap();
        update_proxy_matrix(&mut t, HelperId(1), 800.0, &p, 0.05, TUpdateRule::Decayed).unwrap();
        assert_eq!(t.get(HelperId(0), HelperId(1)), 800.0);
        assert_eq!(t.get(HelperId(1), HelperId(1)), 800.0);
        assert_eq!(t.get(HelperId(0), HelperId(0)), 0.0);
        assert_eq!(t.get(HelperId(1), HelperId(0)), 0.0);
    }

    #[test]
    fn decay_compounds_across_repeated_plays() {
        let mut t = SquareMatrix::zeros(2);
        let p = MixedStrategy::new(vec![0.5, 0.5]).unwrap();
        for _ in 0..2 {
            update_proxy_matrix(&mut t, HelperId(1), 800.0, &p, 0.05, TUpdateRule::Decayed)
                .unwrap();
        }
        // 0.95·800 + 800
        assert!((t.get(HelperId(0), HelperId(1)) - 1560.0).abs() < 1e-9);
        assert!((t.get(HelperId(1), HelperId(1)) - 1560.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_strategy_increments_only_its_own_row() {
        let mut t = SquareMatrix::zeros(3);
        let p = MixedStrategy::point_mass(HelperId(1), 3);
        update_proxy_matrix(&mut t, HelperId(1), 640.0, &p, 0.05, TUpdateRule::Decayed).unwrap();
        assert_eq!(t.get(HelperId(1), HelperId(1)), 640.0);
        assert_eq!(t.get(HelperId(0), HelperId(1)), 0.0);
        assert_eq!(t.get(HelperId(2), HelperId(1)), 0.0);
    }

    #[test]
    fn zero_probability_play_is_rejected() {
        let mut t = SquareMatrix::zeros(2);
        let p = MixedStrategy::point_mass(HelperId(0), 2);
        assert!(matches!(
            update_proxy_matrix(&mut t, HelperId(1), 100.0, &p, 0.05, TUpdateRule::Decayed),
            Err(LearningError::ZeroPlayProbability { action: 1 })
        ));
    }

    #[test]
    fn regret_row_takes_positive_part_scaled_by_epsilon() {
        let mut t = SquareMatrix::zeros(2);
        t.set(HelperId(0), HelperId(1), 800.0);
        t.set(HelperId(0), HelperId(0), 600.0);
        let row = regret_row_from_proxy(&t, HelperId(0), 0.05);
        assert!((row[1] - 10.0).abs() < 1e-12);
        assert_eq!(row[0], 0.0);

        t.set(HelperId(0), HelperId(1), 500.0);
        let row = regret_row_from_proxy(&t, HelperId(0), 0.05);
        assert_eq!(row[1], 0.0);
    }

    /// Drives a learner from exogenous random utilities, recording the
    /// trajectory as the direct estimator expects it.
    fn run_trajectory(
        seed: u64,
        stages: usize,
        n_helpers: usize,
        params: LearningParams,
    ) -> (R2hsLearner, Vec<PlayRecord>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let initial = HelperId(rng.gen_range(0..n_helpers));
        let mut learner = R2hsLearner::new(params, n_helpers, initial).unwrap();
        let mut history = Vec::with_capacity(stages);
        let dummy = vec![0.0; n_helpers];
        for _ in 0..stages {
            let strategy = learner.strategy().clone();
            let action = learner.next_action(&mut rng);
            let utility: f64 = rng.gen_range(0.0..100.0);
            learner
                .observe(&StageFeedback {
                    played: action,
                    realized: utility,
                    counterfactuals: &dummy,
                })
                .unwrap();
            history.push(PlayRecord {
                action,
                utility,
                strategy,
            });
        }
        (learner, history)
    }

    #[test]
    fn recursion_matches_direct_evaluation() {
        let params = LearningParams::new(0.05, 0.1, 50.0, 4).unwrap();
        let (learner, history) = run_trajectory(2024, 1000, 4, params);
        let direct = direct_proxy_regret(&history, params.epsilon, 4);
        let recursive = regret_from_proxy(learner.state().proxy_matrix(), params.epsilon);
        for j in 0..4 {
            for k in 0..4 {
                let d = direct.get(HelperId(j), HelperId(k));
                let r = recursive.get(HelperId(j), HelperId(k));
                assert!(
                    (d - r).abs() < 1e-9,
                    "entry ({j},{k}): direct {d} vs recursive {r}"
                );
            }
        }
    }

    #[test]
    fn diagonal_accumulates_own_play_with_unit_ratio() {
        let params = LearningParams::new(0.05, 0.1, 50.0, 3).unwrap();
        let (learner, history) = run_trajectory(7, 500, 3, params);
        // Independently fold the decayed sum of realized utility per action.
        let mut own = vec![0.0f64; 3];
        for record in &history {
            for v in &mut own {
                *v *= 1.0 - params.epsilon;
            }
            own[record.action.0] += record.utility;
        }
        for (k, expected) in own.iter().enumerate() {
            let t_kk = learner.state().proxy_matrix().get(HelperId(k), HelperId(k));
            assert!(
                (t_kk - expected).abs() < 1e-9 * expected.abs().max(1.0),
                "diagonal {k}: {t_kk} vs {expected}"
            );
        }
    }

    #[test]
    fn cumulative_rule_never_decays() {
        let mut t = SquareMatrix::zeros(2);
        let p = MixedStrategy::new(vec![0.5, 0.5]).unwrap();
        for _ in 0..2 {
            update_proxy_matrix(&mut t, HelperId(1), 800.0, &p, 0.05, TUpdateRule::Cumulative)
                .unwrap();
        }
        assert_eq!(t.get(HelperId(0), HelperId(1)), 1600.0);
    }

    #[test]
    fn learner_strategy_stays_on_the_simplex_with_floor() {
        let params = LearningParams::new(0.05, 0.08, 2000.0, 4).unwrap();
        let (learner, _) = run_trajectory(11, 800, 4, params);
        let p = learner.strategy();
        let sum: f64 = p.as_slice().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        let floor = params.exploration_floor();
        assert!(p.as_slice().iter().all(|&x| x >= floor - 1e-12));
    }
}
