//! Regret tracking with full-information feedback.
//!
//! The learner keeps exponentially recency-weighted averages of its own
//! realized utility and of the exact counterfactual utility of every
//! alternative action. The regret of the current action `j` against `k` is
//! the positive part of (average counterfactual of `k`) minus (average
//! realized utility); recency weighting lets the estimates track a drifting
//! environment instead of freezing on stale history.

use rand::RngCore;

use crate::game::{HelperId, MixedStrategy};

use super::{
    sample_action, update_play_probabilities, HelperSelector, LearningError, LearningParams,
    RegretState, StageFeedback,
};

/// Per-action averages with weights `ε(1−ε)^{n−τ}`: contributions decay by
/// `(1−ε)` every stage and the current stage enters with weight `ε`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedAverages {
    realized: Vec<f64>,
    counterfactual: Vec<f64>,
}

impl WeightedAverages {
    pub fn new(n_helpers: usize) -> Self {
        Self {
            realized: vec![0.0; n_helpers],
            counterfactual: vec![0.0; n_helpers],
        }
    }

    /// Folds in one stage: the realized utility lands in the played
    /// action's bucket, every action's counterfactual average absorbs its
    /// exact stage value.
    pub fn update(
        &mut self,
        epsilon: f64,
        played: HelperId,
        realized: f64,
        counterfactuals: &[f64],
    ) -> Result<(), LearningError> {
        if counterfactuals.len() != self.counterfactual.len() {
            return Err(LearningError::FeedbackShape {
                got: counterfactuals.len(),
                expected: self.counterfactual.len(),
            });
        }
        for bucket in &mut self.realized {
            *bucket *= 1.0 - epsilon;
        }
        self.realized[played.0] += epsilon * realized;
        for (avg, &value) in self.counterfactual.iter_mut().zip(counterfactuals) {
            *avg = (1.0 - epsilon) * *avg + epsilon * value;
        }
        Ok(())
    }

    /// Weighted average of realized utility over all stages; the per-action
    /// buckets partition the stages, so their sum is the full average.
    pub fn realized_total(&self) -> f64 {
        self.realized.iter().sum()
    }

    pub fn counterfactual(&self, action: HelperId) -> f64 {
        self.counterfactual[action.0]
    }

    pub fn realized_for(&self, action: HelperId) -> f64 {
        self.realized[action.0]
    }
}

/// Rewrites the played action's regret row from the current averages:
/// `Q(played, k) = [avg_counterfactual(k) − avg_realized]⁺` for `k ≠ played`.
/// Other rows are left as of the stage their action was last played.
pub fn update_regret_row(
    state: &mut RegretState,
    averages: &WeightedAverages,
    played: HelperId,
) {
    let own = averages.realized_total();
    for k in 0..state.n_helpers() {
        if k == played.0 {
            continue;
        }
        let gain = (averages.counterfactual(HelperId(k)) - own).max(0.0);
        state.q_mut().set(played, HelperId(k), gain);
    }
}

/// Full-information regret-tracking learner.
pub struct RthsLearner {
    params: LearningParams,
    averages: WeightedAverages,
    state: RegretState,
    started: bool,
}

impl RthsLearner {
    pub fn new(
        params: LearningParams,
        n_helpers: usize,
        initial_action: HelperId,
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
            averages: WeightedAverages::new(n_helpers),
            state: RegretState::new(n_helpers, initial_action),
            started: false,
        })
    }

    pub fn state(&self) -> &RegretState {
        &self.state
    }

    pub fn averages(&self) -> &WeightedAverages {
        &self.averages
    }
}

impl HelperSelector for RthsLearner {
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
        self.averages.update(
            self.params.epsilon,
            feedback.played,
            feedback.realized,
            feedback.counterfactuals,
        )?;
        update_regret_row(&mut self.state, &self.averages, feedback.played);
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

    #[test]
    fn first_stage_weighted_average_is_epsilon_times_utility() {
        let mut averages = WeightedAverages::new(2);
        averages
            .update(0.05, HelperId(0), 800.0, &[800.0, 400.0])
            .unwrap();
        assert!((averages.realized_total() - 40.0).abs() < 1e-12);
        assert!((averages.counterfactual(HelperId(1)) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn regret_is_positive_part_of_counterfactual_advantage() {
        let mut state = RegretState::new(2, HelperId(0));
        let averages = WeightedAverages {
            realized: vec![450.0, 0.0],
            counterfactual: vec![450.0, 500.0],
        };
        update_regret_row(&mut state, &averages, HelperId(0));
        assert!((state.regret(HelperId(0), HelperId(1)) - 50.0).abs() < 1e-12);

        let averages = WeightedAverages {
            realized: vec![450.0, 0.0],
            counterfactual: vec![450.0, 300.0],
        };
        update_regret_row(&mut state, &averages, HelperId(0));
        assert_eq!(state.regret(HelperId(0), HelperId(1)), 0.0);
    }

    #[test]
    fn only_the_played_row_changes() {
        let mut state = RegretState::new(3, HelperId(1));
        state.q_mut().set(HelperId(0), HelperId(2), 77.0);
        let averages = WeightedAverages {
            realized: vec![0.0, 100.0, 0.0],
            counterfactual: vec![150.0, 100.0, 90.0],
        };
        update_regret_row(&mut state, &averages, HelperId(1));
        assert_eq!(state.regret(HelperId(0), HelperId(2)), 77.0);
        assert!((state.regret(HelperId(1), HelperId(0)) - 50.0).abs() < 1e-12);
        assert_eq!(state.regret(HelperId(1), HelperId(2)), 0.0);
        // Diagonal stays zero.
        assert_eq!(state.regret(HelperId(1), HelperId(1)), 0.0);
    }

    #[test]
    fn learner_keeps_valid_strategy_across_updates() {
        use rand::SeedableRng;
        let params = LearningParams::new(0.05, 0.1, 3200.0, 4).unwrap();
        let mut learner = RthsLearner::new(params, 4, HelperId(2)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let floor = params.exploration_floor();
        for stage in 0..200 {
            let a = learner.next_action(&mut rng);
            if stage == 0 {
                assert_eq!(a, HelperId(2));
            }
            let cf = [300.0, 250.0, 200.0, 400.0];
            learner
                .observe(&StageFeedback {
                    played: a,
                    realized: cf[a.0],
                    counterfactuals: &cf,
                })
                .unwrap();
            let p = learner.strategy();
            let sum: f64 = p.as_slice().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(p.as_slice().iter().all(|&x| x >= floor - 1e-12));
        }
        // Action 3 dominates; most regret should point there eventually.
        assert!(learner.state().regret(learner.state().last_action(), HelperId(3)) >= 0.0);
    }
}
