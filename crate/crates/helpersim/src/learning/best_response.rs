//! Myopic best response, the unstable baseline.
//!
//! Every peer jumps to whichever helper would have served it best last
//! stage. When peers update simultaneously on a symmetric instance this
//! oscillates: everyone sees the same underloaded helper and swaps onto it
//! in lockstep, overloading it and swapping back next stage.

use rand::RngCore;

use crate::game::{
    counterfactual_utility, AssignmentProfile, CapacityVector, GameError, HelperId, MixedStrategy,
    PeerId,
};

use super::{HelperSelector, LearningError, StageFeedback};

/// Helper with the highest counterfactual utility for `peer`, ties broken
/// by the lowest helper index.
pub fn best_response_step(
    profile: &AssignmentProfile,
    capacities: &CapacityVector,
    peer: PeerId,
) -> Result<HelperId, GameError> {
    let mut best = HelperId(0);
    let mut best_utility = f64::NEG_INFINITY;
    for k in 0..profile.n_helpers() {
        let candidate = HelperId(k);
        let utility = counterfactual_utility(profile, capacities, peer, candidate)?;
        if utility > best_utility {
            best = candidate;
            best_utility = utility;
        }
    }
    Ok(best)
}

/// Deterministic argmax-of-counterfactuals strategy.
pub struct BestResponseLearner {
    next: HelperId,
    strategy: MixedStrategy,
    n_helpers: usize,
}

impl BestResponseLearner {
    pub fn new(n_helpers: usize, initial_action: HelperId) -> Result<Self, LearningError> {
        if n_helpers < 1 {
            return Err(LearningError::TooFewActions(n_helpers));
        }
        Ok(Self {
            next: initial_action,
            strategy: MixedStrategy::point_mass(initial_action, n_helpers),
            n_helpers,
        })
    }
}

impl HelperSelector for BestResponseLearner {
    fn strategy(&self) -> &MixedStrategy {
        &self.strategy
    }

    fn next_action(&mut self, _rng: &mut dyn RngCore) -> HelperId {
        self.next
    }

    fn observe(&mut self, feedback: &StageFeedback<'_>) -> Result<(), LearningError> {
        if feedback.counterfactuals.len() != self.n_helpers {
            return Err(LearningError::FeedbackShape {
                got: feedback.counterfactuals.len(),
                expected: self.n_helpers,
            });
        }
        let mut best = 0;
        for (k, &utility) in feedback.counterfactuals.iter().enumerate() {
            if utility > feedback.counterfactuals[best] {
                best = k;
            }
        }
        self.next = HelperId(best);
        self.strategy = MixedStrategy::point_mass(self.next, self.n_helpers);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn caps(values: &[f64]) -> CapacityVector {
        CapacityVector::new(values.to_vec()).unwrap()
    }

    fn profile(choices: &[usize], n_helpers: usize) -> AssignmentProfile {
        AssignmentProfile::new(choices.iter().map(|&h| HelperId(h)).collect(), n_helpers)
            .unwrap()
    }

    #[test]
    fn crowded_helper_drives_everyone_to_the_empty_one() {
        let c = caps(&[800.0, 800.0]);
        let p = profile(&[0, 0, 0, 0], 2);
        for i in 0..4 {
            assert_eq!(best_response_step(&p, &c, PeerId(i)).unwrap(), HelperId(1));
        }
    }

    #[test]
    fn dominant_current_action_is_kept() {
        // Alone on the best helper; all alternatives crowded.
        let c = caps(&[900.0, 500.0, 500.0]);
        let p = profile(&[0, 1, 1, 2, 2], 3);
        assert_eq!(best_response_step(&p, &c, PeerId(0)).unwrap(), HelperId(0));
    }

    #[test]
    fn split_on_unequal_capacities_stays_put() {
        // Peer on h0 compares 700 against 900/2 = 450.
        let c = caps(&[700.0, 900.0]);
        let p = profile(&[0, 1], 2);
        assert_eq!(best_response_step(&p, &c, PeerId(0)).unwrap(), HelperId(0));
    }

    #[test]
    fn ties_break_toward_the_lowest_index() {
        let c = caps(&[800.0, 800.0]);
        // Both counterfactuals equal 400: current h1 gives 800/2, switching
        // to h0 gives 800/(1+1).
        let p = profile(&[0, 1, 1], 2);
        assert_eq!(best_response_step(&p, &c, PeerId(1)).unwrap(), HelperId(0));
    }

    #[test]
    fn learner_plays_argmax_of_observed_counterfactuals() {
        let mut learner = BestResponseLearner::new(3, HelperId(2)).unwrap();
        let mut rng = rand::rngs::mock::StepRng::new(0, 1);
        assert_eq!(learner.next_action(&mut rng), HelperId(2));
        learner
            .observe(&StageFeedback {
                played: HelperId(2),
                realized: 100.0,
                counterfactuals: &[250.0, 400.0, 100.0],
            })
            .unwrap();
        assert_eq!(learner.next_action(&mut rng), HelperId(1));
        assert_eq!(learner.strategy().prob(HelperId(1)), 1.0);
    }
}
