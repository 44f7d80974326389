//! Centralized cooperative optimum, the upper benchmark for the learners.
//!
//! Helper states form a product Markov chain; a centralized policy picks an
//! assignment per joint state. The induced occupation measure maximizes
//! expected welfare subject to per-state marginal constraints, and because
//! those constraints couple nothing across states, the optimum concentrates
//! on a per-state welfare maximizer: solve each state independently, weight
//! by the stationary state probability, done. Welfare of an assignment is
//! the total capacity of occupied helpers, so the per-state maximizer just
//! occupies the `min(N,H)` highest-capacity helpers.
//!
//! [`enumerate_centralized`] does the same by exhaustive per-state
//! enumeration and exists as the independent cross-check.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::env::{CapacityChain, ChainError};
use crate::game::{
    realized_utility, social_welfare, AssignmentProfile, CapacityVector, GameError, HelperId,
    PeerId,
};

/// Evaluation budget for the exhaustive route.
pub const ENUMERATION_BUDGET: u128 = 10_000_000;
/// Marginal and normalization constraints must hold within this tolerance.
pub const LP_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("invalid state space: {0}")]
    InvalidStateSpace(String),
    #[error(
        "instance needs {evaluations} assignment evaluations, over the {budget} budget; \
         shrink peers, helpers or level counts"
    )]
    BudgetExceeded { evaluations: u128, budget: u128 },
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// Joint helper-state space: per-helper capacity levels with their
/// stationary probabilities. Joint states are products of independent
/// per-helper states.
#[derive(Clone, Debug)]
pub struct StateSpace {
    levels: Vec<Vec<f64>>,
    stationary: Vec<Vec<f64>>,
}

impl StateSpace {
    pub fn new(levels: Vec<Vec<f64>>, stationary: Vec<Vec<f64>>) -> Result<Self, BenchmarkError> {
        if levels.is_empty() || levels.len() != stationary.len() {
            return Err(BenchmarkError::InvalidStateSpace(
                "need one level set and one stationary distribution per helper".into(),
            ));
        }
        for (h, (ls, pi)) in levels.iter().zip(&stationary).enumerate() {
            if ls.is_empty() || ls.len() != pi.len() {
                return Err(BenchmarkError::InvalidStateSpace(format!(
                    "helper {h}: {} levels vs {} probabilities",
                    ls.len(),
                    pi.len()
                )));
            }
            if ls.iter().any(|&c| !(c.is_finite() && c > 0.0)) {
                return Err(BenchmarkError::InvalidStateSpace(format!(
                    "helper {h}: levels must be positive"
                )));
            }
            let sum: f64 = pi.iter().sum();
            if pi.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > LP_TOL {
                return Err(BenchmarkError::InvalidStateSpace(format!(
                    "helper {h}: stationary probabilities sum to {sum}"
                )));
            }
        }
        Ok(Self { levels, stationary })
    }

    /// Builds the space from capacity chains, solving each chain's
    /// stationary distribution.
    pub fn from_chains(chains: &[CapacityChain]) -> Result<Self, BenchmarkError> {
        let levels = chains.iter().map(|c| c.levels().to_vec()).collect();
        let stationary = chains
            .iter()
            .map(|c| c.stationary_distribution())
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(levels, stationary)
    }

    pub fn n_helpers(&self) -> usize {
        self.levels.len()
    }

    /// Number of joint states, `Π_h levels_h`.
    pub fn n_states(&self) -> u128 {
        self.levels.iter().map(|l| l.len() as u128).product()
    }

    /// Decodes a joint state index (helper 0 most significant) into the
    /// per-helper level indices.
    fn decode(&self, mut index: usize) -> Vec<usize> {
        let mut digits = vec![0usize; self.levels.len()];
        for h in (0..self.levels.len()).rev() {
            let base = self.levels[h].len();
            digits[h] = index % base;
            index /= base;
        }
        digits
    }

    /// Capacity vector of a joint state.
    pub fn capacities(&self, state_index: usize) -> Result<CapacityVector, BenchmarkError> {
        let digits = self.decode(state_index);
        let caps: Vec<f64> = digits
            .iter()
            .enumerate()
            .map(|(h, &l)| self.levels[h][l])
            .collect();
        CapacityVector::new(caps).map_err(BenchmarkError::from)
    }

    /// Joint probability `π(y) = Π_h π_h(y_h)` of a state.
    pub fn probability(&self, state_index: usize) -> f64 {
        self.decode(state_index)
            .iter()
            .enumerate()
            .map(|(h, &l)| self.stationary[h][l])
            .product()
    }
}

/// Deterministic centralized policy: one assignment per joint state, in
/// state-index order.
#[derive(Clone, Debug, PartialEq)]
pub struct CentralizedPolicy {
    assignments: Vec<AssignmentProfile>,
}

impl CentralizedPolicy {
    pub fn assignment(&self, state_index: usize) -> &AssignmentProfile {
        &self.assignments[state_index]
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }
}

/// Lexicographically smallest welfare-maximizing assignment of `n_peers`
/// peers for fixed capacities, and its welfare.
///
/// Any assignment occupying the `min(N,H)` highest-capacity helpers is
/// optimal; among those the lexicographically smallest either floods helper
/// 0 until the remaining peers just cover the remaining helpers (`N ≥ H`),
/// or walks the chosen helpers in index order (`N < H`, smallest indices
/// among equal capacities).
pub fn optimal_assignment(
    capacities: &CapacityVector,
    n_peers: usize,
) -> Result<(AssignmentProfile, f64), BenchmarkError> {
    let h = capacities.len();
    if h == 0 {
        return Err(BenchmarkError::InvalidStateSpace(
            "cannot assign peers without helpers".into(),
        ));
    }
    let choices: Vec<HelperId> = if n_peers >= h {
        // Flood h0, then cover h1..h_{H−1} with the last peers.
        (0..n_peers)
            .map(|i| {
                if i + h <= n_peers {
                    HelperId(0)
                } else {
                    HelperId(i + h - n_peers)
                }
            })
            .collect()
    } else {
        let mut order: Vec<usize> = (0..h).collect();
        order.sort_by(|&a, &b| {
            capacities.as_slice()[b]
                .partial_cmp(&capacities.as_slice()[a])
                .expect("finite capacities")
                .then(a.cmp(&b))
        });
        let mut chosen: Vec<usize> = order.into_iter().take(n_peers).collect();
        chosen.sort_unstable();
        chosen.into_iter().map(HelperId).collect()
    };
    let profile = AssignmentProfile::new(choices, h)?;
    let welfare = social_welfare(&profile, capacities)?;
    Ok((profile, welfare))
}

/// Welfare of the per-state optimum: total capacity of the `min(N,H)`
/// highest-capacity helpers.
pub fn optimal_welfare(capacities: &CapacityVector, n_peers: usize) -> Result<f64, BenchmarkError> {
    optimal_assignment(capacities, n_peers).map(|(_, welfare)| welfare)
}

/// Exact centralized optimum by per-state decomposition: for each joint
/// state the welfare-maximizing assignment, ties broken lexicographically;
/// returns the policy and `R* = Σ_y π(y)·max_x u(y,x)`.
pub fn solve_centralized(
    states: &StateSpace,
    n_peers: usize,
) -> Result<(CentralizedPolicy, f64), BenchmarkError> {
    let evaluations = states.n_states() * states.n_helpers() as u128;
    if evaluations > ENUMERATION_BUDGET {
        return Err(BenchmarkError::BudgetExceeded {
            evaluations,
            budget: ENUMERATION_BUDGET,
        });
    }
    let n_states = states.n_states() as usize;
    let mut assignments = Vec::with_capacity(n_states);
    let mut optimum = 0.0;
    for y in 0..n_states {
        let caps = states.capacities(y)?;
        let (assignment, welfare) = optimal_assignment(&caps, n_peers)?;
        optimum += states.probability(y) * welfare;
        assignments.push(assignment);
    }
    Ok((CentralizedPolicy { assignments }, optimum))
}

/// Brute-force oracle: enumerates every assignment in every joint state in
/// lexicographic order, keeping the first maximizer. Refuses instances over
/// the evaluation budget.
pub fn enumerate_centralized(
    states: &StateSpace,
    n_peers: usize,
) -> Result<(CentralizedPolicy, f64), BenchmarkError> {
    let h = states.n_helpers();
    let per_state = (h as u128)
        .checked_pow(n_peers as u32)
        .unwrap_or(u128::MAX);
    let evaluations = states.n_states().saturating_mul(per_state);
    if evaluations > ENUMERATION_BUDGET {
        return Err(BenchmarkError::BudgetExceeded {
            evaluations,
            budget: ENUMERATION_BUDGET,
        });
    }

    let n_states = states.n_states() as usize;
    let mut assignments = Vec::with_capacity(n_states);
    let mut optimum = 0.0;
    for y in 0..n_states {
        let caps = states.capacities(y)?;
        let mut best: Option<(AssignmentProfile, f64)> = None;
        let mut odometer = vec![0usize; n_peers];
        loop {
            let profile = AssignmentProfile::new(
                odometer.iter().map(|&d| HelperId(d)).collect(),
                h,
            )?;
            let welfare = social_welfare(&profile, &caps)?;
            if best.as_ref().is_none_or(|(_, w)| welfare > *w) {
                best = Some((profile, welfare));
            }
            // Advance with the last peer least significant: lexicographic
            // order over (x_0, …, x_{N−1}).
            let mut pos = n_peers;
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                odometer[pos] += 1;
                if odometer[pos] < h {
                    break;
                }
                odometer[pos] = 0;
            }
            if odometer.iter().all(|&d| d == 0) {
                break;
            }
        }
        let (assignment, welfare) = best.expect("at least one assignment exists");
        optimum += states.probability(y) * welfare;
        assignments.push(assignment);
    }
    Ok((CentralizedPolicy { assignments }, optimum))
}

/// Expected utility of one peer under a policy and the stationary state
/// distribution.
pub fn peer_value(
    policy: &CentralizedPolicy,
    states: &StateSpace,
    peer: PeerId,
) -> Result<f64, BenchmarkError> {
    let mut value = 0.0;
    for y in 0..policy.len() {
        let caps = states.capacities(y)?;
        value += states.probability(y) * realized_utility(policy.assignment(y), &caps, peer)?;
    }
    Ok(value)
}

/// Sparse occupation measure over (joint state, assignment) pairs; absent
/// entries are zero.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OccupationMeasure {
    entries: BTreeMap<(usize, AssignmentProfile), f64>,
}

impl OccupationMeasure {
    pub fn new() -> Self {
        Self::default()
    }

    /// Measure induced by a deterministic policy: `ρ(y, s(y)) = π(y)`.
    pub fn from_policy(policy: &CentralizedPolicy, states: &StateSpace) -> Self {
        let mut entries = BTreeMap::new();
        for y in 0..policy.len() {
            entries.insert((y, policy.assignment(y).clone()), states.probability(y));
        }
        Self { entries }
    }

    pub fn set(&mut self, state_index: usize, assignment: AssignmentProfile, mass: f64) {
        self.entries.insert((state_index, assignment), mass);
    }

    pub fn scale(&mut self, factor: f64) {
        for mass in self.entries.values_mut() {
            *mass *= factor;
        }
    }

    pub fn total(&self) -> f64 {
        self.entries.values().sum()
    }
}

/// One broken constraint of the occupation-measure program.
#[derive(Clone, Debug, PartialEq)]
pub enum LpViolation {
    /// `Σ_x ρ(y,·)` differs from `π(y)`.
    Marginal { state_index: usize, got: f64, want: f64 },
    /// `Σ ρ` differs from 1.
    Normalization { got: f64 },
    /// A negative mass.
    Negative { state_index: usize, mass: f64 },
}

impl std::fmt::Display for LpViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LpViolation::Marginal {
                state_index,
                got,
                want,
            } => write!(f, "state {state_index}: marginal {got} != pi {want}"),
            LpViolation::Normalization { got } => write!(f, "total mass {got} != 1"),
            LpViolation::Negative { state_index, mass } => {
                write!(f, "state {state_index}: negative mass {mass}")
            }
        }
    }
}

/// Checks the three constraints of the occupation-measure program within
/// [`LP_TOL`]: per-state marginals equal the stationary probabilities, the
/// total mass is one, and no mass is negative. Returns every violation; an
/// empty list means feasible.
pub fn verify_lp_feasibility(
    measure: &OccupationMeasure,
    states: &StateSpace,
) -> Vec<LpViolation> {
    let n_states = states.n_states() as usize;
    let mut violations = Vec::new();
    let mut marginals = vec![0.0f64; n_states];
    let mut total = 0.0;
    for (&(y, _), &mass) in &measure.entries {
        if mass < 0.0 {
            violations.push(LpViolation::Negative {
                state_index: y,
                mass,
            });
        }
        if y < n_states {
            marginals[y] += mass;
        }
        total += mass;
    }
    for (y, &got) in marginals.iter().enumerate() {
        let want = states.probability(y);
        if (got - want).abs() > LP_TOL {
            violations.push(LpViolation::Marginal {
                state_index: y,
                got,
                want,
            });
        }
    }
    if (total - 1.0).abs() > LP_TOL {
        violations.push(LpViolation::Normalization { got: total });
    }
    violations
}
