//! Core types and pure math for the helper selection game.
//!
//! Peers pick one helper each; a helper's upload capacity is split evenly
//! among the peers connected to it, so a peer's streaming rate is `C/σ`
//! where `C` is its helper's capacity and `σ` the helper's connection
//! count. Everything here is a pure function of its inputs.

use std::collections::BTreeMap;

use thiserror::Error;

/// Tolerance for probability vectors summing to one.
pub const PROB_SUM_TOL: f64 = 1e-9;

/// Index of a peer, in `[0, N)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PeerId(pub usize);

/// Index of a helper, in `[0, H)`. Helpers form the action space of the game.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HelperId(pub usize);

impl std::fmt::Display for PeerId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "p{}", self.0)
    }
}

impl std::fmt::Display for HelperId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "h{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("peer p{peer} is not assigned in the profile ({n_peers} peers)")]
    UnassignedPeer { peer: usize, n_peers: usize },
    #[error("helper h{helper} out of range ({n_helpers} helpers)")]
    InvalidHelper { helper: usize, n_helpers: usize },
    #[error("capacity must be positive and finite, got {value} at helper h{index}")]
    InvalidCapacity { index: usize, value: f64 },
    #[error("capacity vector has {got} entries, profile expects {expected}")]
    CapacityLengthMismatch { got: usize, expected: usize },
    #[error("probabilities must be nonnegative and sum to 1 within {PROB_SUM_TOL}, got sum {sum}")]
    InvalidStrategy { sum: f64 },
    #[error("rates are empty or all zero; fairness index undefined")]
    DegenerateRates,
    #[error("history stages must be strictly increasing: got {stage} after {last}")]
    NonIncreasingStage { stage: usize, last: usize },
    #[error("empirical distribution is empty")]
    EmptyDistribution,
    #[error("profile shape mismatch: expected {expected_peers} peers over {expected_helpers} helpers")]
    ProfileShapeMismatch {
        expected_peers: usize,
        expected_helpers: usize,
    },
}

/// Per-helper upload capacities, all strictly positive.
#[derive(Clone, Debug, PartialEq)]
pub struct CapacityVector(Vec<f64>);

impl CapacityVector {
    pub fn new(values: Vec<f64>) -> Result<Self, GameError> {
        for (index, &value) in values.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(GameError::InvalidCapacity { index, value });
            }
        }
        Ok(Self(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, helper: HelperId) -> Result<f64, GameError> {
        self.0
            .get(helper.0)
            .copied()
            .ok_or(GameError::InvalidHelper {
                helper: helper.0,
                n_helpers: self.0.len(),
            })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// A joint action: every peer's chosen helper, with derived per-helper
/// connection counts `σ`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AssignmentProfile {
    choices: Vec<HelperId>,
    loads: Vec<usize>,
}

impl AssignmentProfile {
    /// Builds a profile from per-peer choices over `n_helpers` helpers.
    pub fn new(choices: Vec<HelperId>, n_helpers: usize) -> Result<Self, GameError> {
        let mut loads = vec![0usize; n_helpers];
        for &h in &choices {
            if h.0 >= n_helpers {
                return Err(GameError::InvalidHelper {
                    helper: h.0,
                    n_helpers,
                });
            }
            loads[h.0] += 1;
        }
        Ok(Self { choices, loads })
    }

    pub fn n_peers(&self) -> usize {
        self.choices.len()
    }

    pub fn n_helpers(&self) -> usize {
        self.loads.len()
    }

    pub fn choice(&self, peer: PeerId) -> Result<HelperId, GameError> {
        self.choices
            .get(peer.0)
            .copied()
            .ok_or(GameError::UnassignedPeer {
                peer: peer.0,
                n_peers: self.choices.len(),
            })
    }

    pub fn choices(&self) -> &[HelperId] {
        &self.choices
    }

    /// Connection count `σ_j` of one helper.
    pub fn load(&self, helper: HelperId) -> Result<usize, GameError> {
        self.loads
            .get(helper.0)
            .copied()
            .ok_or(GameError::InvalidHelper {
                helper: helper.0,
                n_helpers: self.loads.len(),
            })
    }

    pub fn loads(&self) -> &[usize] {
        &self.loads
    }

    /// Copy of this profile with one peer's choice replaced.
    pub fn with_choice(&self, peer: PeerId, helper: HelperId) -> Result<Self, GameError> {
        if peer.0 >= self.choices.len() {
            return Err(GameError::UnassignedPeer {
                peer: peer.0,
                n_peers: self.choices.len(),
            });
        }
        if helper.0 >= self.loads.len() {
            return Err(GameError::InvalidHelper {
                helper: helper.0,
                n_helpers: self.loads.len(),
            });
        }
        let mut choices = self.choices.clone();
        choices[peer.0] = helper;
        Self::new(choices, self.loads.len())
    }
}

/// A probability distribution over helpers.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedStrategy(Vec<f64>);

impl MixedStrategy {
    pub fn new(probs: Vec<f64>) -> Result<Self, GameError> {
        let sum: f64 = probs.iter().sum();
        let valid = probs.iter().all(|&p| p.is_finite() && p >= 0.0)
            && (sum - 1.0).abs() <= PROB_SUM_TOL;
        if !valid {
            return Err(GameError::InvalidStrategy { sum });
        }
        Ok(Self(probs))
    }

    pub fn uniform(n_helpers: usize) -> Self {
        Self(vec![1.0 / n_helpers as f64; n_helpers])
    }

    pub fn point_mass(helper: HelperId, n_helpers: usize) -> Self {
        let mut probs = vec![0.0; n_helpers];
        probs[helper.0] = 1.0;
        Self(probs)
    }

    pub fn prob(&self, helper: HelperId) -> f64 {
        self.0[helper.0]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// One stage of a peer's private history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryEntry {
    pub stage: usize,
    pub action: HelperId,
    pub utility: f64,
}

/// Append-only per-peer record of (stage, action, realized utility).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HistoryLog {
    entries: Vec<HistoryEntry>,
}

impl HistoryLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends one stage; stage indices must be strictly increasing.
    pub fn record(
        &mut self,
        stage: usize,
        action: HelperId,
        utility: f64,
    ) -> Result<(), GameError> {
        if let Some(last) = self.entries.last() {
            if stage <= last.stage {
                return Err(GameError::NonIncreasingStage {
                    stage,
                    last: last.stage,
                });
            }
        }
        self.entries.push(HistoryEntry {
            stage,
            action,
            utility,
        });
        Ok(())
    }

    pub fn entries(&self) -> &[HistoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Frequency table over joint action profiles, used for certifying an
/// approximate correlated equilibrium from an observed trace.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmpiricalJointDistribution {
    counts: BTreeMap<AssignmentProfile, u64>,
    total: u64,
}

impl EmpiricalJointDistribution {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one observation. All recorded profiles must share a shape.
    pub fn record(&mut self, profile: AssignmentProfile) -> Result<(), GameError> {
        if let Some((first, _)) = self.counts.iter().next() {
            if first.n_peers() != profile.n_peers() || first.n_helpers() != profile.n_helpers() {
                return Err(GameError::ProfileShapeMismatch {
                    expected_peers: first.n_peers(),
                    expected_helpers: first.n_helpers(),
                });
            }
        }
        *self.counts.entry(profile).or_insert(0) += 1;
        self.total += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn support_len(&self) -> usize {
        self.counts.len()
    }

    /// Iterates `(profile, normalized weight)` in deterministic order.
    pub fn iter(&self) -> impl Iterator<Item = (&AssignmentProfile, f64)> {
        let total = self.total as f64;
        self.counts.iter().map(move |(p, &c)| (p, c as f64 / total))
    }

    pub fn shape(&self) -> Option<(usize, usize)> {
        self.counts
            .iter()
            .next()
            .map(|(p, _)| (p.n_peers(), p.n_helpers()))
    }
}

fn check_shapes(
    profile: &AssignmentProfile,
    capacities: &CapacityVector,
) -> Result<(), GameError> {
    if capacities.len() != profile.n_helpers() {
        return Err(GameError::CapacityLengthMismatch {
            got: capacities.len(),
            expected: profile.n_helpers(),
        });
    }
    Ok(())
}

/// Instantaneous streaming rate `C_h / σ_h` of one peer under a joint action.
pub fn realized_utility(
    profile: &AssignmentProfile,
    capacities: &CapacityVector,
    peer: PeerId,
) -> Result<f64, GameError> {
    check_shapes(profile, capacities)?;
    let chosen = profile.choice(peer)?;
    let load = profile.load(chosen)?;
    debug_assert!(load >= 1, "chosen helper must count its own peer");
    Ok(capacities.get(chosen)? / load as f64)
}

/// Rate the peer would have received had it alone switched to `alt`, all
/// other peers unchanged: `C_alt / (σ_alt + 1)`, or the realized rate when
/// `alt` is the current helper.
pub fn counterfactual_utility(
    profile: &AssignmentProfile,
    capacities: &CapacityVector,
    peer: PeerId,
    alt: HelperId,
) -> Result<f64, GameError> {
    check_shapes(profile, capacities)?;
    let chosen = profile.choice(peer)?;
    if alt == chosen {
        return realized_utility(profile, capacities, peer);
    }
    let load = profile.load(alt)?;
    Ok(capacities.get(alt)? / (load + 1) as f64)
}

/// Sum of all peers' rates. Equals the total capacity of helpers serving at
/// least one peer, which is how it is computed here; helpers with `σ = 0`
/// contribute nothing.
pub fn social_welfare(
    profile: &AssignmentProfile,
    capacities: &CapacityVector,
) -> Result<f64, GameError> {
    check_shapes(profile, capacities)?;
    let mut sum = 0.0;
    for (j, &load) in profile.loads().iter().enumerate() {
        if load >= 1 {
            sum += capacities.get(HelperId(j))?;
        }
    }
    Ok(sum)
}

/// Jain fairness index `(Σr)² / (N·Σr²)` over per-peer rates.
///
/// Equals 1 iff all rates are equal and is bounded below by `1/N`.
pub fn jain_fairness(rates: &[f64]) -> Result<f64, GameError> {
    if rates.is_empty() || rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(GameError::DegenerateRates);
    }
    let sum: f64 = rates.iter().sum();
    let sum_sq: f64 = rates.iter().map(|r| r * r).sum();
    if sum_sq == 0.0 {
        return Err(GameError::DegenerateRates);
    }
    Ok(sum * sum / (rates.len() as f64 * sum_sq))
}

/// A profitable conditional deviation found by the equilibrium check:
/// conditioned on having been recommended `recommended`, peer `peer` would
/// gain `gain` on average by playing `deviation` instead.
#[derive(Clone, Debug, PartialEq)]
pub struct CeViolation {
    pub peer: PeerId,
    pub recommended: HelperId,
    pub deviation: HelperId,
    pub gain: f64,
}

/// Tests whether an empirical joint distribution is an approximate
/// correlated equilibrium of the expected game.
///
/// For every peer `i` and ordered action pair `(a, â)` it accumulates
/// `Σ_profiles x(a, a_-i) · [u_i(â, a_-i) − u_i(a, a_-i)]` and reports every
/// pair whose gain exceeds `tol`. An empty result certifies an approximate
/// correlated equilibrium at that tolerance.
///
/// The expected game is evaluated at capacities fixed to their stationary
/// means; utilities are linear in capacity for a fixed assignment, so this
/// equals averaging utilities over capacity states. Cost is linear in the
/// distribution's support size, which itself can grow exponentially in the
/// number of peers; intended for small instances.
pub fn check_correlated_equilibrium(
    dist: &EmpiricalJointDistribution,
    expected_capacities: &CapacityVector,
    tol: f64,
) -> Result<Vec<CeViolation>, GameError> {
    let (n_peers, n_helpers) = dist.shape().ok_or(GameError::EmptyDistribution)?;
    if expected_capacities.len() != n_helpers {
        return Err(GameError::CapacityLengthMismatch {
            got: expected_capacities.len(),
            expected: n_helpers,
        });
    }

    // gains[i][a][b]: weighted gain of deviating to b when recommended a.
    let mut gains = vec![0.0f64; n_peers * n_helpers * n_helpers];
    let mut support = vec![false; n_peers * n_helpers];
    let idx = |i: usize, a: usize, b: usize| (i * n_helpers + a) * n_helpers + b;

    for (profile, weight) in dist.iter() {
        for i in 0..n_peers {
            let peer = PeerId(i);
            let current = profile.choice(peer)?;
            support[i * n_helpers + current.0] = true;
            let u_cur = realized_utility(profile, expected_capacities, peer)?;
            for b in 0..n_helpers {
                let alt = HelperId(b);
                if alt == current {
                    continue;
                }
                let u_dev = counterfactual_utility(profile, expected_capacities, peer, alt)?;
                gains[idx(i, current.0, b)] += weight * (u_dev - u_cur);
            }
        }
    }

    let mut violations = Vec::new();
    for i in 0..n_peers {
        for a in 0..n_helpers {
            // A recommendation with no mass imposes a vacuous condition.
            if !support[i * n_helpers + a] {
                continue;
            }
            for b in 0..n_helpers {
                if a == b {
                    continue;
                }
                let gain = gains[idx(i, a, b)];
                if gain > tol {
                    violations.push(CeViolation {
                        peer: PeerId(i),
                        recommended: HelperId(a),
                        deviation: HelperId(b),
                        gain,
                    });
                }
            }
        }
    }
    Ok(violations)
}
