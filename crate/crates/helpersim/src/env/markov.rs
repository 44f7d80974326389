//! Markov-modulated helper capacity.
//!
//! Each helper's upload capacity hops between a fixed set of levels
//! according to a row-stochastic transition matrix. The default regime is
//! slowly varying: a heavy self-loop gives geometric dwell times long
//! relative to the learners' effective memory, which is what makes
//! equilibrium tracking feasible.

use rand::Rng;
use thiserror::Error;

use crate::game::MixedStrategy;

/// Row sums must match 1 within this tolerance.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Residual bound for the stationary solve.
pub const STATIONARY_RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("capacity chain needs at least one level")]
    NoLevels,
    #[error("capacity level {index} must be positive and finite, got {value}")]
    InvalidLevel { index: usize, value: f64 },
    #[error("transition matrix must be {n}×{n} row-stochastic")]
    BadShape { n: usize },
    #[error("transition row {row} sums to {sum}, expected 1 within {ROW_SUM_TOL}")]
    BadRowSum { row: usize, sum: f64 },
    #[error("transition entry ({row},{col}) must be a probability, got {value}")]
    BadEntry { row: usize, col: usize, value: f64 },
    #[error("level index {index} out of range ({n_levels} levels)")]
    BadLevelIndex { index: usize, n_levels: usize },
    #[error("self-loop probability {0} out of range")]
    BadSelfLoop(f64),
    #[error("chain is not ergodic: found {recurrent_classes} recurrent classes, need exactly one")]
    Reducible { recurrent_classes: usize },
    #[error("chain is not ergodic: recurrent class has period {period}")]
    Periodic { period: usize },
    #[error("stationary solve failed: residual {residual} exceeds {STATIONARY_RESIDUAL_TOL}")]
    SolveFailed { residual: f64 },
}

/// One helper's capacity process: a level set, a transition matrix over the
/// levels and the current level index.
#[derive(Clone, Debug, PartialEq)]
pub struct CapacityChain {
    levels: Vec<f64>,
    transition: Vec<Vec<f64>>,
    current: usize,
}

impl CapacityChain {
    pub fn new(
        levels: Vec<f64>,
        transition: Vec<Vec<f64>>,
        current: usize,
    ) -> Result<Self, ChainError> {
        let n = levels.len();
        if n == 0 {
            return Err(ChainError::NoLevels);
        }
        for (index, &value) in levels.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(ChainError::InvalidLevel { index, value });
            }
        }
        if transition.len() != n || transition.iter().any(|row| row.len() != n) {
            return Err(ChainError::BadShape { n });
        }
        for (row, entries) in transition.iter().enumerate() {
            for (col, &value) in entries.iter().enumerate() {
                if !(value.is_finite() && (0.0..=1.0).contains(&value)) {
                    return Err(ChainError::BadEntry { row, col, value });
                }
            }
            let sum: f64 = entries.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(ChainError::BadRowSum { row, sum });
            }
        }
        if current >= n {
            return Err(ChainError::BadLevelIndex {
                index: current,
                n_levels: n,
            });
        }
        Ok(Self {
            levels,
            transition,
            current,
        })
    }

    /// Chain with self-loop probability `self_loop` on every level and the
    /// remaining mass spread evenly over the other levels.
    pub fn slowly_varying(levels: Vec<f64>, self_loop: f64) -> Result<Self, ChainError> {
        let n = levels.len();
        if n == 0 {
            return Err(ChainError::NoLevels);
        }
        if !(0.0..=1.0).contains(&self_loop) || (n == 1 && self_loop != 1.0) {
            return Err(ChainError::BadSelfLoop(self_loop));
        }
        let off = if n > 1 {
            (1.0 - self_loop) / (n - 1) as f64
        } else {
            0.0
        };
        let transition = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| if i == j { self_loop } else { off })
                    .collect()
            })
            .collect();
        Self::new(levels, transition, 0)
    }

    /// Constant capacity: a single level that never changes.
    pub fn constant(level: f64) -> Result<Self, ChainError> {
        Self::new(vec![level], vec![vec![1.0]], 0)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn current_level(&self) -> usize {
        self.current
    }

    /// Capacity at the current level.
    pub fn capacity(&self) -> f64 {
        self.levels[self.current]
    }

    pub fn min_capacity(&self) -> f64 {
        self.levels.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_capacity(&self) -> f64 {
        self.levels.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn set_level(&mut self, index: usize) -> Result<(), ChainError> {
        if index >= self.levels.len() {
            return Err(ChainError::BadLevelIndex {
                index,
                n_levels: self.levels.len(),
            });
        }
        self.current = index;
        Ok(())
    }

    /// Samples the next level from the current row.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let x: f64 = rng.gen();
        let row = &self.transition[self.current];
        let mut cumulative = 0.0;
        for (next, &p) in row.iter().enumerate() {
            cumulative += p;
            if x < cumulative {
                self.current = next;
                return;
            }
        }
        self.current = row.len() - 1;
    }

    /// Steady-state distribution `π` with `πP = π`, `Σπ = 1`.
    ///
    /// Requires an ergodic chain: a single recurrent class that is
    /// aperiodic. Transient levels get stationary probability zero.
    pub fn stationary_distribution(&self) -> Result<Vec<f64>, ChainError> {
        let n = self.levels.len();
        let class = self.single_recurrent_class()?;
        let period = class_period(&self.transition, &class);
        if period != 1 {
            return Err(ChainError::Periodic { period });
        }

        // Solve (Pᵀ − I)π = 0 with Σπ = 1 on the recurrent class.
        let c = class.len();
        let mut a = vec![vec![0.0f64; c]; c];
        for (ri, &i) in class.iter().enumerate() {
            for (rj, &j) in class.iter().enumerate() {
                a[ri][rj] = self.transition[j][i];
            }
            a[ri][ri] -= 1.0;
        }
        for v in &mut a[c - 1] {
            *v = 1.0;
        }
        let mut b = vec![0.0; c];
        b[c - 1] = 1.0;
        let solution =
            solve_linear(a, b).ok_or(ChainError::SolveFailed { residual: f64::NAN })?;

        let mut pi = vec![0.0; n];
        for (ri, &i) in class.iter().enumerate() {
            pi[i] = solution[ri].max(0.0);
        }
        let total: f64 = pi.iter().sum();
        for v in &mut pi {
            *v /= total;
        }

        let mut residual = 0.0f64;
        for j in 0..n {
            let image: f64 = (0..n).map(|i| pi[i] * self.transition[i][j]).sum();
            residual = residual.max((image - pi[j]).abs());
        }
        if residual > STATIONARY_RESIDUAL_TOL {
            return Err(ChainError::SolveFailed { residual });
        }
        Ok(pi)
    }

    /// Stationary mean capacity `Σ π·level`.
    pub fn expected_capacity(&self) -> Result<f64, ChainError> {
        let pi = self.stationary_distribution()?;
        Ok(pi
            .iter()
            .zip(&self.levels)
            .map(|(p, level)| p * level)
            .sum())
    }

    /// Samples an initial level from the stationary distribution.
    pub fn sample_stationary<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<(), ChainError> {
        let pi = self.stationary_distribution()?;
        // π is a valid distribution by construction; reuse the categorical
        // sampler.
        let strategy = MixedStrategy::new(pi).expect("stationary distribution sums to one");
        self.current = crate::learning::sample_action(&strategy, rng).0;
        Ok(())
    }

    /// The recurrent class, required to be unique.
    fn single_recurrent_class(&self) -> Result<Vec<usize>, ChainError> {
        let n = self.levels.len();
        // Transitive closure over positive transitions.
        let mut reach = vec![vec![false; n]; n];
        for i in 0..n {
            reach[i][i] = true;
            for j in 0..n {
                if self.transition[i][j] > 0.0 {
                    reach[i][j] = true;
                }
            }
        }
        for k in 0..n {
            for i in 0..n {
                if reach[i][k] {
                    for j in 0..n {
                        if reach[k][j] {
                            reach[i][j] = true;
                        }
                    }
                }
            }
        }

        // Communicating classes; a class is recurrent when nothing escapes.
        let mut class_of = vec![usize::MAX; n];
        let mut classes: Vec<Vec<usize>> = Vec::new();
        for i in 0..n {
            if class_of[i] != usize::MAX {
                continue;
            }
            let id = classes.len();
            let members: Vec<usize> =
                (0..n).filter(|&j| reach[i][j] && reach[j][i]).collect();
            for &j in &members {
                class_of[j] = id;
            }
            classes.push(members);
        }
        let recurrent: Vec<&Vec<usize>> = classes
            .iter()
            .filter(|members| {
                members.iter().all(|&i| {
                    (0..n).all(|j| self.transition[i][j] == 0.0 || class_of[j] == class_of[i])
                })
            })
            .collect();
        if recurrent.len() != 1 {
            return Err(ChainError::Reducible {
                recurrent_classes: recurrent.len(),
            });
        }
        Ok(recurrent[0].clone())
    }
}

/// Period of a strongly connected class: gcd over its edges `(u,v)` of
/// `d(u) + 1 − d(v)` with `d` breadth-first distances from any root.
fn class_period(transition: &[Vec<f64>], class: &[usize]) -> usize {
    let index_in_class: std::collections::BTreeMap<usize, usize> =
        class.iter().enumerate().map(|(ci, &s)| (s, ci)).collect();
    let c = class.len();
    let mut dist = vec![i64::MIN; c];
    let mut queue = std::collections::VecDeque::new();
    dist[0] = 0;
    queue.push_back(0usize);
    while let Some(u) = queue.pop_front() {
        let state = class[u];
        for (next, &p) in transition[state].iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            if let Some(&v) = index_in_class.get(&next) {
                if dist[v] == i64::MIN {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
    }
    let mut g: i64 = 0;
    for (u, &du) in dist.iter().enumerate() {
        let state = class[u];
        for (next, &p) in transition[state].iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            if let Some(&v) = index_in_class.get(&next) {
                g = gcd(g, (du + 1 - dist[v]).abs());
            }
        }
    }
    g.max(1) as usize
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Dense Gaussian elimination with partial pivoting.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            a[i][col]
                .abs()
                .partial_cmp(&a[j][col].abs())
                .expect("finite pivots")
        })?;
        if a[pivot][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut value = b[row];
        for col in (row + 1)..n {
            value -= a[row][col] * x[col];
        }
        x[row] = value / a[row][row];
    }
    Some(x)
}
