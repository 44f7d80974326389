//! Discrete-time simulator and algorithm library for decentralized helper
//! selection in peer-assisted streaming.
//!
//! Peers repeatedly pick one of several helper nodes whose upload capacity
//! fluctuates as a slow Markov chain; a helper's capacity is split evenly
//! among its connected peers. The crate provides:
//!
//! * [`game`] — the one-shot game math: rates, counterfactuals, welfare,
//!   fairness and correlated-equilibrium certification.
//! * [`learning`] — regret-tracking strategies (full-information and
//!   bandit-feedback variants) plus the oscillating best-response baseline.
//! * [`mod@env`] — Markov-modulated capacities, demand accounting and the
//!   seeded stage loop producing a metrics trace.
//! * [`benchmark`] — the centralized occupation-measure optimum the
//!   decentralized runs are measured against.

pub mod benchmark;
pub mod env;
pub mod game;
pub mod learning;
