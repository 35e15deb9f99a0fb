//! Learning negative-side-effect (NSE) penalty functions from several kinds of
//! human feedback.
//!
//! The crate is organised bottom-up:
//!
//! - [`mdp`]: tabular stochastic-shortest-path MDPs, value iteration, composite
//!   costs and Monte-Carlo policy evaluation.
//! - [`envs`]: the navigation, vase, push and freeway grid domains with their
//!   hidden severity functions.
//! - [`feedback`]: feedback formats, query generation, a simulated human and the
//!   mapping from answers to severity-labelled examples.
//! - [`forest`]: an in-repo random forest severity classifier with randomized
//!   hyperparameter search.
//! - [`afs`]: adaptive feedback selection: belief distributions, KL information
//!   gain, clustered critical-state sampling and bandit-style format selection.
//! - [`experiments`]: baselines, budget sweeps and result tables.
//! - [`session`]: a resumable learning session that a live human can drive.
//!
//! Runnable walkthroughs live in `examples/`.

pub mod afs;
pub mod config;
pub mod envs;
pub mod error;
pub mod experiments;
pub mod feedback;
pub mod forest;
pub mod mdp;
pub mod rng;
pub mod session;
pub mod severity;

pub use error::{Error, Result};
pub use severity::{PenaltyTable, SeverityLabel, TrueNseModel};
