//! Tabular MDPs under stochastic-shortest-path semantics.
//!
//! Rewards are stored as costs and every solver minimises. Goals are absorbing
//! and free; with a discount of 1 all non-goal costs must be strictly positive so
//! value iteration converges for proper policies.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::{stream, stream_rng};
use crate::{Error, PenaltyTable, Result, TrueNseModel};

const PROB_TOL: f64 = 1e-9;
/// Q-values closer than this are treated as ties when extracting a greedy policy.
const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub next: usize,
    pub prob: f64,
}

impl Transition {
    pub fn new(next: usize, prob: f64) -> Self {
        Self { next, prob }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateRecord {
    pub id: usize,
    /// Grid position first (`x`, `y`), then any extra integer coordinates.
    pub coords: Vec<i32>,
    pub features: Vec<u8>,
}

impl StateRecord {
    pub fn position(&self) -> (i32, i32) {
        (self.coords[0], self.coords[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    states: Vec<StateRecord>,
    action_names: Vec<String>,
    transitions: Vec<Vec<Vec<Transition>>>,
    costs: Vec<Vec<f64>>,
    goals: Vec<bool>,
    start: usize,
    discount: f64,
}

impl TabularMdp {
    pub fn new(
        states: Vec<StateRecord>,
        action_names: Vec<String>,
        transitions: Vec<Vec<Vec<Transition>>>,
        costs: Vec<Vec<f64>>,
        goals: &[usize],
        start: usize,
        discount: f64,
    ) -> Result<Self> {
        let n = states.len();
        let mut goal_mask = vec![false; n];
        for &g in goals {
            if g >= n {
                return Err(Error::InvalidMdp(format!("goal {g} out of range")));
            }
            goal_mask[g] = true;
        }
        let mdp = Self {
            states,
            action_names,
            transitions,
            costs,
            goals: goal_mask,
            start,
            discount,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    fn validate(&self) -> Result<()> {
        let n = self.states.len();
        let m = self.action_names.len();
        let bad = |msg: String| Err(Error::InvalidMdp(msg));
        if n == 0 || m == 0 {
            return bad("mdp needs at least one state and one action".into());
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return bad(format!("discount {} outside (0, 1]", self.discount));
        }
        if self.start >= n {
            return bad(format!("start state {} out of range", self.start));
        }
        if self.transitions.len() != n || self.costs.len() != n {
            return bad("transition/cost tables do not match the state count".into());
        }
        let width = self.states[0].features.len();
        for (s, rec) in self.states.iter().enumerate() {
            if rec.id != s {
                return bad(format!("state record {s} carries id {}", rec.id));
            }
            if rec.features.len() != width {
                return bad(format!("state {s} has {} features, expected {width}", rec.features.len()));
            }
            if rec.coords.len() < 2 {
                return bad(format!("state {s} needs at least two coordinates"));
            }
            if self.transitions[s].len() != m || self.costs[s].len() != m {
                return bad(format!("state {s} does not define all {m} actions"));
            }
            for a in 0..m {
                let outs = &self.transitions[s][a];
                let total: f64 = outs.iter().map(|t| t.prob).sum();
                if (total - 1.0).abs() > PROB_TOL {
                    return bad(format!("transitions of ({s}, {a}) sum to {total}"));
                }
                if let Some(t) = outs.iter().find(|t| t.next >= n || !(0.0..=1.0).contains(&t.prob)) {
                    return bad(format!("bad transition ({s}, {a}) -> {} w.p. {}", t.next, t.prob));
                }
                let c = self.costs[s][a];
                if self.goals[s] {
                    if c != 0.0 || outs.iter().any(|t| t.next != s && t.prob > 0.0) {
                        return bad(format!("goal {s} is not absorbing and free under action {a}"));
                    }
                } else if !c.is_finite() || c < 0.0 || (self.discount == 1.0 && c <= 0.0) {
                    return bad(format!("cost {c} at non-goal ({s}, {a})"));
                }
            }
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_actions(&self) -> usize {
        self.action_names.len()
    }

    pub fn states(&self) -> &[StateRecord] {
        &self.states
    }

    pub fn state(&self, s: usize) -> &StateRecord {
        &self.states[s]
    }

    pub fn action_names(&self) -> &[String] {
        &self.action_names
    }

    pub fn transitions(&self, s: usize, a: usize) -> &[Transition] {
        &self.transitions[s][a]
    }

    pub fn cost(&self, s: usize, a: usize) -> f64 {
        self.costs[s][a]
    }

    pub fn is_goal(&self, s: usize) -> bool {
        self.goals[s]
    }

    pub fn goals(&self) -> impl Iterator<Item = usize> + '_ {
        self.goals.iter().enumerate().filter(|(_, &g)| g).map(|(s, _)| s)
    }

    pub fn non_goal_states(&self) -> impl Iterator<Item = usize> + '_ {
        self.goals.iter().enumerate().filter(|(_, &g)| !g).map(|(s, _)| s)
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// Episode cap used when none is configured: four steps per state.
    pub fn default_horizon(&self) -> usize {
        4 * self.states.len()
    }

    fn q_value(&self, s: usize, a: usize, v: &[f64]) -> f64 {
        self.costs[s][a]
            + self.discount
                * self.transitions[s][a]
                    .iter()
                    .map(|t| t.prob * v[t.next])
                    .sum::<f64>()
    }
}

/// Non-negative, finite priority weights for task cost and NSE penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub theta1: f64,
    pub theta2: f64,
}

impl ObjectiveWeights {
    pub fn new(theta1: f64, theta2: f64) -> Result<Self> {
        for (name, v) in [("theta1", theta1), ("theta2", theta2)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        Ok(Self { theta1, theta2 })
    }
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            theta1: 1.0,
            theta2: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    pub v: Vec<f64>,
    pub q: Vec<Vec<f64>>,
}

/// Deterministic policy; `None` at goals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    actions: Vec<Option<usize>>,
}

impl Policy {
    pub fn new(actions: Vec<Option<usize>>) -> Self {
        Self { actions }
    }

    pub fn action(&self, s: usize) -> Option<usize> {
        self.actions.get(s).copied().flatten()
    }

    pub fn actions(&self) -> &[Option<usize>] {
        &self.actions
    }

    /// Number of states with a defined action.
    pub fn len(&self) -> usize {
        self.actions.iter().filter(|a| a.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub values: ValueFunction,
    pub policy: Policy,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    /// Bellman residual (max-norm) after every sweep.
    pub residuals: Vec<f64>,
}

/// Synchronous value iteration from `v = 0`.
///
/// Stops once the max-norm Bellman residual drops below `tol`, otherwise after
/// `max_iter` sweeps with `converged = false`. Greedy ties go to the lowest
/// action id.
pub fn value_iteration(mdp: &TabularMdp, tol: f64, max_iter: usize) -> Result<Solution> {
    if !(tol > 0.0) {
        return Err(Error::config("tol", "must be > 0"));
    }
    let n = mdp.n_states();
    let mut v = vec![0.0; n];
    let mut residuals = Vec::new();
    let mut converged = false;
    for _ in 0..max_iter {
        let next: Vec<f64> = (0..n)
            .map(|s| {
                if mdp.is_goal(s) {
                    0.0
                } else {
                    (0..mdp.n_actions())
                        .map(|a| mdp.q_value(s, a, &v))
                        .fold(f64::INFINITY, f64::min)
                }
            })
            .collect();
        let residual = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        residuals.push(residual);
        if residual < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("value iteration stopped after {max_iter} sweeps without converging");
    }

    let q: Vec<Vec<f64>> = (0..n)
        .map(|s| {
            (0..mdp.n_actions())
                .map(|a| if mdp.is_goal(s) { 0.0 } else { mdp.q_value(s, a, &v) })
                .collect()
        })
        .collect();
    let policy = Policy::new(
        (0..n)
            .map(|s| (!mdp.is_goal(s)).then(|| greedy(&q[s])))
            .collect(),
    );
    Ok(Solution {
        values: ValueFunction { v, q },
        policy,
        iterations: residuals.len(),
        residual: residuals.last().copied().unwrap_or(0.0),
        converged,
        residuals,
    })
}

fn greedy(q: &[f64]) -> usize {
    let best = q.iter().copied().fold(f64::INFINITY, f64::min);
    let slack = TIE_TOL * best.abs().max(1.0);
    q.iter().position(|&x| x <= best + slack).unwrap_or(0)
}

/// Plans with default solver settings and fails loudly on non-convergence.
pub fn plan(mdp: &TabularMdp) -> Result<Solution> {
    let sol = value_iteration(mdp, 1e-9, 100_000)?;
    if !sol.converged {
        return Err(Error::InvalidMdp(format!(
            "value iteration did not converge (residual {})",
            sol.residual
        )));
    }
    Ok(sol)
}

/// Returns a copy of `mdp` whose non-goal costs are
/// `theta1 * task_cost + theta2 * penalty`.
pub fn compose_cost(
    mdp: &TabularMdp,
    penalty: &PenaltyTable,
    weights: ObjectiveWeights,
) -> Result<TabularMdp> {
    ObjectiveWeights::new(weights.theta1, weights.theta2)?;
    if penalty.n_states() != mdp.n_states() {
        return Err(Error::InvalidMdp("penalty table does not match the state count".into()));
    }
    let mut out = mdp.clone();
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let p = penalty.get(s, a);
            if !(p >= 0.0) {
                return Err(Error::NegativePenalty { state: s, action: a, value: p });
            }
            if !mdp.is_goal(s) {
                out.costs[s][a] = weights.theta1 * mdp.costs[s][a] + weights.theta2 * p;
            }
        }
    }
    out.validate()?;
    Ok(out)
}

pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub trials: usize,
    pub mean_penalty: f64,
    pub stderr_penalty: f64,
    pub mean_cost: f64,
    pub stderr_cost: f64,
    /// Episodes that reached a goal before the horizon.
    pub reached_goal: usize,
    pub penalties: Vec<f64>,
    pub costs: Vec<f64>,
}

/// Monte-Carlo evaluation of `policy` on the task cost and the true NSE penalty.
///
/// Trial `i` draws from its own stream derived from `(seed, i)`. Episodes that
/// hit the horizon keep their truncated totals.
pub fn evaluate_policy(
    mdp: &TabularMdp,
    policy: &Policy,
    true_nse: &TrueNseModel,
    trials: usize,
    horizon: usize,
    seed: u64,
) -> Result<EvalReport> {
    if trials == 0 {
        return Err(Error::config("trials", "must be >= 1"));
    }
    let outcomes = (0..trials)
        .map(|trial| rollout(mdp, policy, true_nse, horizon, seed, trial))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_rollouts(&outcomes))
}

/// One scored episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rollout {
    pub penalty: f64,
    pub cost: f64,
    pub reached_goal: bool,
}

/// Runs episode `trial` of the rollouts seeded by `seed`. Episode `i` of
/// [`evaluate_policy`] is exactly `rollout(.., seed, i)`.
pub fn rollout(
    mdp: &TabularMdp,
    policy: &Policy,
    true_nse: &TrueNseModel,
    horizon: usize,
    seed: u64,
    trial: usize,
) -> Result<Rollout> {
    let mut rng = stream_rng(seed, stream::ROLLOUT, trial as u64);
    let mut s = mdp.start();
    let (mut cost, mut penalty) = (0.0, 0.0);
    for _ in 0..horizon {
        if mdp.is_goal(s) {
            break;
        }
        let a = policy.action(s).ok_or(Error::PolicyUndefined(s))?;
        cost += mdp.cost(s, a);
        penalty += true_nse.severity(s, a).penalty();
        s = sample_next(mdp.transitions(s, a), rng.random::<f64>());
    }
    Ok(Rollout { penalty, cost, reached_goal: mdp.is_goal(s) })
}

impl EvalReport {
    pub fn from_rollouts(outcomes: &[Rollout]) -> Self {
        let penalties: Vec<f64> = outcomes.iter().map(|o| o.penalty).collect();
        let costs: Vec<f64> = outcomes.iter().map(|o| o.cost).collect();
        let (mean_penalty, stderr_penalty) = mean_stderr(&penalties);
        let (mean_cost, stderr_cost) = mean_stderr(&costs);
        EvalReport {
            trials: outcomes.len(),
            mean_penalty,
            stderr_penalty,
            mean_cost,
            stderr_cost,
            reached_goal: outcomes.iter().filter(|o| o.reached_goal).count(),
            penalties,
            costs,
        }
    }
}

fn sample_next(outs: &[Transition], u: f64) -> usize {
    let mut acc = 0.0;
    for t in outs {
        acc += t.prob;
        if u < acc {
            return t.next;
        }
    }
    outs.last().map(|t| t.next).expect("validated transition list is non-empty")
}
