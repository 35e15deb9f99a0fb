//! Resumable learning sessions with a pluggable feedback source.
//!
//! A session wraps [`AfsLearner`] with the bookkeeping a remote client needs:
//! a lifecycle state, render-ready query views, stale-answer protection, a
//! model view and an append-only event log that can rebuild the session.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::afs::{simulated_human, AfsLearner, IterationRecord, LearnerSettings, NseModel, Strategy};
use crate::config::Config;
use crate::envs::{CellView, Domain, DomainKind, DomainSpec, Marker};
use crate::feedback::{Answer, FeedbackFormat, FeedbackResponse, FormatPreference, SimulatedHuman};
use crate::mdp::{compose_cost, evaluate_policy, plan, EvalReport};
use crate::{Error, Result, SeverityLabel};

pub const EVENT_LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    #[default]
    Human,
    Simulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    /// A query is posed but nobody has fetched it yet.
    Querying,
    /// The query has been handed out and an answer is expected.
    AwaitingAnswer,
    Exhausted,
}

fn default_trials() -> usize {
    100
}

/// Body of a create request. Either `preset` or `domain` names the world;
/// unset sections fall back to the preset (or to defaults).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<DomainKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning: Option<LearnerSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preferences: Option<Vec<FormatPreference>>,
    pub budget: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: SessionMode,
    /// Show true severities in the model view. Unset: always for simulated
    /// sessions, only after exhaustion for human ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reveal_truth: Option<bool>,
    /// Rollouts used for model-view metrics.
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
}

impl SessionConfig {
    pub fn preset(kind: DomainKind, budget: f64, seed: u64, mode: SessionMode) -> Self {
        Self {
            preset: Some(kind),
            domain: None,
            learning: None,
            preferences: None,
            budget,
            seed,
            mode,
            reveal_truth: None,
            trials: default_trials(),
            horizon: None,
        }
    }

    /// Resolves presets and defaults into a full configuration.
    pub fn resolve(&self) -> Result<Config> {
        let mut config = match (&self.preset, &self.domain) {
            (Some(_), Some(_)) => return Err(Error::config("domain", "give either preset or domain, not both")),
            (None, None) => return Err(Error::config("domain", "a preset or a domain is required")),
            (Some(kind), None) => Config::preset(*kind),
            (None, Some(spec)) => Config::from_toml_str(&format!("[domain]\nname = \"{}\"\n", spec.name))
                .map(|mut c| {
                    c.domain = spec.clone();
                    c
                })?,
        };
        if let Some(l) = &self.learning {
            config.learning = l.clone();
        }
        if let Some(p) = &self.preferences {
            config.preferences.formats = Some(p.clone());
        }
        if !(self.budget.is_finite() && self.budget >= 0.0) {
            return Err(Error::config("budget", "must be finite and >= 0"));
        }
        if self.trials == 0 {
            return Err(Error::config("trials", "must be >= 1"));
        }
        if self.horizon == Some(0) {
            return Err(Error::config("horizon", "must be >= 1"));
        }
        config.experiment.seed = self.seed;
        config.experiment.trials = self.trials;
        config.experiment.horizon = self.horizon;
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionView {
    pub id: usize,
    pub name: String,
    pub glyph: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridView {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<CellView>,
    pub actions: Vec<ActionView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemView {
    pub index: usize,
    pub state: usize,
    pub position: [i32; 2],
    pub features: BTreeMap<String, u8>,
    pub markers: Vec<Marker>,
    /// The robot's action(s) for this item.
    pub actions: Vec<ActionView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<[i32; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormatStatus {
    pub psi: f64,
    pub cost: f64,
    pub score: f64,
    pub count: u32,
    pub utility: f64,
}

/// Everything a client needs to render and answer the outstanding query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryView {
    pub session: String,
    pub t: u32,
    pub state: SessionState,
    pub format: FeedbackFormat,
    pub cost: f64,
    pub remaining_budget: f64,
    pub severity_choices: Vec<SeverityLabel>,
    pub grid: GridView,
    pub items: Vec<ItemView>,
    pub formats: BTreeMap<FeedbackFormat, FormatStatus>,
}

/// A client's answer to query `t`. `format` defaults to the requested one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackSubmission {
    pub t: u32,
    #[serde(default)]
    pub declined: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<FeedbackFormat>,
    #[serde(default)]
    pub answers: Vec<Answer>,
}

impl FeedbackSubmission {
    pub fn from_response(t: u32, r: &FeedbackResponse) -> Self {
        Self { t, declined: r.declined, format: Some(r.format_given), answers: r.answers.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session: String,
    pub state: SessionState,
    pub t: u32,
    pub remaining_budget: f64,
    pub dataset_size: usize,
    pub scores: BTreeMap<FeedbackFormat, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last: Option<IterationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionModel {
    pub action: usize,
    pub predicted: SeverityLabel,
    pub penalty: f64,
    pub proba: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<SeverityLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateModel {
    pub state: usize,
    pub position: [i32; 2],
    pub coords: Vec<i32>,
    pub goal: bool,
    pub actions: Vec<ActionModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub trials: usize,
    pub mean_penalty: f64,
    pub stderr_penalty: f64,
    pub mean_cost: f64,
    pub stderr_cost: f64,
    pub reached_goal: usize,
}

impl From<&EvalReport> for Metrics {
    fn from(r: &EvalReport) -> Self {
        Self {
            trials: r.trials,
            mean_penalty: r.mean_penalty,
            stderr_penalty: r.stderr_penalty,
            mean_cost: r.mean_cost,
            stderr_cost: r.stderr_cost,
            reached_goal: r.reached_goal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelView {
    pub session: String,
    pub state: SessionState,
    pub t: u32,
    pub truth_revealed: bool,
    pub grid: GridView,
    pub states: Vec<StateModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
}

/// One line of a session event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case", deny_unknown_fields)]
pub enum SessionEvent {
    Created { v: u32, session: String, config: SessionConfig },
    /// An accepted answer; for simulated sessions the generated one.
    Feedback { v: u32, t: u32, response: FeedbackResponse },
}

pub struct Session {
    id: String,
    config: SessionConfig,
    resolved: Config,
    learner: AfsLearner,
    human: Option<SimulatedHuman>,
    fetched: bool,
    events: Vec<SessionEvent>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session").field("id", &self.id).field("state", &self.state()).finish()
    }
}

impl Session {
    pub fn create(id: impl Into<String>, config: SessionConfig) -> Result<Self> {
        let resolved = config.resolve()?;
        let domain = Arc::new(resolved.build_domain()?);
        Self::with_domain(id, config, resolved, domain)
    }

    fn with_domain(id: impl Into<String>, config: SessionConfig, resolved: Config, domain: Arc<Domain>) -> Result<Self> {
        let pref = resolved.preference_model()?;
        let human = match config.mode {
            SessionMode::Simulated => Some(simulated_human(&domain, &resolved.learning, config.seed)?),
            SessionMode::Human => None,
        };
        let mut learner =
            AfsLearner::new(domain, pref, resolved.learning.clone(), Strategy::default(), config.budget, config.seed)?;
        learner.begin_iteration()?;
        let id = id.into();
        let events = vec![SessionEvent::Created { v: EVENT_LOG_VERSION, session: id.clone(), config: config.clone() }];
        Ok(Self { id, config, resolved, learner, human, fetched: false, events })
    }

    pub fn id(&self) -> &str {
        &self.id
    }
    pub fn config(&self) -> &SessionConfig {
        &self.config
    }
    pub fn learner(&self) -> &AfsLearner {
        &self.learner
    }
    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }
    pub fn run_log(&self) -> &[IterationRecord] {
        self.learner.run_log()
    }
    pub fn domain(&self) -> &Arc<Domain> {
        self.learner.domain()
    }

    pub fn state(&self) -> SessionState {
        match (self.learner.pending(), self.fetched) {
            (None, _) => SessionState::Exhausted,
            (Some(_), false) => SessionState::Querying,
            (Some(_), true) => SessionState::AwaitingAnswer,
        }
    }

    /// The iteration number of the outstanding (or next) query.
    pub fn t(&self) -> u32 {
        self.learner.bandit().t
    }

    fn grid(&self) -> GridView {
        let d = self.domain();
        GridView {
            width: d.width,
            height: d.height,
            cells: d.cells().to_vec(),
            actions: (0..d.mdp.n_actions()).map(|a| self.action_view(a)).collect(),
        }
    }

    fn action_view(&self, a: usize) -> ActionView {
        let d = self.domain();
        ActionView { id: a, name: d.mdp.action_names()[a].clone(), glyph: d.action_glyph(a).to_string() }
    }

    fn format_table(&self, utilities: &BTreeMap<FeedbackFormat, f64>) -> BTreeMap<FeedbackFormat, FormatStatus> {
        let pref = self.learner.preferences();
        let bandit = self.learner.bandit();
        pref.formats()
            .map(|f| {
                let status = FormatStatus {
                    psi: pref.psi(f),
                    cost: pref.cost(f),
                    score: bandit.v[&f],
                    count: bandit.n[&f],
                    utility: utilities.get(&f).copied().unwrap_or(0.0),
                };
                (f, status)
            })
            .collect()
    }

    /// Marks the outstanding query as handed out and renders it. Repeated
    /// calls return identical views.
    pub fn next_query(&mut self) -> Result<QueryView> {
        let view = self.peek_query()?;
        self.fetched = true;
        Ok(QueryView { state: SessionState::AwaitingAnswer, ..view })
    }

    /// Renders the outstanding query without changing the state.
    pub fn peek_query(&self) -> Result<QueryView> {
        let pending = self.learner.pending().ok_or_else(|| Error::SessionExhausted(self.id.clone()))?;
        let d = self.domain();
        let names = &d.features.names;
        let items = pending
            .query
            .items
            .iter()
            .enumerate()
            .map(|(index, item)| {
                let (x, y) = d.mdp.state(item.state).position();
                ItemView {
                    index,
                    state: item.state,
                    position: [x, y],
                    features: names.iter().cloned().zip(d.features.state_features(item.state).iter().copied()).collect(),
                    markers: d.markers(item.state),
                    actions: item.actions.iter().map(|&a| self.action_view(a)).collect(),
                    outcome: item.outcome,
                }
            })
            .collect();
        let severity_choices =
            if pending.format.is_annotated() { vec![SeverityLabel::Mild, SeverityLabel::Severe] } else { Vec::new() };
        Ok(QueryView {
            session: self.id.clone(),
            t: pending.t,
            state: self.state(),
            format: pending.format,
            cost: self.learner.preferences().cost(pending.format),
            remaining_budget: self.learner.bandit().budget,
            severity_choices,
            grid: self.grid(),
            items,
            formats: self.format_table(&pending.utilities),
        })
    }

    fn summary(&self, last: Option<IterationRecord>) -> SessionSummary {
        SessionSummary {
            session: self.id.clone(),
            state: self.state(),
            t: self.t(),
            remaining_budget: self.learner.bandit().budget,
            dataset_size: self.learner.dataset().len(),
            scores: self.learner.bandit().v.clone(),
            last,
        }
    }

    pub fn status(&self) -> SessionSummary {
        self.summary(self.run_log().last().cloned())
    }

    fn apply(&mut self, t: u32, response: FeedbackResponse) -> Result<IterationRecord> {
        let record = self.learner.apply_response(&response)?;
        self.events.push(SessionEvent::Feedback { v: EVENT_LOG_VERSION, t, response });
        self.fetched = false;
        self.learner.begin_iteration()?;
        Ok(record)
    }

    /// Accepts a human answer. Rejected submissions leave the session as it was.
    pub fn submit(&mut self, submission: FeedbackSubmission) -> Result<SessionSummary> {
        if self.config.mode == SessionMode::Simulated {
            return Err(Error::Conflict("simulated sessions answer themselves; use step".into()));
        }
        let pending = self.learner.pending().ok_or_else(|| Error::SessionExhausted(self.id.clone()))?;
        if submission.t != pending.t {
            return Err(Error::Conflict(format!("answer is for t={} but the outstanding query is t={}", submission.t, pending.t)));
        }
        let response = FeedbackResponse {
            format_given: submission.format.unwrap_or(pending.format),
            declined: submission.declined,
            answers: submission.answers,
        };
        let record = self.apply(submission.t, response)?;
        Ok(self.summary(Some(record)))
    }

    /// Lets the simulated human answer up to `max` queries (all remaining if
    /// `None`).
    pub fn step(&mut self, max: Option<u32>) -> Result<SessionSummary> {
        let pref = self.learner.preferences().clone();
        let mut last = None;
        let mut done = 0;
        while max.is_none_or(|m| done < m) {
            let Some(pending) = self.learner.pending() else { break };
            let t = pending.t;
            let human = self
                .human
                .as_mut()
                .ok_or_else(|| Error::Conflict("human sessions need submitted answers".into()))?;
            let response = human.respond(&pending.query, &pref);
            last = Some(self.apply(t, response)?);
            done += 1;
        }
        Ok(self.summary(last))
    }

    pub fn truth_revealed(&self) -> bool {
        match self.config.reveal_truth {
            Some(r) => r,
            None => self.config.mode == SessionMode::Simulated || self.state() == SessionState::Exhausted,
        }
    }

    pub fn model(&self) -> &NseModel {
        self.learner.model()
    }

    /// Predicted severities, the replanned policy and optionally rollout metrics.
    pub fn model_view(&self, with_metrics: bool) -> Result<ModelView> {
        let d = self.domain();
        let n_a = d.mdp.n_actions();
        let model = self.learner.model();
        let labels = model.labels(d);
        let weights = self.resolved.learning.weights()?;
        let policy = plan(&compose_cost(&d.mdp, &model.penalty_table(d), weights)?)?.policy;
        let reveal = self.truth_revealed();
        let states = (0..d.mdp.n_states())
            .map(|s| {
                let rec = d.mdp.state(s);
                let (x, y) = rec.position();
                StateModel {
                    state: s,
                    position: [x, y],
                    coords: rec.coords.clone(),
                    goal: d.mdp.is_goal(s),
                    actions: (0..n_a)
                        .map(|a| ActionModel {
                            action: a,
                            predicted: labels[s][a],
                            penalty: labels[s][a].penalty(),
                            proba: model.proba(d.features.pair_features(s, a), a, n_a),
                            truth: reveal.then(|| d.nse.severity(s, a)),
                        })
                        .collect(),
                    policy: policy.action(s),
                }
            })
            .collect();
        let metrics = if with_metrics {
            let horizon = self.resolved.experiment.horizon.unwrap_or_else(|| d.mdp.default_horizon());
            let report = evaluate_policy(&d.mdp, &policy, &d.nse, self.config.trials, horizon, self.config.seed)?;
            Some(Metrics::from(&report))
        } else {
            None
        };
        Ok(ModelView {
            session: self.id.clone(),
            state: self.state(),
            t: self.t(),
            truth_revealed: reveal,
            grid: self.grid(),
            states,
            metrics,
        })
    }

    /// Rebuilds a session from its event log. Simulated answers are
    /// regenerated and must match the recorded ones.
    pub fn replay(events: &[SessionEvent]) -> Result<Self> {
        let mut iter = events.iter();
        let Some(SessionEvent::Created { v, session, config }) = iter.next() else {
            return Err(Error::ModelFormat("event log must start with a created event".into()));
        };
        check_version(*v)?;
        let mut s = Session::create(session.clone(), config.clone())?;
        for e in iter {
            let SessionEvent::Feedback { v, t, response } = e else {
                return Err(Error::ModelFormat("created event may appear only once".into()));
            };
            check_version(*v)?;
            match s.config.mode {
                SessionMode::Human => {
                    s.submit(FeedbackSubmission::from_response(*t, response))?;
                }
                SessionMode::Simulated => {
                    s.step(Some(1))?;
                    match s.events.last() {
                        Some(SessionEvent::Feedback { t: t2, response: r2, .. }) if t2 == t && r2 == response => {}
                        _ => return Err(Error::Conflict(format!("replayed answer for t={t} differs from the log"))),
                    }
                }
            }
        }
        Ok(s)
    }
}

fn check_version(v: u32) -> Result<()> {
    if v != EVENT_LOG_VERSION {
        return Err(Error::ModelFormat(format!("unsupported event log version {v}")));
    }
    Ok(())
}

pub fn write_event(out: &mut impl Write, event: &SessionEvent) -> Result<()> {
    serde_json::to_writer(&mut *out, event)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_events(input: impl BufRead) -> Result<Vec<SessionEvent>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::afs::{afs_learn, Strategy};

    fn vase(budget: f64, mode: SessionMode) -> Session {
        Session::create("s1", SessionConfig::preset(DomainKind::Vase, budget, 3, mode)).unwrap()
    }

    #[test]
    fn lifecycle() {
        let mut s = vase(6.0, SessionMode::Human);
        assert_eq!(s.state(), SessionState::Querying);
        let q = s.next_query().unwrap();
        assert_eq!(q.t, 1);
        assert_eq!(s.state(), SessionState::AwaitingAnswer);
        assert_eq!(s.next_query().unwrap(), q);
        let sum = s.submit(FeedbackSubmission { t: 1, declined: true, format: None, answers: vec![] }).unwrap();
        assert_eq!(sum.dataset_size, 0);
        assert_eq!(sum.remaining_budget, 6.0 - q.cost);
        assert_eq!(s.state(), SessionState::Querying);
        assert_eq!(s.next_query().unwrap().t, 2);
    }

    #[test]
    fn zero_budget_is_exhausted() {
        let mut s = vase(0.0, SessionMode::Human);
        assert_eq!(s.state(), SessionState::Exhausted);
        assert!(matches!(s.next_query(), Err(Error::SessionExhausted(_))));
        assert!(s.truth_revealed());
    }

    #[test]
    fn stale_and_malformed_answers_change_nothing() {
        let mut s = vase(10.0, SessionMode::Human);
        let q = s.next_query().unwrap();
        let stale = FeedbackSubmission { t: q.t + 1, declined: true, format: None, answers: vec![] };
        assert!(matches!(s.submit(stale), Err(Error::Conflict(_))));
        let short = FeedbackSubmission { t: q.t, declined: false, format: None, answers: vec![] };
        assert!(matches!(s.submit(short), Err(Error::MalformedResponse { .. })));
        assert_eq!(s.next_query().unwrap(), q);
        assert_eq!(s.events().len(), 1);
    }

    #[test]
    fn simulated_session_matches_offline_learning() {
        let mut s = vase(20.0, SessionMode::Simulated);
        s.step(None).unwrap();
        assert_eq!(s.state(), SessionState::Exhausted);
        let cfg = Config::preset(DomainKind::Vase);
        let d = Arc::new(cfg.build_domain().unwrap());
        let mut human = simulated_human(&d, &cfg.learning, 3).unwrap();
        let pref = cfg.preference_model().unwrap();
        let out = afs_learn(d.clone(), &mut human, &pref, &cfg.learning, Strategy::default(), 20.0, 3).unwrap();
        assert_eq!(s.run_log(), out.log.as_slice());
        assert_eq!(s.model().labels(&d), out.model.labels(&d));
    }

    #[test]
    fn event_log_replays() {
        let mut s = vase(12.0, SessionMode::Simulated);
        s.step(Some(3)).unwrap();
        let mut buf = Vec::new();
        for e in s.events() {
            write_event(&mut buf, e).unwrap();
        }
        let events = read_events(buf.as_slice()).unwrap();
        let r = Session::replay(&events).unwrap();
        assert_eq!(r.run_log(), s.run_log());
        assert_eq!(r.peek_query().ok(), s.peek_query().ok());
    }

    #[test]
    fn truth_hidden_from_humans_until_exhaustion() {
        let s = vase(4.0, SessionMode::Human);
        let view = s.model_view(false).unwrap();
        assert!(!view.truth_revealed);
        assert!(view.states.iter().all(|st| st.actions.iter().all(|a| a.truth.is_none())));
        assert!(view.states.iter().all(|st| st.actions.iter().all(|a| a.predicted == SeverityLabel::Acceptable)));
    }
}
