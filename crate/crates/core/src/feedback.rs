//! Feedback formats, queries, the simulated human and label extraction.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::Rng as _;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::envs::{Domain, FeatureMap};
use crate::mdp::{compose_cost, plan, ObjectiveWeights, Policy};
use crate::rng::Rng;
use crate::{Error, Result, SeverityLabel, TrueNseModel};

/// The seven ways a human can give feedback. Declaration order is the
/// tie-break order for format selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackFormat {
    Approval,
    AnnotatedApproval,
    Corrections,
    AnnotatedCorrections,
    Rank,
    #[serde(alias = "dam")]
    DemoActionMismatch,
    Gaze,
}

impl FeedbackFormat {
    pub const ALL: [FeedbackFormat; 7] = [
        FeedbackFormat::Approval,
        FeedbackFormat::AnnotatedApproval,
        FeedbackFormat::Corrections,
        FeedbackFormat::AnnotatedCorrections,
        FeedbackFormat::Rank,
        FeedbackFormat::DemoActionMismatch,
        FeedbackFormat::Gaze,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeedbackFormat::Approval => "approval",
            FeedbackFormat::AnnotatedApproval => "annotated_approval",
            FeedbackFormat::Corrections => "corrections",
            FeedbackFormat::AnnotatedCorrections => "annotated_corrections",
            FeedbackFormat::Rank => "rank",
            FeedbackFormat::DemoActionMismatch => "demo_action_mismatch",
            FeedbackFormat::Gaze => "gaze",
        }
    }

    pub fn is_annotated(self) -> bool {
        matches!(self, FeedbackFormat::AnnotatedApproval | FeedbackFormat::AnnotatedCorrections)
    }

    /// Formats whose items carry the robot's own policy action.
    pub fn uses_policy_action(self) -> bool {
        matches!(
            self,
            FeedbackFormat::Corrections
                | FeedbackFormat::AnnotatedCorrections
                | FeedbackFormat::DemoActionMismatch
                | FeedbackFormat::Gaze
        )
    }
}

impl fmt::Display for FeedbackFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeedbackFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| *c != '_' && *c != '-').collect::<String>().to_lowercase();
        let found = match key.as_str() {
            "approval" => FeedbackFormat::Approval,
            "annotatedapproval" => FeedbackFormat::AnnotatedApproval,
            "corrections" | "correction" => FeedbackFormat::Corrections,
            "annotatedcorrections" | "annotatedcorrection" => FeedbackFormat::AnnotatedCorrections,
            "rank" | "ranking" => FeedbackFormat::Rank,
            "demoactionmismatch" | "dam" => FeedbackFormat::DemoActionMismatch,
            "gaze" => FeedbackFormat::Gaze,
            _ => return Err(Error::config("format", format!("unknown feedback format `{s}`"))),
        };
        Ok(found)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormatPreference {
    pub format: FeedbackFormat,
    /// Probability that a request in this format is answered.
    pub psi: f64,
    /// Budget units charged per request.
    pub cost: f64,
}

/// The formats a human offers, with availability `psi` and cost per format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<FormatPreference>", into = "Vec<FormatPreference>")]
pub struct PreferenceModel {
    formats: Vec<FormatPreference>,
}

impl PreferenceModel {
    pub fn new(mut formats: Vec<FormatPreference>) -> Result<Self> {
        if formats.is_empty() {
            return Err(Error::config("preferences.formats", "at least one format is required"));
        }
        formats.sort_by_key(|p| p.format);
        for w in formats.windows(2) {
            if w[0].format == w[1].format {
                return Err(Error::config("preferences.formats", format!("{} listed twice", w[0].format)));
            }
        }
        for p in &formats {
            if !(0.0..=1.0).contains(&p.psi) {
                return Err(Error::config("preferences.formats.psi", format!("{}: psi {} outside [0, 1]", p.format, p.psi)));
            }
            if !(p.cost > 0.0 && p.cost.is_finite()) {
                return Err(Error::config("preferences.formats.cost", format!("{}: cost must be positive", p.format)));
            }
        }
        Ok(Self { formats })
    }

    /// Artifact defaults; see `configs/*.toml`.
    pub fn defaults() -> Self {
        use FeedbackFormat::*;
        let table = [
            (Approval, 0.9, 1.0),
            (AnnotatedApproval, 0.8, 2.0),
            (Corrections, 0.6, 3.0),
            (AnnotatedCorrections, 0.5, 4.0),
            (Rank, 0.9, 1.0),
            (DemoActionMismatch, 0.7, 2.0),
            (Gaze, 0.8, 1.0),
        ];
        Self::new(table.iter().map(|&(format, psi, cost)| FormatPreference { format, psi, cost }).collect())
            .expect("default preference model is valid")
    }

    /// Restricts to the given formats, keeping their psi and cost.
    pub fn only(&self, keep: &[FeedbackFormat]) -> Result<Self> {
        Self::new(self.formats.iter().filter(|p| keep.contains(&p.format)).copied().collect())
    }

    /// Same formats and costs with every psi set to `psi`.
    pub fn with_psi(&self, psi: f64) -> Result<Self> {
        Self::new(self.formats.iter().map(|p| FormatPreference { psi, ..*p }).collect())
    }

    pub fn formats(&self) -> impl Iterator<Item = FeedbackFormat> + '_ {
        self.formats.iter().map(|p| p.format)
    }

    pub fn entries(&self) -> &[FormatPreference] {
        &self.formats
    }

    pub fn get(&self, f: FeedbackFormat) -> Option<&FormatPreference> {
        self.formats.iter().find(|p| p.format == f)
    }

    pub fn contains(&self, f: FeedbackFormat) -> bool {
        self.get(f).is_some()
    }

    pub fn psi(&self, f: FeedbackFormat) -> f64 {
        self.get(f).map_or(0.0, |p| p.psi)
    }

    pub fn cost(&self, f: FeedbackFormat) -> f64 {
        self.get(f).map_or(f64::INFINITY, |p| p.cost)
    }

    pub fn min_cost(&self) -> f64 {
        self.formats.iter().map(|p| p.cost).fold(f64::INFINITY, f64::min)
    }
}

impl TryFrom<Vec<FormatPreference>> for PreferenceModel {
    type Error = Error;

    fn try_from(v: Vec<FormatPreference>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<PreferenceModel> for Vec<FormatPreference> {
    fn from(p: PreferenceModel) -> Self {
        p.formats
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryItem {
    pub state: usize,
    /// One action, or two distinct actions for `rank`.
    pub actions: Vec<usize>,
    /// Where the robot's action is aimed; set for `gaze`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<[i32; 2]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub format: FeedbackFormat,
    pub items: Vec<QueryItem>,
}

/// Builds one item per critical state.
pub fn generate_query(
    format: FeedbackFormat,
    omega: &[usize],
    policy: &Policy,
    n_actions: usize,
    features: &FeatureMap,
    rng: &mut Rng,
) -> Result<Query> {
    if omega.is_empty() {
        return Err(Error::config("omega", "critical set is empty"));
    }
    let mut items = Vec::with_capacity(omega.len());
    for &s in omega {
        let actions = match format {
            FeedbackFormat::Approval | FeedbackFormat::AnnotatedApproval => vec![rng.random_range(0..n_actions)],
            FeedbackFormat::Rank if n_actions < 2 => {
                log::warn!("state {s} has fewer than two actions; rank item degenerates to approval");
                vec![rng.random_range(0..n_actions)]
            }
            FeedbackFormat::Rank => rand::seq::index::sample(rng, n_actions, 2).into_vec(),
            _ => vec![policy.action(s).ok_or(Error::PolicyUndefined(s))?],
        };
        let outcome = (format == FeedbackFormat::Gaze).then(|| {
            let (x, y) = features.outcome_position(s, actions[0]);
            [x, y]
        });
        items.push(QueryItem { state: s, actions, outcome });
    }
    Ok(Query { format, items })
}

/// A per-item answer. The `kind` tag must match the query format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Answer {
    /// Approval formats. `severity` is required on a disapproval in the
    /// annotated variant.
    Approval {
        approve: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        severity: Option<SeverityLabel>,
    },
    /// Correction formats. `correction = None` means the human let the robot act.
    Correction {
        #[serde(default)]
        correction: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        severity: Option<SeverityLabel>,
    },
    Rank { chosen: usize },
    Demo { action: usize },
    Gaze { point: [f64; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackResponse {
    pub format_given: FeedbackFormat,
    pub declined: bool,
    #[serde(default)]
    pub answers: Vec<Answer>,
}

impl FeedbackResponse {
    pub fn declined(format: FeedbackFormat) -> Self {
        Self { format_given: format, declined: true, answers: Vec::new() }
    }

    pub fn answered(format: FeedbackFormat, answers: Vec<Answer>) -> Self {
        Self { format_given: format, declined: false, answers }
    }
}

/// One severity-labelled `(state, action)` pair with its classifier features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub state: usize,
    pub action: usize,
    pub features: Vec<u8>,
    pub label: SeverityLabel,
}

/// Label-extraction settings that are not part of the response itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelRules {
    /// Gaze points within this Euclidean distance of the outcome count as aligned.
    pub gaze_threshold: f64,
    /// Also label the demonstrated action as acceptable.
    pub dam_label_demo: bool,
}

impl Default for LabelRules {
    fn default() -> Self {
        Self { gaze_threshold: 1.0, dam_label_demo: false }
    }
}

fn malformed(item: usize, reason: impl Into<String>) -> Error {
    Error::MalformedResponse { item, reason: reason.into() }
}

fn annotation(item: usize, severity: Option<SeverityLabel>) -> Result<SeverityLabel> {
    match severity {
        None => Err(malformed(item, "disapproval is missing its severity annotation")),
        Some(SeverityLabel::Acceptable) => Err(malformed(item, "annotation must be mild or severe")),
        Some(l) => Ok(l),
    }
}

/// Maps a non-declined response to labelled examples.
pub fn to_labels(
    response: &FeedbackResponse,
    query: &Query,
    n_actions: usize,
    features: &FeatureMap,
    rules: LabelRules,
) -> Result<Vec<LabeledExample>> {
    use SeverityLabel::{Acceptable, Severe};

    if response.declined {
        return Ok(Vec::new());
    }
    if response.format_given != query.format {
        return Err(malformed(
            0,
            format!("response format {} does not match the query format {}", response.format_given, query.format),
        ));
    }
    if response.answers.len() != query.items.len() {
        return Err(malformed(
            response.answers.len().min(query.items.len()),
            format!("expected {} answers, got {}", query.items.len(), response.answers.len()),
        ));
    }
    let check_action = |i: usize, a: usize| {
        if a < n_actions {
            Ok(a)
        } else {
            Err(malformed(i, format!("action {a} out of range")))
        }
    };

    let mut out = Vec::new();
    let mut push = |s: usize, a: usize, label: SeverityLabel| {
        out.push(LabeledExample { state: s, action: a, features: features.pair_features(s, a).to_vec(), label });
    };
    for (i, (item, answer)) in query.items.iter().zip(&response.answers).enumerate() {
        let s = item.state;
        let robot = item.actions[0];
        let degenerate_rank = query.format == FeedbackFormat::Rank && item.actions.len() < 2;
        match (query.format, answer) {
            (FeedbackFormat::Approval, Answer::Approval { approve, .. }) => {
                push(s, robot, if *approve { Acceptable } else { Severe });
            }
            (FeedbackFormat::Rank, Answer::Approval { approve, .. }) if degenerate_rank => {
                push(s, robot, if *approve { Acceptable } else { Severe });
            }
            (FeedbackFormat::AnnotatedApproval, Answer::Approval { approve, severity }) => {
                let label = if *approve { Acceptable } else { annotation(i, *severity)? };
                push(s, robot, label);
            }
            (f @ (FeedbackFormat::Corrections | FeedbackFormat::AnnotatedCorrections), Answer::Correction { correction, severity }) => {
                match correction {
                    None => push(s, robot, Acceptable),
                    Some(c) => {
                        let c = check_action(i, *c)?;
                        if c == robot {
                            return Err(malformed(i, "correction repeats the robot's action"));
                        }
                        let robot_label = if f.is_annotated() { annotation(i, *severity)? } else { Severe };
                        for a in 0..n_actions {
                            let label = if a == c {
                                Acceptable
                            } else if a == robot {
                                robot_label
                            } else {
                                Severe
                            };
                            push(s, a, label);
                        }
                    }
                }
            }
            (FeedbackFormat::Rank, Answer::Rank { chosen }) => {
                if !item.actions.contains(chosen) {
                    return Err(malformed(i, format!("chosen action {chosen} was not offered")));
                }
                for &a in &item.actions {
                    push(s, a, if a == *chosen { Acceptable } else { Severe });
                }
            }
            (FeedbackFormat::DemoActionMismatch, Answer::Demo { action }) => {
                let demo = check_action(i, *action)?;
                push(s, robot, if demo == robot { Acceptable } else { Severe });
                if rules.dam_label_demo && demo != robot {
                    push(s, demo, Acceptable);
                }
            }
            (FeedbackFormat::Gaze, Answer::Gaze { point }) => {
                if !point.iter().all(|v| v.is_finite()) {
                    return Err(malformed(i, "gaze point must be finite"));
                }
                let (x, y) = features.outcome_position(s, robot);
                let d = ((point[0] - x as f64).powi(2) + (point[1] - y as f64).powi(2)).sqrt();
                push(s, robot, if d <= rules.gaze_threshold { Acceptable } else { Severe });
            }
            (f, _) => return Err(malformed(i, format!("answer kind does not fit format {f}"))),
        }
    }
    Ok(out)
}

/// Softmax probabilities of `utilities` (higher is preferred).
pub fn softmax(utilities: &[f64]) -> Vec<f64> {
    let max = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = utilities.iter().map(|u| (u - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / z).collect()
}

/// Draws an index with softmax probabilities over `utilities`.
pub fn sample_softmax(utilities: &[f64], rng: &mut Rng) -> usize {
    let dist = WeightedIndex::new(softmax(utilities)).expect("softmax weights are positive");
    dist.sample(rng)
}

/// Truthful oracle answering from the hidden severity model.
///
/// Among safe actions it prefers low composite cost-to-go: utility is the
/// negated Q-value of the true composite objective.
#[derive(Debug, Clone)]
pub struct SimulatedHuman {
    nse: TrueNseModel,
    q: Vec<Vec<f64>>,
    features: FeatureMap,
    gaze_sigma: f64,
    rng: Rng,
}

impl SimulatedHuman {
    pub fn new(domain: &Domain, weights: ObjectiveWeights, gaze_sigma: f64, rng: Rng) -> Result<Self> {
        let composite = compose_cost(&domain.mdp, &domain.nse.penalty_table(), weights)?;
        let q = plan(&composite)?.values.q;
        Ok(Self::with_q(domain.nse.clone(), q, domain.features.clone(), gaze_sigma, rng))
    }

    /// Builds a human from explicit cost Q-values.
    pub fn with_q(nse: TrueNseModel, q: Vec<Vec<f64>>, features: FeatureMap, gaze_sigma: f64, rng: Rng) -> Self {
        Self { nse, q, features, gaze_sigma, rng }
    }

    pub fn nse(&self) -> &TrueNseModel {
        &self.nse
    }

    /// The safe set A* at `s`, or the least-severe actions when nothing is safe.
    pub fn safe_actions(&self, s: usize) -> Vec<usize> {
        let labels = &self.nse.labels()[s];
        let least = labels.iter().copied().min().unwrap_or(SeverityLabel::Acceptable);
        (0..labels.len()).filter(|&a| labels[a] == least).collect()
    }

    fn softmax_over(&mut self, s: usize, actions: &[usize]) -> usize {
        let utilities: Vec<f64> = actions.iter().map(|&a| -self.q[s][a]).collect();
        actions[sample_softmax(&utilities, &mut self.rng)]
    }

    pub fn sample_safe_action(&mut self, s: usize) -> usize {
        let safe = self.safe_actions(s);
        self.softmax_over(s, &safe)
    }

    fn severity(&self, s: usize, a: usize) -> SeverityLabel {
        self.nse.severity(s, a)
    }

    pub fn respond(&mut self, query: &Query, pref: &PreferenceModel) -> FeedbackResponse {
        let format = query.format;
        if self.rng.random::<f64>() >= pref.psi(format) {
            return FeedbackResponse::declined(format);
        }
        let answers = query.items.iter().map(|item| self.answer(format, item)).collect();
        FeedbackResponse::answered(format, answers)
    }

    fn answer(&mut self, format: FeedbackFormat, item: &QueryItem) -> Answer {
        let s = item.state;
        let a = item.actions[0];
        let label = self.severity(s, a);
        match format {
            FeedbackFormat::Approval => Answer::Approval { approve: label.is_acceptable(), severity: None },
            FeedbackFormat::AnnotatedApproval => Answer::Approval {
                approve: label.is_acceptable(),
                severity: (!label.is_acceptable()).then_some(label),
            },
            FeedbackFormat::Corrections | FeedbackFormat::AnnotatedCorrections => {
                let correction = if label.is_acceptable() {
                    None
                } else {
                    // nothing strictly better than the robot's own action: let it act
                    let candidates: Vec<usize> = self.safe_actions(s).into_iter().filter(|&c| c != a).collect();
                    if candidates.is_empty() {
                        log::debug!("state {s}: no alternative to the robot's least-severe action");
                        None
                    } else {
                        Some(self.softmax_over(s, &candidates))
                    }
                };
                let severity = (format.is_annotated() && correction.is_some()).then_some(label);
                Answer::Correction { correction, severity }
            }
            FeedbackFormat::Rank if item.actions.len() < 2 => {
                Answer::Approval { approve: label.is_acceptable(), severity: None }
            }
            FeedbackFormat::Rank => {
                let b = item.actions[1];
                let chosen = match label.cmp(&self.severity(s, b)) {
                    std::cmp::Ordering::Less => a,
                    std::cmp::Ordering::Greater => b,
                    std::cmp::Ordering::Equal => *item.actions.choose(&mut self.rng).expect("two actions"),
                };
                Answer::Rank { chosen }
            }
            FeedbackFormat::DemoActionMismatch => Answer::Demo { action: self.sample_safe_action(s) },
            FeedbackFormat::Gaze => {
                let target = self.sample_safe_action(s);
                let (x, y) = self.features.outcome_position(s, target);
                let noise = Normal::new(0.0, self.gaze_sigma.max(0.0)).expect("finite sigma");
                let point = [x as f64 + noise.sample(&mut self.rng), y as f64 + noise.sample(&mut self.rng)];
                Answer::Gaze { point }
            }
        }
    }
}

/// Accumulated training data keyed by `(state, action)`; newer labels replace
/// older ones.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    rows: BTreeMap<(usize, usize), LabeledExample>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, example: LabeledExample) {
        self.rows.insert((example.state, example.action), example);
    }

    pub fn extend(&mut self, examples: impl IntoIterator<Item = LabeledExample>) {
        for e in examples {
            self.insert(e);
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = &LabeledExample> {
        self.rows.values()
    }

    pub fn get(&self, state: usize, action: usize) -> Option<&LabeledExample> {
        self.rows.get(&(state, action))
    }

    /// Encoded classifier inputs (features then one-hot action) and ordinal targets.
    pub fn encode(&self, n_actions: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
        self.rows
            .values()
            .map(|e| (encode_pair(&e.features, e.action, n_actions), e.label.ordinal()))
            .unzip()
    }
}

pub fn encode_pair(features: &[u8], action: usize, n_actions: usize) -> Vec<f64> {
    let mut x: Vec<f64> = features.iter().map(|&f| f as f64).collect();
    x.extend((0..n_actions).map(|a| (a == action) as u8 as f64));
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{build_vase, DomainKind, DomainSpec};
    use crate::rng::stream_rng;
    use rand::SeedableRng;

    fn vase() -> Domain {
        build_vase(&DomainSpec {
            name: DomainKind::Vase,
            map: Some("S.V\nWC.\n..*".into()),
            slip: 0.8,
            unavoidable: false,
            box_position: None,
            columns: None,
            chicken_column: None,
            window: 2,
            lanes: Vec::new(),
        })
        .unwrap()
    }

    fn human(d: &Domain, seed: u64) -> SimulatedHuman {
        SimulatedHuman::new(d, ObjectiveWeights::default(), 0.5, Rng::seed_from_u64(seed)).unwrap()
    }

    fn state_at(d: &Domain, x: i32, y: i32) -> usize {
        d.mdp.states().iter().position(|r| r.position() == (x, y)).unwrap()
    }

    #[test]
    fn softmax_closed_form() {
        let p = softmax(&[1.0, 0.0]);
        let e = std::f64::consts::E;
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((p[1] - 1.0 / (e + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn least_severe_fallback() {
        let nse = TrueNseModel::new(vec![vec![SeverityLabel::Mild, SeverityLabel::Severe, SeverityLabel::Severe]]);
        let d = vase();
        let mut h = SimulatedHuman::with_q(nse, vec![vec![0.0; 3]], d.features.clone(), 0.5, Rng::seed_from_u64(1));
        for _ in 0..100 {
            assert_eq!(h.sample_safe_action(0), 0);
        }
    }

    #[test]
    fn format_names_round_trip() {
        for f in FeedbackFormat::ALL {
            assert_eq!(f.name().parse::<FeedbackFormat>().unwrap(), f);
            let json = serde_json::to_string(&f).unwrap();
            assert_eq!(serde_json::from_str::<FeedbackFormat>(&json).unwrap(), f);
        }
        assert_eq!("DemoActionMismatch".parse::<FeedbackFormat>().unwrap(), FeedbackFormat::DemoActionMismatch);
        assert!("telepathy".parse::<FeedbackFormat>().is_err());
    }

    #[test]
    fn preference_model_validation() {
        let ok = PreferenceModel::defaults();
        assert_eq!(ok.cost(FeedbackFormat::AnnotatedCorrections), 4.0);
        assert_eq!(ok.psi(FeedbackFormat::Gaze), 0.8);
        assert_eq!(ok.min_cost(), 1.0);
        let bad = |psi, cost| PreferenceModel::new(vec![FormatPreference { format: FeedbackFormat::Rank, psi, cost }]);
        assert!(bad(1.5, 1.0).is_err());
        assert!(bad(0.5, 0.0).is_err());
        assert!(PreferenceModel::new(vec![]).is_err());
    }

    #[test]
    fn query_shapes() {
        let d = vase();
        let policy = plan(&d.mdp).unwrap().policy;
        let omega: Vec<usize> = d.mdp.non_goal_states().take(5).collect();
        let mut rng = stream_rng(3, 0, 0);
        let q = generate_query(FeedbackFormat::Approval, &omega, &policy, 4, &d.features, &mut rng).unwrap();
        assert_eq!(q.items.len(), 5);
        for _ in 0..50 {
            let q = generate_query(FeedbackFormat::Rank, &omega, &policy, 4, &d.features, &mut rng).unwrap();
            assert!(q.items.iter().all(|i| i.actions.len() == 2 && i.actions[0] != i.actions[1]));
        }
        let q = generate_query(FeedbackFormat::Corrections, &omega, &policy, 4, &d.features, &mut rng).unwrap();
        for item in &q.items {
            assert_eq!(Some(item.actions[0]), policy.action(item.state));
        }
        let q = generate_query(FeedbackFormat::Gaze, &omega, &policy, 4, &d.features, &mut rng).unwrap();
        assert!(q.items.iter().all(|i| i.outcome.is_some()));
    }

    #[test]
    fn corrections_interruption_labels_every_action() {
        let d = vase();
        let s = state_at(&d, 1, 0);
        let query = Query { format: FeedbackFormat::Corrections, items: vec![QueryItem { state: s, actions: vec![3], outcome: None }] };
        let resp = FeedbackResponse::answered(
            FeedbackFormat::Corrections,
            vec![Answer::Correction { correction: Some(1), severity: None }],
        );
        let labels = to_labels(&resp, &query, 4, &d.features, LabelRules::default()).unwrap();
        assert_eq!(labels.len(), 4);
        assert_eq!(labels.iter().filter(|e| e.label == SeverityLabel::Acceptable).count(), 1);
        assert_eq!(labels.iter().filter(|e| e.label == SeverityLabel::Severe).count(), 3);
        assert_eq!(labels.iter().find(|e| e.label.is_acceptable()).unwrap().action, 1);
    }

    #[test]
    fn annotated_formats_require_annotations() {
        let d = vase();
        let query = Query {
            format: FeedbackFormat::AnnotatedApproval,
            items: vec![
                QueryItem { state: 0, actions: vec![3], outcome: None },
                QueryItem { state: 1, actions: vec![3], outcome: None },
            ],
        };
        let resp = FeedbackResponse::answered(
            FeedbackFormat::AnnotatedApproval,
            vec![
                Answer::Approval { approve: false, severity: Some(SeverityLabel::Mild) },
                Answer::Approval { approve: false, severity: None },
            ],
        );
        let err = to_labels(&resp, &query, 4, &d.features, LabelRules::default()).unwrap_err();
        assert!(matches!(err, Error::MalformedResponse { item: 1, .. }));
        let mut fixed = resp.clone();
        fixed.answers[1] = Answer::Approval { approve: true, severity: None };
        let labels = to_labels(&fixed, &query, 4, &d.features, LabelRules::default()).unwrap();
        assert_eq!(labels[0].label, SeverityLabel::Mild);
    }

    #[test]
    fn wrong_answer_kind_is_rejected() {
        let d = vase();
        let query = Query { format: FeedbackFormat::Rank, items: vec![QueryItem { state: 0, actions: vec![0, 1], outcome: None }] };
        let resp = FeedbackResponse::answered(FeedbackFormat::Rank, vec![Answer::Demo { action: 0 }]);
        assert!(to_labels(&resp, &query, 4, &d.features, LabelRules::default()).is_err());
        let resp = FeedbackResponse::answered(FeedbackFormat::Rank, vec![Answer::Rank { chosen: 3 }]);
        assert!(to_labels(&resp, &query, 4, &d.features, LabelRules::default()).is_err());
    }

    #[test]
    fn dam_labels_robot_action_only_by_default() {
        let d = vase();
        let query = Query {
            format: FeedbackFormat::DemoActionMismatch,
            items: vec![QueryItem { state: 0, actions: vec![3], outcome: None }],
        };
        let resp = FeedbackResponse::answered(FeedbackFormat::DemoActionMismatch, vec![Answer::Demo { action: 1 }]);
        let labels = to_labels(&resp, &query, 4, &d.features, LabelRules::default()).unwrap();
        assert_eq!(labels.len(), 1);
        assert_eq!((labels[0].action, labels[0].label), (3, SeverityLabel::Severe));
        let rules = LabelRules { dam_label_demo: true, ..LabelRules::default() };
        let labels = to_labels(&resp, &query, 4, &d.features, rules).unwrap();
        assert_eq!(labels.len(), 2);
    }

    #[test]
    fn simulated_answers_are_sound() {
        let d = vase();
        let policy = plan(&d.mdp).unwrap().policy;
        let pref = PreferenceModel::defaults().with_psi(1.0).unwrap();
        let mut h = human(&d, 9);
        let omega: Vec<usize> = d.mdp.non_goal_states().collect();
        let mut rng = stream_rng(9, 0, 0);
        let rules = LabelRules { gaze_threshold: 1.0, dam_label_demo: true };
        for format in FeedbackFormat::ALL {
            for _ in 0..20 {
                let query = generate_query(format, &omega, &policy, 4, &d.features, &mut rng).unwrap();
                let resp = h.respond(&query, &pref);
                let labels = to_labels(&resp, &query, 4, &d.features, rules).unwrap();
                if !format.is_annotated() {
                    assert!(labels.iter().all(|e| e.label != SeverityLabel::Mild));
                }
                if format == FeedbackFormat::Gaze {
                    continue;
                }
                for e in labels.iter().filter(|e| e.label.is_acceptable()) {
                    let all_unsafe = (0..4).all(|a| !d.nse.severity(e.state, a).is_acceptable());
                    let item = query.items.iter().find(|i| i.state == e.state).unwrap();
                    let rank_tie = format == FeedbackFormat::Rank
                        && item.actions.iter().all(|&a| !d.nse.severity(e.state, a).is_acceptable());
                    assert!(
                        d.nse.severity(e.state, e.action).is_acceptable() || all_unsafe || rank_tie,
                        "{format}: {e:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn rank_prefers_the_safer_action() {
        let d = vase();
        let s = state_at(&d, 1, 0);
        // right leads into the vase (severe), down onto the carpet (safe)
        let query = Query { format: FeedbackFormat::Rank, items: vec![QueryItem { state: s, actions: vec![3, 1], outcome: None }] };
        let pref = PreferenceModel::defaults().with_psi(1.0).unwrap();
        let mut h = human(&d, 4);
        for _ in 0..50 {
            assert_eq!(h.respond(&query, &pref).answers, vec![Answer::Rank { chosen: 1 }]);
        }
    }

    #[test]
    fn answers_serialize_with_a_kind_tag() {
        let a = Answer::Correction { correction: Some(2), severity: Some(SeverityLabel::Mild) };
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(json, r#"{"kind":"correction","correction":2,"severity":"mild"}"#);
        let back: Answer = serde_json::from_str(r#"{"kind":"correction","correction":null}"#).unwrap();
        assert_eq!(back, Answer::Correction { correction: None, severity: None });
        assert!(serde_json::from_str::<Answer>(r#"{"kind":"rank","chosen":1,"extra":0}"#).is_err());
    }

    #[test]
    fn dataset_last_write_wins() {
        let mut ds = Dataset::new();
        let ex = |label| LabeledExample { state: 1, action: 2, features: vec![1, 0], label };
        ds.insert(ex(SeverityLabel::Severe));
        ds.insert(ex(SeverityLabel::Acceptable));
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.get(1, 2).unwrap().label, SeverityLabel::Acceptable);
        let (x, y) = ds.encode(4);
        assert_eq!(x, vec![vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]]);
        assert_eq!(y, vec![0]);
    }
}
