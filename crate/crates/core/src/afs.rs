//! Adaptive feedback selection.
//!
//! The learner keeps two per-pair label distributions: `p`, built from the
//! feedback received so far, and `q`, the current classifier's vote fractions.
//! Each iteration it
//!
//! 1. weights state clusters by how far `p` moved away from the model that
//!    existed when those clusters were last sampled, and draws critical states
//!    accordingly;
//! 2. picks the feedback format with the best utility
//!    `psi / ((V + eps) * cost) + sqrt(ln t / (n + eps))`;
//! 3. on receipt, relabels, retrains the forest, refreshes `q` and sets the
//!    format's score `V` to the mean KL between `p` and the new `q` over the
//!    critical states.
//!
//! The budget is charged on every iteration, answered or not.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::envs::Domain;
use crate::feedback::{
    encode_pair, generate_query, to_labels, Dataset, FeedbackFormat, FeedbackResponse, LabelRules,
    PreferenceModel, Query, SimulatedHuman,
};
use crate::forest::{conservative_argmax, randomized_search, train, SearchSpace, SeverityForest};
use crate::mdp::{plan, ObjectiveWeights, Policy};
use crate::rng::{derive_seed, stream, stream_rng, Rng};
use crate::{Error, PenaltyTable, Result, SeverityLabel};

/// A distribution over `{acceptable, mild, severe}`.
pub type Categorical = [f64; 3];

pub const ACCEPTABLE: Categorical = [1.0, 0.0, 0.0];

/// Adds `alpha` to every coordinate and renormalizes.
pub fn smooth(p: &Categorical, alpha: f64) -> Categorical {
    let z: f64 = p.iter().sum::<f64>() + 3.0 * alpha;
    p.map(|x| (x + alpha) / z)
}

/// `KL(p || q)` in nats; zero-probability terms of `p` contribute nothing.
pub fn kl_categorical(p: &Categorical, q: &Categorical) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum()
}

/// Sum over actions of the KL between smoothed label distributions.
pub fn kl_state(p: &[Categorical], q: &[Categorical], smoothing: f64) -> f64 {
    p.iter()
        .zip(q)
        .map(|(pa, qa)| kl_categorical(&smooth(pa, smoothing), &smooth(qa, smoothing)).max(0.0))
        .sum()
}

/// Per-pair belief tables, both starting at "everything is acceptable".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefPair {
    pub p: Vec<Vec<Categorical>>,
    pub q: Vec<Vec<Categorical>>,
}

impl BeliefPair {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        let table = vec![vec![ACCEPTABLE; n_actions]; n_states];
        Self { p: table.clone(), q: table }
    }
}

/// Mean per-state KL over `states`; zero for an empty list.
pub fn mean_kl(states: &[usize], p: &[Vec<Categorical>], q: &[Vec<Categorical>], smoothing: f64) -> f64 {
    if states.is_empty() {
        return 0.0;
    }
    states.iter().map(|&s| kl_state(&p[s], &q[s], smoothing)).sum::<f64>() / states.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMethod {
    #[serde(alias = "kmodes")]
    Kmeans,
    Kcenters,
}

impl std::str::FromStr for ClusterMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kmeans" | "kmodes" => Ok(ClusterMethod::Kmeans),
            "kcenters" => Ok(ClusterMethod::Kcenters),
            _ => Err(Error::config("learning.cluster_method", format!("unknown method `{s}`"))),
        }
    }
}

/// `1 - |a & b| / |a | b|` over binary vectors; two all-zero vectors are identical.
pub fn jaccard_distance(a: &[u8], b: &[u8]) -> f64 {
    let (mut inter, mut union) = (0u32, 0u32);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x != 0, y != 0);
        inter += (x && y) as u32;
        union += (x || y) as u32;
    }
    if union == 0 {
        0.0
    } else {
        1.0 - inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub method: ClusterMethod,
    /// State ids per cluster, ascending.
    pub members: Vec<Vec<usize>>,
    pub weights: Vec<f64>,
    /// States drawn from each cluster in the previous iteration.
    pub last_sampled: Vec<Vec<usize>>,
    assignment: HashMap<usize, usize>,
}

impl ClusterSet {
    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn cluster_of(&self, state: usize) -> Option<usize> {
        self.assignment.get(&state).copied()
    }

    /// Uniform before any feedback, proportional to `gains` afterwards, and
    /// uniform again if every gain is zero.
    pub fn update_weights(&mut self, gains: &[f64], feedback_received: bool) {
        let k = self.k();
        let total: f64 = gains.iter().sum();
        self.weights = if feedback_received && total > 0.0 {
            gains.iter().map(|g| g / total).collect()
        } else {
            vec![1.0 / k as f64; k]
        };
    }
}

/// Groups states by their binary features. Identical feature vectors always
/// share a cluster, so `k` may not exceed the number of distinct vectors.
pub fn cluster_states(states: &[usize], features: &[Vec<u8>], k: usize, method: ClusterMethod, seed: u64) -> Result<ClusterSet> {
    if states.len() != features.len() {
        return Err(Error::config("features", "one feature vector per state is required"));
    }
    let mut distinct: BTreeMap<&[u8], usize> = BTreeMap::new();
    for f in features {
        *distinct.entry(f.as_slice()).or_default() += 1;
    }
    let vectors: Vec<&[u8]> = distinct.keys().copied().collect();
    let counts: Vec<usize> = distinct.values().copied().collect();
    if k == 0 || k > vectors.len() {
        return Err(Error::TooManyClusters { k, max: vectors.len() });
    }
    let mut rng = stream_rng(seed, stream::CLUSTER, 0);
    let labels = match method {
        ClusterMethod::Kmeans => k_modes(&vectors, &counts, k, &mut rng),
        ClusterMethod::Kcenters => k_centers(&vectors, k, &mut rng),
    };
    let mut members = vec![Vec::new(); k];
    let mut assignment = HashMap::with_capacity(states.len());
    for (&s, f) in states.iter().zip(features) {
        let c = labels[vectors.binary_search(&f.as_slice()).expect("present")];
        members[c].push(s);
        assignment.insert(s, c);
    }
    for m in &mut members {
        m.sort_unstable();
    }
    Ok(ClusterSet {
        method,
        members,
        weights: vec![1.0 / k as f64; k],
        last_sampled: vec![Vec::new(); k],
        assignment,
    })
}

fn nearest(v: &[u8], centers: &[Vec<u8>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = jaccard_distance(v, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn k_centers(vectors: &[&[u8]], k: usize, rng: &mut Rng) -> Vec<usize> {
    let mut centers = vec![vectors[rng.random_range(0..vectors.len())].to_vec()];
    while centers.len() < k {
        let mut far = (0, f64::NEG_INFINITY);
        for (i, v) in vectors.iter().enumerate() {
            let d = nearest(v, &centers).1;
            if d > far.1 {
                far = (i, d);
            }
        }
        centers.push(vectors[far.0].to_vec());
    }
    vectors.iter().map(|v| nearest(v, &centers).0).collect()
}

/// Lloyd-style iterations with Jaccard distance and per-dimension weighted
/// majority centroids, seeded like k-means++.
fn k_modes(vectors: &[&[u8]], counts: &[usize], k: usize, rng: &mut Rng) -> Vec<usize> {
    let mut centers = vec![vectors[rng.random_range(0..vectors.len())].to_vec()];
    while centers.len() < k {
        let weights: Vec<f64> = vectors
            .iter()
            .zip(counts)
            .map(|(v, &c)| nearest(v, &centers).1.powi(2) * c as f64)
            .collect();
        let pick = match WeightedIndex::new(&weights) {
            Ok(w) => w.sample(rng),
            Err(_) => (0..vectors.len()).find(|&i| !centers.iter().any(|c| c == vectors[i])).expect("k <= distinct"),
        };
        centers.push(vectors[pick].to_vec());
    }
    let dims = vectors[0].len();
    let mut labels: Vec<usize> = Vec::new();
    for _ in 0..100 {
        let mut next: Vec<usize> = vectors.iter().map(|v| nearest(v, &centers).0).collect();
        // refill empty clusters with the worst-fitting vector of a shared cluster
        for c in 0..k {
            if next.contains(&c) {
                continue;
            }
            let mut sizes = vec![0; k];
            for &l in &next {
                sizes[l] += 1;
            }
            let donor = (0..vectors.len())
                .filter(|&i| sizes[next[i]] > 1)
                .max_by(|&a, &b| {
                    let da = jaccard_distance(vectors[a], &centers[next[a]]);
                    let db = jaccard_distance(vectors[b], &centers[next[b]]);
                    da.total_cmp(&db).then(b.cmp(&a))
                })
                .expect("k <= distinct vectors");
            next[donor] = c;
            centers[c] = vectors[donor].to_vec();
        }
        if next == labels {
            break;
        }
        labels = next;
        for (c, center) in centers.iter_mut().enumerate() {
            let mut ones = vec![0usize; dims];
            let mut total = 0;
            for (i, v) in vectors.iter().enumerate() {
                if labels[i] == c {
                    total += counts[i];
                    for (d, &bit) in v.iter().enumerate() {
                        ones[d] += counts[i] * (bit != 0) as usize;
                    }
                }
            }
            *center = ones.iter().map(|&o| (2 * o > total) as u8).collect();
        }
    }
    labels
}

/// Per-cluster quotas: `max(1, floor(W_k n))`, trimmed from the largest quotas
/// if that overshoots `n`, with any remainder going to the heaviest cluster.
pub fn critical_counts(weights: &[f64], n: usize) -> Result<Vec<usize>> {
    let k = weights.len();
    if n < k || k == 0 {
        return Err(Error::TooFewCriticalStates { n, clusters: k });
    }
    let mut counts: Vec<usize> = weights.iter().map(|w| ((w * n as f64 + 1e-9).floor() as usize).max(1)).collect();
    while counts.iter().sum::<usize>() > n {
        let i = (0..k).rev().max_by_key(|&i| counts[i]).expect("k > 0");
        counts[i] -= 1;
    }
    let remainder = n - counts.iter().sum::<usize>();
    let heaviest = argmax_first(weights);
    counts[heaviest] += remainder;
    Ok(counts)
}

fn argmax_first(xs: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..xs.len() {
        if xs[i] > xs[best] {
            best = i;
        }
    }
    best
}

/// Draws `n` critical states according to the cluster weights and records them
/// as each cluster's last sample.
pub fn select_critical_states(n: usize, clusters: &mut ClusterSet, rng: &mut Rng) -> Result<Vec<usize>> {
    let counts = critical_counts(&clusters.weights, n)?;
    let mut omega = Vec::with_capacity(n);
    for (c, &want) in counts.iter().enumerate() {
        let pool = &clusters.members[c];
        let drawn = sample_states(pool, want, rng);
        clusters.last_sampled[c] = drawn.clone();
        omega.extend(drawn);
    }
    Ok(omega)
}

fn sample_states(pool: &[usize], want: usize, rng: &mut Rng) -> Vec<usize> {
    if want <= pool.len() {
        rand::seq::index::sample(rng, pool.len(), want).into_iter().map(|i| pool[i]).collect()
    } else {
        log::debug!("cluster of {} states asked for {want}; sampling with replacement", pool.len());
        (0..want).map(|_| pool[rng.random_range(0..pool.len())]).collect()
    }
}

/// Bandit statistics over formats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditState {
    pub v: BTreeMap<FeedbackFormat, f64>,
    pub n: BTreeMap<FeedbackFormat, u32>,
    pub t: u32,
    pub epsilon: f64,
    pub budget: f64,
}

impl BanditState {
    pub fn new(pref: &PreferenceModel, budget: f64, epsilon: f64) -> Self {
        Self {
            v: pref.formats().map(|f| (f, 0.0)).collect(),
            n: pref.formats().map(|f| (f, 0)).collect(),
            t: 1,
            epsilon,
            budget,
        }
    }

    pub fn affordable(&self, pref: &PreferenceModel, f: FeedbackFormat) -> bool {
        pref.cost(f) <= self.budget + 1e-9
    }
}

/// Exploitation term over exploration bonus, natural log.
pub fn feedback_utility(f: FeedbackFormat, pref: &PreferenceModel, bandit: &BanditState) -> f64 {
    let v = bandit.v.get(&f).copied().unwrap_or(0.0);
    let n = bandit.n.get(&f).copied().unwrap_or(0) as f64;
    let eps = bandit.epsilon;
    pref.psi(f) / ((v + eps) * pref.cost(f)) + ((bandit.t.max(1) as f64).ln() / (n + eps)).sqrt()
}

pub fn utilities(pref: &PreferenceModel, bandit: &BanditState) -> BTreeMap<FeedbackFormat, f64> {
    pref.formats().map(|f| (f, feedback_utility(f, pref, bandit))).collect()
}

/// Highest-utility affordable format; ties go to the earlier format.
pub fn select_format(pref: &PreferenceModel, bandit: &BanditState) -> Option<FeedbackFormat> {
    let mut best: Option<(FeedbackFormat, f64)> = None;
    for f in pref.formats().filter(|&f| bandit.affordable(pref, f)) {
        let u = feedback_utility(f, pref, bandit);
        if best.is_none_or(|(_, b)| u > b) {
            best = Some((f, u));
        }
    }
    best.map(|(f, _)| f)
}

/// Replaces `V_f` and bumps `n_f` on receipt; always charges the budget and
/// advances `t`.
#[allow(clippy::too_many_arguments)]
pub fn update_format_score(
    bandit: &mut BanditState,
    requested: FeedbackFormat,
    received: bool,
    cost: f64,
    omega: &[usize],
    p: &[Vec<Categorical>],
    q: &[Vec<Categorical>],
    smoothing: f64,
) {
    if received {
        bandit.v.insert(requested, mean_kl(omega, p, q, smoothing));
        *bandit.n.entry(requested).or_default() += 1;
    }
    bandit.budget -= cost;
    bandit.t += 1;
}

fn default_n_critical() -> usize {
    10
}
fn default_k() -> usize {
    3
}
fn default_cluster_method() -> ClusterMethod {
    ClusterMethod::Kmeans
}
fn default_small() -> f64 {
    1e-3
}
fn default_candidates() -> usize {
    10
}
fn default_folds() -> usize {
    3
}
fn default_one() -> f64 {
    1.0
}
fn default_sigma() -> f64 {
    0.5
}
fn default_half() -> f64 {
    0.5
}

/// The `[learning]` section of a config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSettings {
    #[serde(default = "default_n_critical")]
    pub n_critical: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_cluster_method")]
    pub cluster_method: ClusterMethod,
    #[serde(default = "default_small")]
    pub smoothing: f64,
    #[serde(default = "default_small")]
    pub epsilon: f64,
    #[serde(default = "default_candidates")]
    pub n_candidates: usize,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub search: SearchSpace,
    #[serde(default = "default_one")]
    pub theta1: f64,
    #[serde(default = "default_one")]
    pub theta2: f64,
    #[serde(default = "default_sigma")]
    pub gaze_sigma: f64,
    #[serde(default = "default_one")]
    pub gaze_threshold: f64,
    #[serde(default)]
    pub dam_label_demo: bool,
    /// Fraction of the budget spent before a format pair switches formats.
    #[serde(default = "default_half")]
    pub switch_fraction: f64,
}

impl Default for LearnerSettings {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

impl LearnerSettings {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("learning.k", "must be >= 1"));
        }
        if self.n_critical < self.k {
            return Err(Error::config("learning.n_critical", format!("must be >= k = {}", self.k)));
        }
        for (field, v) in [("learning.smoothing", self.smoothing), ("learning.epsilon", self.epsilon)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.folds < 2 {
            return Err(Error::config("learning.folds", "must be >= 2"));
        }
        if !(0.0..=1.0).contains(&self.switch_fraction) {
            return Err(Error::config("learning.switch_fraction", "must lie in [0, 1]"));
        }
        if !(self.gaze_sigma >= 0.0 && self.gaze_threshold >= 0.0) {
            return Err(Error::config("learning.gaze_sigma", "gaze parameters must be non-negative"));
        }
        self.weights()?;
        self.search.validate()
    }

    pub fn weights(&self) -> Result<ObjectiveWeights> {
        ObjectiveWeights::new(self.theta1, self.theta2)
    }

    pub fn label_rules(&self) -> LabelRules {
        LabelRules { gaze_threshold: self.gaze_threshold, dam_label_demo: self.dam_label_demo }
    }
}

/// How the learner picks each iteration's format.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatPolicy {
    Adaptive,
    Cheapest,
    MostProbable,
    /// `first` until `switch_fraction` of the budget is spent, then `second`.
    Schedule { first: FeedbackFormat, second: Option<FeedbackFormat> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalPolicy {
    Clustered,
    UniformRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub format: FormatPolicy,
    pub critical: CriticalPolicy,
}

impl Default for Strategy {
    fn default() -> Self {
        Self { format: FormatPolicy::Adaptive, critical: CriticalPolicy::Clustered }
    }
}

/// The learned severity model: the all-acceptable prior until data arrives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NseModel {
    Prior,
    Forest { forest: SeverityForest },
}

impl NseModel {
    pub fn proba(&self, features: &[u8], action: usize, n_actions: usize) -> Categorical {
        match self {
            NseModel::Prior => ACCEPTABLE,
            NseModel::Forest { forest } => forest.predict_proba(&encode_pair(features, action, n_actions)),
        }
    }

    pub fn label(&self, features: &[u8], action: usize, n_actions: usize) -> SeverityLabel {
        conservative_argmax(&self.proba(features, action, n_actions))
    }

    /// Predicted label of every `(state, action)` in `domain`.
    pub fn labels(&self, domain: &Domain) -> Vec<Vec<SeverityLabel>> {
        let n_a = domain.mdp.n_actions();
        let mut memo: HashMap<(&[u8], usize), SeverityLabel> = HashMap::new();
        (0..domain.mdp.n_states())
            .map(|s| {
                (0..n_a)
                    .map(|a| {
                        let f = domain.features.pair_features(s, a);
                        *memo.entry((f, a)).or_insert_with(|| self.label(f, a, n_a))
                    })
                    .collect()
            })
            .collect()
    }

    pub fn penalty_table(&self, domain: &Domain) -> PenaltyTable {
        PenaltyTable::new(
            self.labels(domain)
                .into_iter()
                .map(|row| row.into_iter().map(SeverityLabel::penalty).collect())
                .collect(),
        )
    }
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: u32,
    pub budget_before: f64,
    pub budget_after: f64,
    pub format_requested: FeedbackFormat,
    pub received: bool,
    pub omega: Vec<usize>,
    pub cluster_weights: Vec<f64>,
    /// Utilities at selection time.
    pub utilities: BTreeMap<FeedbackFormat, f64>,
    /// Scores and counts after this iteration's update.
    pub v: BTreeMap<FeedbackFormat, f64>,
    pub n: BTreeMap<FeedbackFormat, u32>,
    pub dataset_size: usize,
}

/// The query the learner is waiting on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingQuery {
    pub t: u32,
    pub budget_before: f64,
    pub format: FeedbackFormat,
    pub omega: Vec<usize>,
    pub query: Query,
    pub cluster_weights: Vec<f64>,
    pub utilities: BTreeMap<FeedbackFormat, f64>,
}

/// The learning loop as a resumable state machine: `begin_iteration` poses a
/// query, `apply_response` consumes the answer (or a decline).
#[derive(Debug, Clone)]
pub struct AfsLearner {
    domain: Arc<Domain>,
    pref: PreferenceModel,
    settings: LearnerSettings,
    strategy: Strategy,
    seed: u64,
    primary: Policy,
    clusters: ClusterSet,
    beliefs: BeliefPair,
    /// `q` as it stood when the previous critical set was drawn.
    q_prev: Option<Vec<Vec<Categorical>>>,
    dataset: Dataset,
    model: NseModel,
    bandit: BanditState,
    initial_budget: f64,
    rng: Rng,
    pending: Option<PendingQuery>,
    log: Vec<IterationRecord>,
    exhausted: bool,
}

impl AfsLearner {
    pub fn new(
        domain: Arc<Domain>,
        pref: PreferenceModel,
        settings: LearnerSettings,
        strategy: Strategy,
        budget: f64,
        seed: u64,
    ) -> Result<Self> {
        settings.validate()?;
        if !(budget >= 0.0 && budget.is_finite()) {
            return Err(Error::config("budget", "must be finite and >= 0"));
        }
        if let FormatPolicy::Schedule { first, second } = &strategy.format {
            for f in std::iter::once(first).chain(second) {
                if !pref.contains(*f) {
                    return Err(Error::config("preferences.formats", format!("scheduled format {f} is not offered")));
                }
            }
        }
        let mdp = &domain.mdp;
        let primary = plan(mdp)?.policy;
        let states: Vec<usize> = mdp.non_goal_states().collect();
        let feats: Vec<Vec<u8>> = states.iter().map(|&s| domain.features.state_features(s).to_vec()).collect();
        let clusters = cluster_states(&states, &feats, settings.k, settings.cluster_method, seed)?;
        let beliefs = BeliefPair::new(mdp.n_states(), mdp.n_actions());
        let bandit = BanditState::new(&pref, budget, settings.epsilon);
        Ok(Self {
            domain,
            pref,
            settings,
            strategy,
            seed,
            primary,
            clusters,
            beliefs,
            q_prev: None,
            dataset: Dataset::new(),
            model: NseModel::Prior,
            bandit,
            initial_budget: budget,
            rng: stream_rng(seed, stream::LEARNER, 0),
            pending: None,
            log: Vec::new(),
            exhausted: false,
        })
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }
    pub fn preferences(&self) -> &PreferenceModel {
        &self.pref
    }
    pub fn settings(&self) -> &LearnerSettings {
        &self.settings
    }
    pub fn primary_policy(&self) -> &Policy {
        &self.primary
    }
    pub fn clusters(&self) -> &ClusterSet {
        &self.clusters
    }
    pub fn beliefs(&self) -> &BeliefPair {
        &self.beliefs
    }
    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }
    pub fn model(&self) -> &NseModel {
        &self.model
    }
    pub fn bandit(&self) -> &BanditState {
        &self.bandit
    }
    pub fn run_log(&self) -> &[IterationRecord] {
        &self.log
    }
    pub fn pending(&self) -> Option<&PendingQuery> {
        self.pending.as_ref()
    }
    pub fn is_exhausted(&self) -> bool {
        self.exhausted
    }

    fn choose_format(&self) -> Option<FeedbackFormat> {
        let affordable: Vec<FeedbackFormat> =
            self.pref.formats().filter(|&f| self.bandit.affordable(&self.pref, f)).collect();
        let first_best = |key: &dyn Fn(FeedbackFormat) -> f64| {
            let mut best: Option<(FeedbackFormat, f64)> = None;
            for &f in &affordable {
                let k = key(f);
                if best.is_none_or(|(_, b)| k > b) {
                    best = Some((f, k));
                }
            }
            best.map(|(f, _)| f)
        };
        match &self.strategy.format {
            FormatPolicy::Adaptive => select_format(&self.pref, &self.bandit),
            FormatPolicy::Cheapest => first_best(&|f| -self.pref.cost(f)),
            FormatPolicy::MostProbable => first_best(&|f| self.pref.psi(f)),
            FormatPolicy::Schedule { first, second } => {
                let spent = self.initial_budget - self.bandit.budget;
                let f = match second {
                    Some(s) if spent >= self.settings.switch_fraction * self.initial_budget - 1e-9 => *s,
                    _ => *first,
                };
                affordable.contains(&f).then_some(f)
            }
        }
    }

    /// Poses the next query, or returns `None` once no format is affordable.
    /// Calling it again before answering returns the same query.
    pub fn begin_iteration(&mut self) -> Result<Option<&PendingQuery>> {
        if self.pending.is_some() {
            return Ok(self.pending.as_ref());
        }
        if self.exhausted {
            return Ok(None);
        }
        let Some(format) = self.choose_format() else {
            self.exhausted = true;
            if self.dataset.is_empty() {
                log::info!("learning ended without feedback; returning the all-acceptable prior");
            }
            return Ok(None);
        };
        let utilities = utilities(&self.pref, &self.bandit);

        let omega = match self.strategy.critical {
            CriticalPolicy::Clustered => {
                let received = self.bandit.n.values().any(|&n| n > 0);
                let gains: Vec<f64> = match &self.q_prev {
                    Some(q_prev) => (0..self.clusters.k())
                        .map(|c| mean_kl(&self.clusters.last_sampled[c], &self.beliefs.p, q_prev, self.settings.smoothing))
                        .collect(),
                    None => vec![0.0; self.clusters.k()],
                };
                self.clusters.update_weights(&gains, received);
                select_critical_states(self.settings.n_critical, &mut self.clusters, &mut self.rng)?
            }
            CriticalPolicy::UniformRandom => {
                let pool: Vec<usize> = self.domain.mdp.non_goal_states().collect();
                sample_states(&pool, self.settings.n_critical, &mut self.rng)
            }
        };
        self.q_prev = Some(self.beliefs.q.clone());
        let query = generate_query(
            format,
            &omega,
            &self.primary,
            self.domain.mdp.n_actions(),
            &self.domain.features,
            &mut self.rng,
        )?;
        self.pending = Some(PendingQuery {
            t: self.bandit.t,
            budget_before: self.bandit.budget,
            format,
            omega,
            query,
            cluster_weights: self.clusters.weights.clone(),
            utilities,
        });
        Ok(self.pending.as_ref())
    }

    /// Consumes the answer to the pending query. A malformed response is
    /// rejected without changing any state.
    pub fn apply_response(&mut self, response: &FeedbackResponse) -> Result<IterationRecord> {
        let pending = self.pending.as_ref().ok_or_else(|| Error::Conflict("no query is outstanding".into()))?;
        if !response.declined && response.format_given != pending.format {
            return Err(Error::MalformedResponse {
                item: 0,
                reason: format!("expected format {}, got {}", pending.format, response.format_given),
            });
        }
        let labels = to_labels(
            response,
            &pending.query,
            self.domain.mdp.n_actions(),
            &self.domain.features,
            self.settings.label_rules(),
        )?;
        let pending = self.pending.take().expect("checked above");
        let received = !response.declined;
        if received {
            for e in &labels {
                self.beliefs.p[e.state][e.action] = e.label.one_hot();
            }
            self.dataset.extend(labels);
            self.retrain(pending.t)?;
        }
        update_format_score(
            &mut self.bandit,
            pending.format,
            received,
            self.pref.cost(pending.format),
            &pending.omega,
            &self.beliefs.p,
            &self.beliefs.q,
            self.settings.smoothing,
        );
        let record = IterationRecord {
            t: pending.t,
            budget_before: pending.budget_before,
            budget_after: self.bandit.budget,
            format_requested: pending.format,
            received,
            omega: pending.omega,
            cluster_weights: pending.cluster_weights,
            utilities: pending.utilities,
            v: self.bandit.v.clone(),
            n: self.bandit.n.clone(),
            dataset_size: self.dataset.len(),
        };
        self.log.push(record.clone());
        Ok(record)
    }

    fn retrain(&mut self, t: u32) -> Result<()> {
        let n_a = self.domain.mdp.n_actions();
        let (x, y) = self.dataset.encode(n_a);
        let search_seed = derive_seed(self.seed, stream::SEARCH, t as u64);
        let found = randomized_search(&x, &y, &self.settings.search, self.settings.n_candidates, self.settings.folds, search_seed)?;
        let forest = train(&x, &y, &found.best)?;
        let model = NseModel::Forest { forest };
        let mut memo: HashMap<(&[u8], usize), Categorical> = HashMap::new();
        let features = &self.domain.features;
        for (s, row) in self.beliefs.q.iter_mut().enumerate() {
            for (a, q) in row.iter_mut().enumerate() {
                let f = features.pair_features(s, a);
                *q = *memo.entry((f, a)).or_insert_with(|| model.proba(f, a, n_a));
            }
        }
        self.model = model;
        Ok(())
    }
}

/// Result of a complete learning run.
#[derive(Debug, Clone)]
pub struct LearnOutcome {
    pub model: NseModel,
    pub log: Vec<IterationRecord>,
    pub dataset: Dataset,
}

/// Runs the loop to exhaustion against a simulated human.
pub fn afs_learn(
    domain: Arc<Domain>,
    human: &mut SimulatedHuman,
    pref: &PreferenceModel,
    settings: &LearnerSettings,
    strategy: Strategy,
    budget: f64,
    seed: u64,
) -> Result<LearnOutcome> {
    let mut learner = AfsLearner::new(domain, pref.clone(), settings.clone(), strategy, budget, seed)?;
    while let Some(pending) = learner.begin_iteration()? {
        let response = human.respond(&pending.query, pref);
        learner.apply_response(&response)?;
    }
    Ok(LearnOutcome { model: learner.model.clone(), log: learner.log, dataset: learner.dataset })
}

/// Builds the simulated human used by the learning loop for `seed`.
pub fn simulated_human(domain: &Domain, settings: &LearnerSettings, seed: u64) -> Result<SimulatedHuman> {
    SimulatedHuman::new(domain, settings.weights()?, settings.gaze_sigma, stream_rng(seed, stream::HUMAN, 0))
}
