//! Random forest severity classifier.
//!
//! CART trees with Gini impurity over encoded `(features, one-hot action)`
//! rows and ordinal targets 0/1/2. Training first sorts rows canonically and
//! collapses identical inputs into class-count vectors, so a forest depends
//! only on the multiset of rows and its seed.

use std::cmp::Ordering;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::{derive_seed, stream, stream_rng};
use crate::{Error, Result, SeverityLabel};

const N_CLASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub feature_subsample: f64,
    pub seed: u64,
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::config("forest.n_trees", "must be >= 1"));
        }
        if self.max_depth == 0 {
            return Err(Error::config("forest.max_depth", "must be >= 1"));
        }
        if self.min_samples_split < 2 {
            return Err(Error::config("forest.min_samples_split", "must be >= 2"));
        }
        if !(self.feature_subsample > 0.0 && self.feature_subsample <= 1.0) {
            return Err(Error::config("forest.feature_subsample", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Candidate values per hyperparameter; search samples each uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub n_trees: Vec<usize>,
    pub max_depth: Vec<usize>,
    pub min_samples_split: Vec<usize>,
    pub feature_subsample: Vec<f64>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            n_trees: vec![10, 25, 50],
            max_depth: (2..=8).collect(),
            min_samples_split: vec![2, 4],
            feature_subsample: vec![0.6, 1.0],
        }
    }
}

impl SearchSpace {
    pub fn single(params: ForestParams) -> Self {
        Self {
            n_trees: vec![params.n_trees],
            max_depth: vec![params.max_depth],
            min_samples_split: vec![params.min_samples_split],
            feature_subsample: vec![params.feature_subsample],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trees.is_empty()
            || self.max_depth.is_empty()
            || self.min_samples_split.is_empty()
            || self.feature_subsample.is_empty()
        {
            return Err(Error::config("learning.search", "every search dimension needs a value"));
        }
        for p in self.points() {
            p.validate()?;
        }
        Ok(())
    }

    fn points(&self) -> impl Iterator<Item = ForestParams> + '_ {
        self.n_trees.iter().flat_map(move |&n_trees| {
            self.max_depth.iter().flat_map(move |&max_depth| {
                self.min_samples_split.iter().flat_map(move |&min_samples_split| {
                    self.feature_subsample.iter().map(move |&feature_subsample| ForestParams {
                        n_trees,
                        max_depth,
                        min_samples_split,
                        feature_subsample,
                        seed: 0,
                    })
                })
            })
        })
    }

    /// Fallback when there is too little data to cross-validate: the median
    /// tree count, the deepest trees, the smallest split size, all features.
    pub fn defaults(&self, seed: u64) -> ForestParams {
        let mut n_trees = self.n_trees.clone();
        n_trees.sort_unstable();
        ForestParams {
            n_trees: n_trees[n_trees.len() / 2],
            max_depth: *self.max_depth.iter().max().expect("validated"),
            min_samples_split: *self.min_samples_split.iter().min().expect("validated"),
            feature_subsample: self.feature_subsample.iter().copied().fold(f64::MIN, f64::max),
            seed,
        }
    }

    fn sample(&self, rng: &mut crate::rng::Rng, seed: u64) -> ForestParams {
        ForestParams {
            n_trees: *self.n_trees.choose(rng).expect("validated"),
            max_depth: *self.max_depth.choose(rng).expect("validated"),
            min_samples_split: *self.min_samples_split.choose(rng).expect("validated"),
            feature_subsample: *self.feature_subsample.choose(rng).expect("validated"),
            seed,
        }
    }
}

/// A node of a fitted tree. Leaves have `feature = None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub feature: Option<usize>,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
    /// Bootstrap class counts reaching this node.
    pub counts: [u32; N_CLASSES],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            let node = &self.nodes[i];
            match node.feature {
                None => return majority(&node.counts),
                Some(f) => i = if x[f] <= node.threshold { node.left } else { node.right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i].feature {
                None => 0,
                Some(_) => 1 + walk(nodes, nodes[i].left).max(walk(nodes, nodes[i].right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Class with the most weight; ties go to the more severe class.
fn majority(counts: &[u32; N_CLASSES]) -> usize {
    let mut best = 0;
    for c in 1..N_CLASSES {
        if counts[c] >= counts[best] {
            best = c;
        }
    }
    best
}

/// Argmax of a probability vector; ties go to the more severe label.
pub fn conservative_argmax(p: &[f64; N_CLASSES]) -> SeverityLabel {
    let mut best = 0;
    for c in 1..N_CLASSES {
        if p[c] >= p[best] - 1e-12 {
            best = c;
        }
    }
    SeverityLabel::from_ordinal(best).expect("three classes")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityForest {
    pub params: ForestParams,
    pub n_inputs: usize,
    pub trees: Vec<Tree>,
}

#[derive(Serialize, Deserialize)]
struct ForestFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    forest: SeverityForest,
}

const FILE_FORMAT: &str = "nse-forest";
const FILE_VERSION: u32 = 1;

impl SeverityForest {
    /// Vote fractions over `{acceptable, mild, severe}`.
    pub fn predict_proba(&self, x: &[f64]) -> [f64; N_CLASSES] {
        let mut votes = [0.0; N_CLASSES];
        for t in &self.trees {
            votes[t.predict(x)] += 1.0;
        }
        let n = self.trees.len() as f64;
        votes.map(|v| v / n)
    }

    pub fn predict(&self, x: &[f64]) -> SeverityLabel {
        conservative_argmax(&self.predict_proba(x))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ForestFile { format: FILE_FORMAT.into(), version: FILE_VERSION, forest: self.clone() };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ForestFile = serde_json::from_str(text)?;
        if file.format != FILE_FORMAT || file.version != FILE_VERSION {
            return Err(Error::ModelFormat(format!("{} v{}", file.format, file.version)));
        }
        Ok(file.forest)
    }
}

/// Training rows grouped by identical input vector.
struct Grouped {
    inputs: Vec<Vec<f64>>,
    /// Index into `inputs` for every row, in canonical row order.
    row_group: Vec<usize>,
    row_class: Vec<usize>,
}

fn cmp_rows(a: &(Vec<f64>, usize), b: &(Vec<f64>, usize)) -> Ordering {
    for (x, y) in a.0.iter().zip(&b.0) {
        match x.total_cmp(y) {
            Ordering::Equal => {}
            o => return o,
        }
    }
    a.1.cmp(&b.1)
}

fn group(x: &[Vec<f64>], y: &[usize]) -> Grouped {
    let mut rows: Vec<(Vec<f64>, usize)> = x.iter().cloned().zip(y.iter().copied()).collect();
    rows.sort_by(cmp_rows);
    let mut inputs: Vec<Vec<f64>> = Vec::new();
    let mut row_group = Vec::with_capacity(rows.len());
    let mut row_class = Vec::with_capacity(rows.len());
    for (xi, yi) in rows {
        if inputs.last() != Some(&xi) {
            inputs.push(xi);
        }
        row_group.push(inputs.len() - 1);
        row_class.push(yi);
    }
    Grouped { inputs, row_group, row_class }
}

fn check_rows(x: &[Vec<f64>], y: &[usize]) -> Result<usize> {
    if x.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if x.len() != y.len() {
        return Err(Error::config("dataset", "inputs and targets differ in length"));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) || y.iter().any(|&c| c >= N_CLASSES) {
        return Err(Error::config("dataset", "ragged inputs or target outside 0..3"));
    }
    Ok(d)
}

/// Fits a forest; deterministic for a fixed `params.seed` and invariant to
/// row order.
pub fn train(x: &[Vec<f64>], y: &[usize], params: &ForestParams) -> Result<SeverityForest> {
    params.validate()?;
    let d = check_rows(x, y)?;
    let g = group(x, y);
    let n = g.row_group.len();
    let trees = (0..params.n_trees)
        .map(|i| {
            let mut rng = stream_rng(params.seed, stream::TREE, i as u64);
            let mut counts = vec![[0u32; N_CLASSES]; g.inputs.len()];
            for _ in 0..n {
                let r = rng.random_range(0..n);
                counts[g.row_group[r]][g.row_class[r]] += 1;
            }
            let live: Vec<usize> = (0..g.inputs.len()).filter(|&i| counts[i].iter().any(|&c| c > 0)).collect();
            let mut builder = TreeBuilder { inputs: &g.inputs, counts: &counts, params, d, rng, nodes: Vec::new() };
            builder.grow(live, 0);
            Tree { nodes: builder.nodes }
        })
        .collect();
    Ok(SeverityForest { params: *params, n_inputs: d, trees })
}

struct TreeBuilder<'a> {
    inputs: &'a [Vec<f64>],
    counts: &'a [[u32; N_CLASSES]],
    params: &'a ForestParams,
    d: usize,
    rng: crate::rng::Rng,
    nodes: Vec<Node>,
}

fn gini(c: &[u32; N_CLASSES]) -> f64 {
    let n: u32 = c.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - c.iter().map(|&k| (k as f64 / n).powi(2)).sum::<f64>()
}

fn add(a: &mut [u32; N_CLASSES], b: &[u32; N_CLASSES]) {
    for c in 0..N_CLASSES {
        a[c] += b[c];
    }
}

impl TreeBuilder<'_> {
    fn grow(&mut self, members: Vec<usize>, depth: usize) -> usize {
        let mut total = [0u32; N_CLASSES];
        for &i in &members {
            add(&mut total, &self.counts[i]);
        }
        let id = self.nodes.len();
        self.nodes.push(Node { feature: None, threshold: 0.0, left: 0, right: 0, counts: total });
        let n: u32 = total.iter().sum();
        let pure = total.iter().filter(|&&c| c > 0).count() <= 1;
        if depth >= self.params.max_depth || (n as usize) < self.params.min_samples_split || pure {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(&members, &total) else {
            return id;
        };
        let (left, right): (Vec<usize>, Vec<usize>) =
            members.into_iter().partition(|&i| self.inputs[i][feature] <= threshold);
        let l = self.grow(left, depth + 1);
        let r = self.grow(right, depth + 1);
        let node = &mut self.nodes[id];
        node.feature = Some(feature);
        node.threshold = threshold;
        node.left = l;
        node.right = r;
        id
    }

    fn best_split(&mut self, members: &[usize], total: &[u32; N_CLASSES]) -> Option<(usize, f64)> {
        let k = ((self.params.feature_subsample * self.d as f64).ceil() as usize).clamp(1, self.d);
        let mut features: Vec<usize> = (0..self.d).collect();
        features.shuffle(&mut self.rng);
        features.truncate(k);
        features.sort_unstable();

        let n_total: u32 = total.iter().sum();
        let parent = gini(total);
        let mut best: Option<(f64, usize, f64)> = None;
        for f in features {
            let mut values: Vec<(f64, [u32; N_CLASSES])> =
                members.iter().map(|&i| (self.inputs[i][f], self.counts[i])).collect();
            values.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut merged: Vec<(f64, [u32; N_CLASSES])> = Vec::new();
            for (v, c) in values {
                match merged.last_mut() {
                    Some(last) if last.0 == v => add(&mut last.1, &c),
                    _ => merged.push((v, c)),
                }
            }
            let mut left = [0u32; N_CLASSES];
            for w in merged.windows(2) {
                add(&mut left, &w[0].1);
                let mut right = *total;
                for c in 0..N_CLASSES {
                    right[c] -= left[c];
                }
                let nl: u32 = left.iter().sum();
                let nr = n_total - nl;
                let impurity = (nl as f64 * gini(&left) + nr as f64 * gini(&right)) / n_total as f64;
                let gain = parent - impurity;
                if gain > 1e-12 && best.is_none_or(|b| gain > b.0 + 1e-12) {
                    best = Some((gain, f, 0.5 * (w[0].0 + w[1].0)));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

/// Outcome of a randomized hyperparameter search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: ForestParams,
    /// `(candidate, cross-validated MSE)` in sampling order.
    pub scores: Vec<(ForestParams, f64)>,
}

/// Mean squared ordinal error of `params` under `folds`-fold cross-validation.
pub fn cross_val_mse(x: &[Vec<f64>], y: &[usize], params: &ForestParams, folds: usize, seed: u64) -> Result<f64> {
    check_rows(x, y)?;
    let mut rows: Vec<(Vec<f64>, usize)> = x.iter().cloned().zip(y.iter().copied()).collect();
    rows.sort_by(cmp_rows);
    let n = rows.len();
    let folds = folds.clamp(2, n.max(2)).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, stream::FOLDS, 0));
    let mut sq = 0.0;
    for k in 0..folds {
        let (mut tx, mut ty, mut vx, mut vy) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (pos, &r) in order.iter().enumerate() {
            if pos % folds == k {
                vx.push(rows[r].0.clone());
                vy.push(rows[r].1);
            } else {
                tx.push(rows[r].0.clone());
                ty.push(rows[r].1);
            }
        }
        let model = train(&tx, &ty, params)?;
        for (xi, &yi) in vx.iter().zip(&vy) {
            let pred = model.predict(xi).ordinal() as f64;
            sq += (pred - yi as f64).powi(2);
        }
    }
    Ok(sq / n as f64)
}

/// Samples `n_candidates` settings from `space` and keeps the one with the
/// lowest cross-validated MSE (earliest wins ties). Fewer rows than folds
/// falls back to leave-one-out; a single row returns the space defaults.
pub fn randomized_search(
    x: &[Vec<f64>],
    y: &[usize],
    space: &SearchSpace,
    n_candidates: usize,
    folds: usize,
    seed: u64,
) -> Result<SearchResult> {
    space.validate()?;
    check_rows(x, y)?;
    if x.len() == 1 {
        log::debug!("single training row; using default forest parameters");
        return Ok(SearchResult { best: space.defaults(seed), scores: Vec::new() });
    }
    let folds = if x.len() < folds { x.len() } else { folds };
    let mut rng = stream_rng(seed, stream::SEARCH, 0);
    let forest_seed = derive_seed(seed, stream::FOREST, 0);
    let mut scores = Vec::with_capacity(n_candidates.max(1));
    let mut best: Option<(ForestParams, f64)> = None;
    for _ in 0..n_candidates.max(1) {
        let p = space.sample(&mut rng, forest_seed);
        let mse = cross_val_mse(x, y, &p, folds, seed)?;
        if best.is_none_or(|(_, b)| mse < b) {
            best = Some((p, mse));
        }
        scores.push((p, mse));
    }
    Ok(SearchResult { best: best.expect("at least one candidate").0, scores })
}
