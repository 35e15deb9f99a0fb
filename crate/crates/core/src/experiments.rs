//! Baselines, budget sweeps and result files.
//!
//! A suite is the cross product of methods and budgets. Every cell learns (if
//! the method learns at all) with the suite seed, replans on the learned
//! penalty and is scored on the same rollout seeds, so rows are paired.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::afs::{afs_learn, simulated_human, CriticalPolicy, FormatPolicy, IterationRecord, NseModel, Strategy};
use crate::config::Config;
use crate::envs::Domain;
use crate::feedback::FeedbackFormat;
use crate::feedback::PreferenceModel;
use crate::mdp::{compose_cost, evaluate_policy, plan, rollout, EvalReport, Policy, Rollout};
use crate::rng::{derive_seed, stream};
use crate::{Error, Result, SeverityLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Naive,
    Oracle,
    Afs,
    CostSensitive,
    MostProbable,
    RandomCritical,
    SingleFormat(FeedbackFormat),
    FormatPair(FeedbackFormat, FeedbackFormat),
}

const VALID_METHODS: &str = "afs, naive, oracle, cost_sensitive, most_probable, random_critical, \
                             single_format:<format>, format_pair:<format>+<format>";

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let unknown = || Error::UnknownMethod { name: s.to_string(), valid: VALID_METHODS.to_string() };
        Ok(match s {
            "afs" => Method::Afs,
            "naive" => Method::Naive,
            "oracle" => Method::Oracle,
            "cost_sensitive" => Method::CostSensitive,
            "most_probable" => Method::MostProbable,
            "random_critical" => Method::RandomCritical,
            "ri" => return Err(Error::UnsupportedMethod),
            _ => {
                if let Some(f) = s.strip_prefix("single_format:") {
                    Method::SingleFormat(f.parse().map_err(|_| unknown())?)
                } else if let Some(pair) = s.strip_prefix("format_pair:") {
                    let (a, b) = pair.split_once('+').ok_or_else(unknown)?;
                    Method::FormatPair(a.parse().map_err(|_| unknown())?, b.parse().map_err(|_| unknown())?)
                } else {
                    return Err(unknown());
                }
            }
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Naive => f.write_str("naive"),
            Method::Oracle => f.write_str("oracle"),
            Method::Afs => f.write_str("afs"),
            Method::CostSensitive => f.write_str("cost_sensitive"),
            Method::MostProbable => f.write_str("most_probable"),
            Method::RandomCritical => f.write_str("random_critical"),
            Method::SingleFormat(x) => write!(f, "single_format:{x}"),
            Method::FormatPair(a, b) => write!(f, "format_pair:{a}+{b}"),
        }
    }
}

impl Method {
    /// Learning strategy, or `None` for methods that use no feedback.
    pub fn strategy(self) -> Option<Strategy> {
        let (format, critical) = match self {
            Method::Naive | Method::Oracle => return None,
            Method::Afs => (FormatPolicy::Adaptive, CriticalPolicy::Clustered),
            Method::CostSensitive => (FormatPolicy::Cheapest, CriticalPolicy::Clustered),
            Method::MostProbable => (FormatPolicy::MostProbable, CriticalPolicy::Clustered),
            Method::RandomCritical => (FormatPolicy::Adaptive, CriticalPolicy::UniformRandom),
            Method::SingleFormat(f) => (FormatPolicy::Schedule { first: f, second: None }, CriticalPolicy::Clustered),
            Method::FormatPair(a, b) => (FormatPolicy::Schedule { first: a, second: Some(b) }, CriticalPolicy::Clustered),
        };
        Some(Strategy { format, critical })
    }

    /// File-name friendly form.
    pub fn slug(self) -> String {
        self.to_string().replace([':', '+'], "_")
    }
}

/// One line of `results.csv`, in column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub domain: String,
    pub budget: f64,
    pub trials: usize,
    pub mean_penalty: f64,
    pub stderr_penalty: f64,
    pub mean_cost: f64,
    pub stderr_cost: f64,
    pub reached_goal: usize,
}

pub const RESULT_COLUMNS: [&str; 9] = [
    "method",
    "domain",
    "budget",
    "trials",
    "mean_penalty",
    "stderr_penalty",
    "mean_cost",
    "stderr_cost",
    "reached_goal",
];

/// Everything produced by one (method, budget) cell.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: Method,
    pub budget: f64,
    pub row: ResultRow,
    pub report: EvalReport,
    /// Model, predicted severities and policy of the first trial.
    pub model: NseModel,
    pub predicted: Vec<Vec<SeverityLabel>>,
    pub policy: Policy,
    /// One run log per trial; empty logs for methods that do not learn.
    pub logs: Vec<Vec<IterationRecord>>,
    pub wall_ms: f64,
}

impl MethodRun {
    /// The first trial's run log.
    pub fn log(&self) -> &[IterationRecord] {
        self.logs.first().map_or(&[], |l| l.as_slice())
    }
}

pub fn horizon(config: &Config, domain: &Domain) -> usize {
    config.experiment.horizon.unwrap_or_else(|| domain.mdp.default_horizon())
}

/// Seed of the learner and simulated human in trial `trial`. Shared by all
/// methods and budgets so that cells are paired.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    derive_seed(seed, stream::TRIAL, trial as u64)
}

struct Trial {
    rollout: Rollout,
    log: Vec<IterationRecord>,
    model: NseModel,
    policy: Policy,
}

fn learned_trial(
    domain: &Arc<Domain>,
    config: &Config,
    pref: &PreferenceModel,
    strategy: Strategy,
    budget: f64,
    trial: usize,
) -> Result<Trial> {
    let seed = trial_seed(config.experiment.seed, trial);
    let mut human = simulated_human(domain, &config.learning, seed)?;
    let out = afs_learn(domain.clone(), &mut human, pref, &config.learning, strategy, budget, seed)?;
    let penalty = out.model.penalty_table(domain);
    let policy = plan(&compose_cost(&domain.mdp, &penalty, config.learning.weights()?)?)?.policy;
    let rollout = rollout(&domain.mdp, &policy, &domain.nse, horizon(config, domain), config.experiment.seed, trial)?;
    Ok(Trial { rollout, log: out.log, model: out.model, policy })
}

/// Scores one cell over `trials` shared-seed trials. A learning method runs
/// the full loop afresh in every trial, replans on what it learned and is
/// scored on that trial's rollout.
pub fn run_method(method: Method, domain: &Arc<Domain>, config: &Config, budget: f64) -> Result<MethodRun> {
    let started = Instant::now();
    let weights = config.learning.weights()?;
    let trials = config.experiment.trials;
    let (report, model, predicted, policy, logs) = match method.strategy() {
        None => {
            let (penalty, predicted) = if method == Method::Oracle {
                (domain.nse.penalty_table(), domain.nse.labels().to_vec())
            } else {
                let prior = NseModel::Prior;
                (prior.penalty_table(domain), prior.labels(domain))
            };
            let policy = plan(&compose_cost(&domain.mdp, &penalty, weights)?)?.policy;
            let report =
                evaluate_policy(&domain.mdp, &policy, &domain.nse, trials, horizon(config, domain), config.experiment.seed)?;
            (report, NseModel::Prior, predicted, policy, vec![Vec::new(); trials])
        }
        Some(strategy) => {
            let pref = config.preference_model()?;
            let mut outcomes: Vec<Trial> = (0..trials)
                .into_par_iter()
                .map(|i| learned_trial(domain, config, &pref, strategy, budget, i))
                .collect::<Result<_>>()?;
            let rollouts: Vec<Rollout> = outcomes.iter().map(|t| t.rollout).collect();
            let logs = outcomes.iter_mut().map(|t| std::mem::take(&mut t.log)).collect();
            let first = outcomes.swap_remove(0);
            let predicted = first.model.labels(domain);
            (EvalReport::from_rollouts(&rollouts), first.model, predicted, first.policy, logs)
        }
    };
    let row = ResultRow {
        method: method.to_string(),
        domain: domain.kind.to_string(),
        budget,
        trials: report.trials,
        mean_penalty: report.mean_penalty,
        stderr_penalty: report.stderr_penalty,
        mean_cost: report.mean_cost,
        stderr_cost: report.stderr_cost,
        reached_goal: report.reached_goal,
    };
    Ok(MethodRun { method, budget, row, report, model, predicted, policy, logs, wall_ms: started.elapsed().as_secs_f64() * 1e3 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub method: String,
    pub budget: f64,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub domain: Arc<Domain>,
    /// Successful cells in (method, budget) order.
    pub runs: Vec<MethodRun>,
    pub failures: Vec<CellFailure>,
}

impl SuiteResult {
    pub fn rows(&self) -> Vec<ResultRow> {
        self.runs.iter().map(|r| r.row.clone()).collect()
    }

    pub fn get(&self, method: Method, budget: f64) -> Option<&MethodRun> {
        self.runs.iter().find(|r| r.method == method && r.budget == budget)
    }
}

/// Runs every (method, budget) cell with at most `jobs` workers. Failed cells
/// are reported and the rest of the suite still runs.
pub fn run_suite(config: &Config, methods: &[Method], budgets: &[f64], jobs: usize) -> Result<SuiteResult> {
    config.validate()?;
    let domain = Arc::new(config.build_domain()?);
    let cells: Vec<(Method, f64)> =
        methods.iter().flat_map(|&m| budgets.iter().map(move |&b| (m, b))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::config("jobs", e.to_string()))?;
    let outcomes: Vec<Result<MethodRun>> =
        pool.install(|| cells.par_iter().map(|&(m, b)| run_method(m, &domain, config, b)).collect());

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for ((m, b), out) in cells.into_iter().zip(outcomes) {
        match out {
            Ok(run) => runs.push(run),
            Err(e) => {
                log::warn!("cell {m} @ {b} failed: {e}");
                failures.push(CellFailure { method: m.to_string(), budget: b, error: e.to_string() });
            }
        }
    }
    for m in [Method::Naive, Method::Oracle] {
        let rows: Vec<&MethodRun> = runs.iter().filter(|r| r.method == m).collect();
        if let Some(first) = rows.first() {
            for r in &rows[1..] {
                let same = (r.row.mean_penalty, r.row.stderr_penalty, r.row.mean_cost, r.row.stderr_cost)
                    == (first.row.mean_penalty, first.row.stderr_penalty, first.row.mean_cost, first.row.stderr_cost);
                if !same {
                    return Err(Error::Conflict(format!("{m} results differ across budgets")));
                }
            }
        }
    }
    Ok(SuiteResult { domain, runs, failures })
}

fn budget_tag(b: f64) -> String {
    if b.fract() == 0.0 {
        format!("{}", b as i64)
    } else {
        format!("{b}").replace('.', "p")
    }
}

/// Writes `results.csv`, `timings.csv`, `runs.csv`, per-cell run logs and
/// penalty maps, `utilities.csv` and (if any) `failures.csv` under `out`.
pub fn write_suite(out: &Path, suite: &SuiteResult) -> Result<()> {
    fs::create_dir_all(out.join("runlogs"))?;
    fs::create_dir_all(out.join("penalties"))?;
    write_results(&out.join("results.csv"), &suite.rows())?;

    let mut timings = csv::Writer::from_path(out.join("timings.csv"))?;
    timings.write_record(["method", "budget", "wall_ms"])?;
    let mut index = csv::Writer::from_path(out.join("runs.csv"))?;
    index.write_record(["method", "budget", "runlog", "penalties"])?;
    let mut utilities = csv::Writer::from_path(out.join("utilities.csv"))?;
    utilities.write_record(["method", "budget", "t", "format", "utility", "v", "n", "received"])?;

    let d = &suite.domain;
    for run in &suite.runs {
        let stem = format!("{}_b{}", run.method.slug(), budget_tag(run.budget));
        let runlog = format!("runlogs/{stem}.jsonl");
        let penalties = format!("penalties/{stem}.csv");
        write_runlog(&out.join(&runlog), run.log())?;

        let mut w = csv::Writer::from_path(out.join(&penalties))?;
        w.write_record(["state", "x", "y", "action", "predicted", "true"])?;
        for s in 0..d.mdp.n_states() {
            let (x, y) = d.mdp.state(s).position();
            for a in 0..d.mdp.n_actions() {
                w.write_record([
                    s.to_string(),
                    x.to_string(),
                    y.to_string(),
                    d.mdp.action_names()[a].clone(),
                    run.predicted[s][a].to_string(),
                    d.nse.severity(s, a).to_string(),
                ])?;
            }
        }
        w.flush()?;

        let budget = run.budget.to_string();
        index.write_record([run.method.to_string(), budget.clone(), runlog, penalties])?;
        timings.write_record([run.method.to_string(), budget.clone(), format!("{:.3}", run.wall_ms)])?;
        for rec in run.log() {
            for (f, u) in &rec.utilities {
                utilities.write_record([
                    run.method.to_string(),
                    budget.clone(),
                    rec.t.to_string(),
                    f.to_string(),
                    u.to_string(),
                    rec.v[f].to_string(),
                    rec.n[f].to_string(),
                    (rec.received && rec.format_requested == *f).to_string(),
                ])?;
            }
        }
    }
    timings.flush()?;
    index.flush()?;
    utilities.flush()?;
    if !suite.failures.is_empty() {
        let mut w = csv::Writer::from_path(out.join("failures.csv"))?;
        for f in &suite.failures {
            w.serialize(f)?;
        }
        w.flush()?;
    }
    Ok(())
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(RESULT_COLUMNS)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn results_to_string(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(RESULT_COLUMNS)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn parse_results(text: &str) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn runlog_to_string(log: &[IterationRecord]) -> Result<String> {
    let mut out = String::new();
    for rec in log {
        out.push_str(&serde_json::to_string(rec)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_runlog(path: &Path, log: &[IterationRecord]) -> Result<()> {
    fs::write(path, runlog_to_string(log)?)?;
    Ok(())
}

pub fn read_runlog(path: &Path) -> Result<Vec<IterationRecord>> {
    let text = fs::read_to_string(path)?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

/// A tidy, long-format row for external plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub figure: String,
    pub method: String,
    pub budget: f64,
    pub x: f64,
    pub series: String,
    pub value: f64,
    pub stderr: Option<f64>,
}

/// Turns a suite output directory into one long table: penalty and cost
/// against budget per method, and per-format utility and score against
/// iteration per learning run.
pub fn plot_data(dir: &Path) -> Result<Vec<PlotRow>> {
    let mut rows = Vec::new();
    for r in read_results(&dir.join("results.csv"))? {
        for (figure, value, stderr) in [
            ("penalty_vs_budget", r.mean_penalty, r.stderr_penalty),
            ("cost_vs_budget", r.mean_cost, r.stderr_cost),
        ] {
            rows.push(PlotRow {
                figure: figure.into(),
                method: r.method.clone(),
                budget: r.budget,
                x: r.budget,
                series: r.method.clone(),
                value,
                stderr: Some(stderr),
            });
        }
    }
    #[derive(Deserialize)]
    struct IndexRow {
        method: String,
        budget: f64,
        runlog: PathBuf,
    }
    let index = dir.join("runs.csv");
    if index.exists() {
        let mut reader = csv::Reader::from_path(index)?;
        for entry in reader.deserialize::<IndexRow>() {
            let entry = entry?;
            for rec in read_runlog(&dir.join(&entry.runlog))? {
                let mut per_format: BTreeMap<String, (f64, f64)> = BTreeMap::new();
                for (f, u) in &rec.utilities {
                    per_format.insert(f.to_string(), (*u, rec.v[f]));
                }
                for (series, (u, v)) in per_format {
                    for (figure, value) in [("utility_vs_iteration", u), ("score_vs_iteration", v)] {
                        rows.push(PlotRow {
                            figure: figure.into(),
                            method: entry.method.clone(),
                            budget: entry.budget,
                            x: rec.t as f64,
                            series: series.clone(),
                            value,
                            stderr: None,
                        });
                    }
                }
            }
        }
    }
    Ok(rows)
}

pub fn write_plot_data(path: &Path, rows: &[PlotRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::DomainKind;

    #[test]
    fn method_names_round_trip() {
        for name in [
            "afs",
            "naive",
            "oracle",
            "cost_sensitive",
            "most_probable",
            "random_critical",
            "single_format:gaze",
            "format_pair:demo_action_mismatch+corrections",
        ] {
            assert_eq!(name.parse::<Method>().unwrap().to_string(), name);
        }
        assert!(matches!("ri".parse::<Method>(), Err(Error::UnsupportedMethod)));
        let err = "magic".parse::<Method>().unwrap_err();
        assert!(err.to_string().contains("cost_sensitive"));
    }

    #[test]
    fn results_round_trip() {
        let row = ResultRow {
            method: "afs".into(),
            domain: "vase".into(),
            budget: 20.0,
            trials: 100,
            mean_penalty: 6.25,
            stderr_penalty: 0.1 + 0.2,
            mean_cost: 17.3,
            stderr_cost: 1.0 / 3.0,
            reached_goal: 100,
        };
        let text = results_to_string(std::slice::from_ref(&row)).unwrap();
        assert!(text.starts_with(&RESULT_COLUMNS.join(",")));
        assert_eq!(parse_results(&text).unwrap(), vec![row]);
    }

    #[test]
    fn oracle_on_a_safe_corridor_has_no_penalty() {
        let config = Config::from_toml_str(
            "[domain]\nname = \"navigation\"\nmap = \"S...*\"\n[learning]\nk = 1\nn_critical = 2\n[experiment]\ntrials = 5\n",
        )
        .unwrap();
        let d = Arc::new(config.build_domain().unwrap());
        let run = run_method(Method::Oracle, &d, &config, 0.0).unwrap();
        assert_eq!(run.row.mean_penalty, 0.0);
        assert_eq!(run.row.mean_cost, 4.0);
    }

    #[test]
    fn suite_is_a_cross_product() {
        let mut config = Config::preset(DomainKind::Vase);
        config.experiment.trials = 10;
        let suite = run_suite(&config, &[Method::Naive, Method::Afs], &[4.0, 8.0, 12.0], 2).unwrap();
        assert_eq!(suite.rows().len(), 6);
        assert!(suite.failures.is_empty());
    }
}
