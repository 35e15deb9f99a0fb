use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use nse_afs::afs::{afs_learn, kl_categorical, simulated_human, smooth, Categorical, LearnerSettings, Strategy as Learning};
use nse_afs::envs::{Domain, DomainKind, DomainSpec};
use nse_afs::feedback::PreferenceModel;
use nse_afs::forest::{train, ForestParams, SeverityForest};
use nse_afs::mdp::{compose_cost, evaluate_policy, plan, value_iteration, Policy, TabularMdp};
use nse_afs::severity::TrueNseModel;

const SMALL_VASE: &str = "S.V.\nW...\n.V.*";

fn vase(map: &str, slip: f64) -> Arc<Domain> {
    Arc::new(
        Domain::build(&DomainSpec {
            name: DomainKind::Vase,
            map: Some(map.into()),
            slip,
            unavoidable: false,
            box_position: None,
            columns: None,
            chicken_column: None,
            window: 2,
            lanes: Vec::new(),
        })
        .unwrap(),
    )
}

fn categorical() -> impl Strategy<Value = Categorical> {
    (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64).prop_filter_map("nonzero mass", |(a, b, c)| {
        let z = a + b + c;
        (z > 1e-6).then(|| [a / z, b / z, c / z])
    })
}

/// Expected totals of `per_step` under `policy` from every state, by solving
/// the linear system over non-goal states.
fn exact_totals(mdp: &TabularMdp, policy: &Policy, per_step: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    let n = mdp.n_states();
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for s in mdp.non_goal_states() {
        let act = policy.action(s).unwrap();
        b[s] = per_step(s, act);
        for t in mdp.transitions(s, act) {
            a[(s, t.next)] -= mdp.discount() * t.prob;
        }
    }
    let x = a.lu().solve(&b).expect("proper policy");
    x.iter().copied().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kl_is_nonnegative_and_zero_on_self(p in categorical(), q in categorical(), alpha in 1e-6..0.1f64) {
        let (ps, qs) = (smooth(&p, alpha), smooth(&q, alpha));
        let d = kl_categorical(&ps, &qs);
        prop_assert!(d.is_finite());
        prop_assert!(d >= -1e-12, "kl {d}");
        prop_assert!(kl_categorical(&ps, &ps).abs() < 1e-12);
    }

    #[test]
    fn value_iteration_residual_never_grows(slip in 0.3..1.0f64, theta2 in 0.0..2.0f64) {
        let d = vase(SMALL_VASE, slip);
        let mdp = compose_cost(
            &d.mdp,
            &d.nse.penalty_table(),
            nse_afs::mdp::ObjectiveWeights::new(1.0, theta2).unwrap(),
        )
        .unwrap();
        let sol = value_iteration(&mdp, 1e-10, 100_000).unwrap();
        prop_assert!(sol.converged);
        for w in sol.residuals.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn forest_json_round_trips(
        rows in prop::collection::vec((prop::collection::vec(0u8..2, 6), 0usize..3), 4..40),
        n_trees in 1usize..8,
        max_depth in 1usize..6,
        seed in any::<u64>(),
    ) {
        let x: Vec<Vec<f64>> = rows.iter().map(|(f, _)| f.iter().map(|&v| v as f64).collect()).collect();
        let y: Vec<usize> = rows.iter().map(|(_, l)| *l).collect();
        let params = ForestParams { n_trees, max_depth, min_samples_split: 2, feature_subsample: 0.5, seed };
        let forest = train(&x, &y, &params).unwrap();
        let back = SeverityForest::from_json(&forest.to_json().unwrap()).unwrap();
        prop_assert_eq!(&back, &forest);
        for xi in &x {
            prop_assert_eq!(back.predict_proba(xi), forest.predict_proba(xi));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn learning_run_invariants(
        seed in 0u64..10_000,
        budget in 0.0..30.0f64,
        k in 1usize..4,
        extra in 0usize..6,
        slip in 0.5..1.0f64,
    ) {
        let d = vase(SMALL_VASE, slip);
        let n_critical = k + extra;
        let settings = LearnerSettings { k, n_critical, ..LearnerSettings::default() };
        let pref = PreferenceModel::defaults();
        let mut human = simulated_human(&d, &settings, seed).unwrap();
        let out = afs_learn(d.clone(), &mut human, &pref, &settings, Learning::default(), budget, seed).unwrap();

        let mut remaining = budget;
        for r in &out.log {
            prop_assert!((r.budget_before - remaining).abs() < 1e-9);
            prop_assert!(pref.cost(r.format_requested) <= r.budget_before + 1e-9);
            prop_assert!((r.budget_before - r.budget_after - pref.cost(r.format_requested)).abs() < 1e-9);
            prop_assert!(r.budget_after >= -1e-9);
            remaining = r.budget_after;

            let total: f64 = r.cluster_weights.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9, "weights sum {total}");
            prop_assert!(r.cluster_weights.iter().all(|&w| w >= 0.0));
            prop_assert!(r.v.values().all(|&v| v >= 0.0 && v.is_finite()));
            prop_assert_eq!(r.omega.len(), n_critical.min(d.mdp.non_goal_states().count()));
        }
        prop_assert!(remaining < pref.min_cost());

        let received = out.log.iter().filter(|r| r.received).count() as u32;
        if let Some(last) = out.log.last() {
            prop_assert_eq!(last.n.values().sum::<u32>(), received);
            prop_assert_eq!(last.dataset_size, out.dataset.len());
        }
    }

    #[test]
    fn dataset_grows_when_every_query_is_answered(seed in 0u64..10_000, budget in 1.0..25.0f64) {
        let d = vase(SMALL_VASE, 0.8);
        let settings = LearnerSettings::default();
        let pref = PreferenceModel::defaults().with_psi(1.0).unwrap();
        let mut human = simulated_human(&d, &settings, seed).unwrap();
        let out = afs_learn(d.clone(), &mut human, &pref, &settings, Learning::default(), budget, seed).unwrap();
        prop_assert!(!out.log.is_empty());
        let mut last = 0;
        for r in &out.log {
            prop_assert!(r.received);
            prop_assert!(r.dataset_size >= last);
            last = r.dataset_size;
        }
    }

    #[test]
    fn oracle_penalty_never_exceeds_naive(slip in 0.3..1.0f64, theta2 in 0.1..5.0f64) {
        let d = vase(SMALL_VASE, slip);
        let naive = plan(&d.mdp).unwrap().policy;
        let weights = nse_afs::mdp::ObjectiveWeights::new(1.0, theta2).unwrap();
        let oracle = plan(&compose_cost(&d.mdp, &d.nse.penalty_table(), weights).unwrap()).unwrap().policy;
        let penalty = |p: &Policy| exact_totals(&d.mdp, p, |s, a| d.nse.severity(s, a).penalty())[d.mdp.start()];
        let task = |p: &Policy| exact_totals(&d.mdp, p, |s, a| d.mdp.cost(s, a))[d.mdp.start()];
        prop_assert!(penalty(&oracle) <= penalty(&naive) + 1e-9);
        prop_assert!(task(&naive) <= task(&oracle) + 1e-9);
    }
}

#[test]
fn monte_carlo_matches_the_linear_solve() {
    let config = nse_afs::config::Config::preset(DomainKind::Vase);
    for slip in [0.5, 0.8, 0.95, 1.0] {
        let mut spec = config.domain.clone();
        spec.slip = slip;
        let d = Domain::build(&spec).unwrap();
        let policy = plan(&d.mdp).unwrap().policy;
        let nse: &TrueNseModel = &d.nse;
        let cost = exact_totals(&d.mdp, &policy, |s, a| d.mdp.cost(s, a))[d.mdp.start()];
        let penalty = exact_totals(&d.mdp, &policy, |s, a| nse.severity(s, a).penalty())[d.mdp.start()];
        for seed in 0..3 {
            let r = evaluate_policy(&d.mdp, &policy, nse, 400, 10_000, seed).unwrap();
            assert_eq!(r.reached_goal, 400);
            let band = |se: f64| 3.0 * se + 1e-9;
            assert!((r.mean_cost - cost).abs() <= band(r.stderr_cost), "slip {slip}: cost {} vs {cost}", r.mean_cost);
            assert!(
                (r.mean_penalty - penalty).abs() <= band(r.stderr_penalty),
                "slip {slip}: penalty {} vs {penalty}",
                r.mean_penalty
            );
        }
    }
}
