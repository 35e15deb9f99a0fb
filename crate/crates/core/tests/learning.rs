use std::collections::BTreeMap;
use std::sync::Arc;

use nse_afs::afs::{afs_learn, simulated_human, Strategy};
use nse_afs::config::Config;
use nse_afs::envs::DomainKind;
use nse_afs::feedback::FeedbackFormat;

#[test]
fn untried_formats_come_before_retries() {
    for kind in [DomainKind::Vase, DomainKind::Navigation] {
        let config = Config::preset(kind);
        let d = Arc::new(config.build_domain().unwrap());
        let pref = config.preference_model().unwrap();
        for seed in 0..5 {
            let mut human = simulated_human(&d, &config.learning, seed).unwrap();
            let out = afs_learn(d.clone(), &mut human, &pref, &config.learning, Strategy::default(), 40.0, seed).unwrap();
            let mut counts: BTreeMap<FeedbackFormat, u32> = pref.formats().map(|f| (f, 0)).collect();
            for r in &out.log {
                let untried = pref.formats().any(|f| counts[&f] == 0 && pref.cost(f) <= r.budget_before + 1e-9);
                if untried {
                    assert_eq!(
                        counts[&r.format_requested], 0,
                        "{kind:?} seed {seed} t {}: retried {} while an affordable format was untried",
                        r.t, r.format_requested
                    );
                }
                counts = r.n.clone();
            }
        }
    }
}

#[test]
fn budget_below_cheapest_format_keeps_the_prior() {
    let config = Config::preset(DomainKind::Vase);
    let d = Arc::new(config.build_domain().unwrap());
    let pref = config.preference_model().unwrap();
    let mut human = simulated_human(&d, &config.learning, 1).unwrap();
    let out = afs_learn(d.clone(), &mut human, &pref, &config.learning, Strategy::default(), 0.5, 1).unwrap();
    assert!(out.log.is_empty());
    assert!(out.dataset.is_empty());
    let labels = out.model.labels(&d);
    assert!(labels.iter().flatten().all(|l| l.is_acceptable()));
}
