//! Runs the adaptive loop against a simulated human and prints what it
//! asked for, what it got and how the learned map compares to the truth.

use std::sync::Arc;

use nse_afs::afs::{afs_learn, simulated_human, Strategy};
use nse_afs::config::Config;
use nse_afs::envs::DomainKind;

fn main() -> nse_afs::Result<()> {
    let budget: f64 = std::env::args().nth(1).and_then(|b| b.parse().ok()).unwrap_or(40.0);
    let config = Config::preset(DomainKind::Vase);
    let d = Arc::new(config.build_domain()?);
    let pref = config.preference_model()?;
    let mut human = simulated_human(&d, &config.learning, 7)?;
    let out = afs_learn(d.clone(), &mut human, &pref, &config.learning, Strategy::default(), budget, 7)?;

    println!("{:>3} {:<22} {:>8} {:>7} {:>5}  cluster weights", "t", "format", "received", "budget", "rows");
    for r in &out.log {
        let w: Vec<String> = r.cluster_weights.iter().map(|w| format!("{w:.2}")).collect();
        println!(
            "{:>3} {:<22} {:>8} {:>7.1} {:>5}  [{}]",
            r.t,
            r.format_requested.to_string(),
            r.received,
            r.budget_after,
            r.dataset_size,
            w.join(", ")
        );
    }
    let learned = out.model.labels(&d);
    let (mut agree, mut total) = (0, 0);
    for s in d.mdp.non_goal_states() {
        for (a, l) in learned[s].iter().enumerate() {
            total += 1;
            agree += usize::from(*l == d.nse.severity(s, a));
        }
    }
    println!("learned severity agrees with the truth on {agree}/{total} state-action pairs");
    Ok(())
}
