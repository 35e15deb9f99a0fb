//! Poses the same critical states in every feedback format to a simulated
//! human and shows the labels each answer yields.

use nse_afs::afs::simulated_human;
use nse_afs::config::Config;
use nse_afs::envs::DomainKind;
use nse_afs::feedback::{generate_query, to_labels, FeedbackFormat, PreferenceModel};
use nse_afs::mdp::plan;
use nse_afs::rng::stream_rng;

fn main() -> nse_afs::Result<()> {
    let config = Config::preset(DomainKind::Vase);
    let d = config.build_domain()?;
    let pref = PreferenceModel::defaults().with_psi(1.0)?;
    let policy = plan(&d.mdp)?.policy;
    let mut human = simulated_human(&d, &config.learning, 1)?;
    let mut rng = stream_rng(1, 99, 0);
    // States along the robot's naive route.
    let omega: Vec<usize> = [(5, 0), (5, 2), (5, 3), (5, 5), (6, 6)]
        .iter()
        .map(|&(x, y)| y * d.width + x)
        .collect();

    for format in FeedbackFormat::ALL {
        let query = generate_query(format, &omega, &policy, d.mdp.n_actions(), &d.features, &mut rng)?;
        let response = human.respond(&query, &pref);
        let labels = to_labels(&response, &query, d.mdp.n_actions(), &d.features, config.learning.label_rules())?;
        println!("{format}:");
        for (item, answer) in query.items.iter().zip(&response.answers) {
            println!("  state {:>2} actions {:?} -> {}", item.state, item.actions, serde_json::to_string(answer)?);
        }
        for l in &labels {
            let truth = d.nse.severity(l.state, l.action);
            println!("    label ({:>2}, {}) = {:<10} true {}", l.state, d.mdp.action_names()[l.action], l.label.to_string(), truth);
        }
    }
    Ok(())
}
