//! Groups navigation states by feature vector and draws critical states in
//! proportion to cluster weights.

use nse_afs::afs::{cluster_states, critical_counts, select_critical_states, ClusterMethod};
use nse_afs::config::Config;
use nse_afs::envs::DomainKind;
use nse_afs::rng::stream_rng;

fn main() -> nse_afs::Result<()> {
    let d = Config::preset(DomainKind::Navigation).build_domain()?;
    let states: Vec<usize> = d.mdp.non_goal_states().collect();
    let feats: Vec<Vec<u8>> = states.iter().map(|&s| d.features.state_features(s).to_vec()).collect();
    for method in [ClusterMethod::Kmeans, ClusterMethod::Kcenters] {
        let mut clusters = cluster_states(&states, &feats, 3, method, 5)?;
        println!("{method:?}:");
        for (c, members) in clusters.members.iter().enumerate() {
            let f = d.features.state_features(members[0]);
            println!("  cluster {c}: {:>3} states, e.g. features {:?}", members.len(), f);
        }
        clusters.update_weights(&[0.1, 0.6, 0.3], true);
        let mut rng = stream_rng(5, 1, 0);
        let omega = select_critical_states(10, &mut clusters, &mut rng)?;
        println!("  weights {:?} -> critical states {:?}", clusters.weights, omega);
    }
    for w in [[1.0 / 3.0; 3], [0.5, 0.3, 0.2], [4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0]] {
        println!("quota for weights {w:.3?} and N = 10: {:?}", critical_counts(&w, 10)?);
    }
    Ok(())
}
