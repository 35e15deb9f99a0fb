//! Fits the severity forest on every labelled (state, action) pair of a
//! domain, checks it against the truth and round-trips it through JSON.

use nse_afs::config::Config;
use nse_afs::envs::DomainKind;
use nse_afs::feedback::encode_pair;
use nse_afs::forest::{randomized_search, train, SearchSpace, SeverityForest};

fn main() -> nse_afs::Result<()> {
    let d = Config::preset(DomainKind::Vase).build_domain()?;
    let n_a = d.mdp.n_actions();
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for s in d.mdp.non_goal_states() {
        for a in 0..n_a {
            x.push(encode_pair(d.features.pair_features(s, a), a, n_a));
            y.push(d.nse.severity(s, a).ordinal());
        }
    }
    let search = randomized_search(&x, &y, &SearchSpace::default(), 10, 3, 42)?;
    println!("best params: {:?}", search.best);
    for (p, mse) in &search.scores {
        println!("  trees {:>2} depth {} split {} subsample {:.1}: cv mse {:.4}", p.n_trees, p.max_depth, p.min_samples_split, p.feature_subsample, mse);
    }
    let forest = train(&x, &y, &search.best)?;
    let correct = x.iter().zip(&y).filter(|(xi, yi)| forest.predict(xi).ordinal() == **yi).count();
    println!("training accuracy {}/{}", correct, x.len());

    let json = forest.to_json()?;
    let back = SeverityForest::from_json(&json)?;
    assert_eq!(back, forest);
    println!("serialized forest: {} bytes, {} trees", json.len(), back.trees.len());
    Ok(())
}
