//! Plans on a preset map twice, ignoring and then charging the true NSE
//! penalty, and draws both policies.
//!
//! cargo run --example plan_policy -- navigation

use nse_afs::config::Config;
use nse_afs::envs::{Domain, DomainKind};
use nse_afs::mdp::{compose_cost, evaluate_policy, plan, ObjectiveWeights, Policy};

fn draw(d: &Domain, policy: &Policy) {
    let mut grid = vec![vec![String::from(" "); d.width]; d.height];
    for c in d.cells() {
        let ch = match c.kind.as_str() {
            "grass" => "G",
            "puddle" => "P",
            "vase" => "V",
            "carpet" => "C",
            "vase_on_carpet" => "W",
            "hazard" => "H",
            _ => ".",
        };
        grid[c.y as usize][c.x as usize] = ch.to_string();
    }
    // Only the first state per cell is drawn.
    for s in (0..d.mdp.n_states()).rev() {
        let (x, y) = d.mdp.state(s).position();
        if let Some(a) = policy.action(s) {
            grid[y as usize][x as usize] = d.action_glyph(a).to_string();
        }
    }
    for row in grid {
        println!("  {}", row.concat());
    }
}

fn main() -> nse_afs::Result<()> {
    let kind: DomainKind = std::env::args().nth(1).unwrap_or_else(|| "navigation".into()).parse()?;
    let d = Config::preset(kind).build_domain()?;
    let naive = plan(&d.mdp)?;
    let informed = plan(&compose_cost(&d.mdp, &d.nse.penalty_table(), ObjectiveWeights::default())?)?;
    for (name, sol) in [("task cost only", &naive), ("task cost + true penalty", &informed)] {
        let r = evaluate_policy(&d.mdp, &sol.policy, &d.nse, 100, d.mdp.default_horizon(), 0)?;
        println!(
            "{name}: {} sweeps, penalty {:.2} +- {:.2}, cost {:.2}",
            sol.iterations, r.mean_penalty, r.stderr_penalty, r.mean_cost
        );
        if matches!(kind, DomainKind::Navigation | DomainKind::Vase) {
            draw(&d, &sol.policy);
        }
    }
    Ok(())
}
