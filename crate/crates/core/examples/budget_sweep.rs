//! Sweeps feedback budgets on a preset domain and prints the penalty table.
//!
//! cargo run --release --example budget_sweep -- vase

use nse_afs::config::Config;
use nse_afs::envs::DomainKind;
use nse_afs::experiments::run_suite;

fn main() -> nse_afs::Result<()> {
    let kind = match std::env::args().nth(1).as_deref() {
        Some("navigation") => DomainKind::Navigation,
        Some("push") => DomainKind::Push,
        Some("freeway") => DomainKind::Freeway,
        _ => DomainKind::Vase,
    };
    let config = Config::preset(kind);
    let methods = config.methods()?;
    let suite = run_suite(&config, &methods, &config.experiment.budgets, 4)?;
    println!("{:<18} {:>7} {:>10} {:>8} {:>10} {:>8}", "method", "budget", "penalty", "se", "cost", "se");
    for r in suite.rows() {
        println!(
            "{:<18} {:>7} {:>10.3} {:>8.3} {:>10.3} {:>8.3}",
            r.method, r.budget, r.mean_penalty, r.stderr_penalty, r.mean_cost, r.stderr_cost
        );
    }
    for f in &suite.failures {
        println!("failed: {} @ {}: {}", f.method, f.budget, f.error);
    }
    Ok(())
}
