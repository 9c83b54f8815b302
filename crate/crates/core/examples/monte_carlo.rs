//! Seeded Monte Carlo batch of the case study: collision count, convergence
//! fraction and per-run terminal statistics.
//!
//! cargo run --release --example monte_carlo -- [runs] [noise scale]

use std::time::Instant;

use clbf_smpc::scenario::ScenarioConfig;
use clbf_smpc::sim::monte_carlo;

fn main() -> clbf_smpc::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut config = ScenarioConfig::case_study();
    if let Some(runs) = args.first().and_then(|s| s.parse().ok()) {
        config.runs = runs;
    }
    if let Some(scale) = args.get(1).and_then(|s| s.parse::<f64>().ok()) {
        config.unicycle = config.unicycle.scaled(scale);
    }
    let start = Instant::now();
    let mc = monte_carlo(&config)?;
    println!("seed  final norm  min margin  collisions  statuses (opt, feas, fallback, infeas)");
    for r in &mc.runs {
        println!(
            "{:>4}  {:>10.4}  {:>10.2}  {:>10}  {:?}",
            r.seed,
            r.final_position_norm,
            r.min_margin.unwrap_or(f64::NAN),
            r.collision_events,
            r.status_counts
        );
    }
    println!(
        "{} runs: {} with collisions, {} converged (|p| <= {}), {} blow-ups",
        mc.runs.len(),
        mc.collisions,
        mc.converged,
        config.convergence_radius,
        mc.blow_ups
    );
    println!("clearance histogram (unit bins from {:?}): {:?}", mc.clearance_histogram.edges.first(), mc.clearance_histogram.counts);
    println!("{:.1} s wall clock", start.elapsed().as_secs_f64());
    Ok(())
}
