//! One noisy closed-loop run of the bundled case study. Prints a decimated
//! trajectory and the terminal summary, and optionally writes the trace.
//!
//! cargo run --release --example closed_loop -- [seed] [trace.csv]

use std::time::Instant;

use clbf_smpc::scenario::ScenarioConfig;
use clbf_smpc::sim::{export_trace, run_scenario, Format};

fn main() -> clbf_smpc::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let mut config = ScenarioConfig::case_study();
    if let Some(seed) = args.next().and_then(|s| s.parse().ok()) {
        config.seed = seed;
    }
    let start = Instant::now();
    let trace = run_scenario(&config)?;
    let elapsed = start.elapsed().as_secs_f64();

    for r in trace.records.iter().step_by(25) {
        println!(
            "t = {:5.1}  x = ({:7.2}, {:7.2}, {:6.2})  u = ({:6.2}, {:5.2})  W_c = {:12.1}  {}",
            r.t, r.state[0], r.state[1], r.state[2], r.input[0], r.input[1], r.w_c, r.status
        );
    }
    let s = &trace.summary;
    println!("outcome: {:?}", trace.outcome);
    println!("final position norm: {:.3}", s.final_position_norm);
    println!("closest approach to each obstacle centre: {:.2?}", s.min_distance);
    println!("collision events: {}", s.collision_events);
    println!("records per status (optimal, feasible, fallback, infeasible): {:?}", s.status_counts);
    println!("{:.1} s wall clock", elapsed);
    if let Some(path) = args.next() {
        export_trace(&trace, &config, path.as_ref(), Format::Csv)?;
        println!("trace written to {path}");
    }
    Ok(())
}
