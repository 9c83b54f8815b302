//! Solves one receding-horizon problem from the initial state and prints the
//! predicted trajectory with the per-knot decrease margin.
//!
//! cargo run --release --example ocp_solve -- [x y theta]

use std::time::Instant;

use clbf_smpc::barrier::BarrierSpec;
use clbf_smpc::clbf::ClbfAssembly;
use clbf_smpc::clf::ClfParams;
use clbf_smpc::mpc::{solve_ocp, MpcConfig};
use clbf_smpc::sde::{generator, unicycle_system, UnicycleParams};
use nalgebra::DVector;

fn main() -> clbf_smpc::Result<()> {
    let barriers = [
        BarrierSpec::with_defaults([30.0, 25.0], 25.0, 36.0),
        BarrierSpec::with_defaults([50.0, 50.0], 25.0, 36.0),
        BarrierSpec::with_defaults([68.0, 30.0], 56.25, 90.25),
        BarrierSpec::with_defaults([80.0, 60.0], 56.25, 90.25),
    ];
    let assembly = ClbfAssembly::new(ClfParams::default(), &barriers, 8.5, None, &[1e5, 8e4, 1e5, 8e4], 0.005)?;
    let sys = unicycle_system(UnicycleParams::default());
    let cfg = MpcConfig::case_study();

    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let x0 = if args.len() == 3 {
        DVector::from_vec(args)
    } else {
        DVector::from_vec(vec![100.0, 80.0, -std::f64::consts::FRAC_PI_2])
    };

    let start = Instant::now();
    let sol = solve_ocp(&sys, &assembly, &cfg, &x0);
    let elapsed = start.elapsed();
    println!(
        "status {}  cost {:.4}  iterations {}  max margin {:.3e}  {:.1} ms",
        sol.status,
        sol.cost,
        sol.iterations,
        sol.max_violation,
        elapsed.as_secs_f64() * 1e3
    );
    for (i, u) in sol.inputs.iter().enumerate() {
        let x = &sol.predicted_states[i];
        let lw = generator(&assembly, &sys, x, u)?;
        println!(
            "{i:>2}  x = ({:8.3}, {:8.3}, {:7.3})  u = ({:7.3}, {:7.3})  LW_c = {:.4e}",
            x[0], x[1], x[2], u[0], u[1], lw
        );
    }
    Ok(())
}
