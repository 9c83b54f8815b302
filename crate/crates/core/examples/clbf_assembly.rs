//! Assembles W_c for the case study, prints its coefficients and follows the
//! bounded universal formula from the start for a few seconds without noise.
//!
//! cargo run --release --example clbf_assembly

use clbf_smpc::clbf::{universal_terms, ClbfAssembly, InputBox};
use clbf_smpc::mpc::predict;
use clbf_smpc::scenario::ScenarioConfig;
use clbf_smpc::sde::ScalarField;
use nalgebra::DVector;

fn main() -> clbf_smpc::Result<()> {
    let config = ScenarioConfig::case_study();
    let scenario = config.build()?;
    let a: &ClbfAssembly = &scenario.assembly;
    let c = a.coefficients();
    println!("lambda = {:.1?}", c.lambda);
    println!("kappa = {:.1} in ({:.1}, {:.1})", c.kappa, c.kappa_window.0, c.kappa_window.1);
    println!("W_c at the origin = {:.1}", a.origin_value());

    let bx: &InputBox = &scenario.mpc.input_box;
    let mut x: DVector<f64> = scenario.initial_state.clone();
    for k in 0..=30 {
        let terms = universal_terms(a, &scenario.system, bx, &x);
        if k % 5 == 0 {
            println!(
                "t = {:.1}: x = ({:.2}, {:.2}, {:.2}), W_c = {:.1}, certified {}, u = ({:.2}, {:.2})",
                k as f64 * 0.1,
                x[0],
                x[1],
                x[2],
                a.value(&x),
                terms.certifies(),
                terms.input[0],
                terms.input[1]
            );
        }
        x = predict(&scenario.system, &x, &[terms.input], 0.1)?.pop().expect("one step");
    }
    Ok(())
}
