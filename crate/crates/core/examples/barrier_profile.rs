//! Barrier value against the level F for the scheduled decay rate and two
//! constant ones, plus the smoothness check at the outer edge.
//!
//! cargo run --example barrier_profile -- [out.csv]

use clbf_smpc::barrier::{profile_curves, verify_boundary_smoothness, BarrierSpec};

fn main() -> clbf_smpc::Result<()> {
    let spec = BarrierSpec::with_defaults([80.0, 60.0], 56.25, 90.25);
    let curves = profile_curves(&spec, 21)?;
    println!("{:>8} {:>10} {:>10} {:>10}", "F", "k small", "k large", "scheduled");
    for i in 0..curves.f.len() {
        println!(
            "{:8.3} {:10.4} {:10.4} {:10.4}",
            curves.f[i], curves.constant_small[i], curves.constant_large[i], curves.scheduled[i]
        );
    }

    let report = verify_boundary_smoothness(&spec, 1e-6)?;
    for ring in &report.rings {
        println!(
            "F = l_X (1 - 1e-{}): |grad| {:.2e}, |hess| {:.2e}",
            ring.exponent, ring.max_gradient, ring.max_hessian
        );
    }
    println!("smooth at the edge: {}", report.pass);

    if let Some(path) = std::env::args().nth(1) {
        curves.write_csv(std::fs::File::create(&path)?)?;
        println!("curves written to {path}");
    }
    Ok(())
}
