//! The unicycle SDE on its own: generator of a quadratic at a few inputs and
//! an open-loop Euler-Maruyama path under a constant input.
//!
//! cargo run --example noisy_unicycle -- [seed]

use clbf_smpc::clf::{ClfField, ClfParams};
use clbf_smpc::sde::{euler_maruyama_step, generator, unicycle_system, NoiseStream, UnicycleParams};
use nalgebra::DVector;

fn main() -> clbf_smpc::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let sys = unicycle_system(UnicycleParams::default());
    let v = ClfField::new(ClfParams::default())?;
    let x0 = DVector::from_vec(vec![100.0, 80.0, -std::f64::consts::FRAC_PI_2]);

    println!("diffusion at the start: {:?}", sys.diffusion_diagonal(&x0).as_slice());
    for u in [[0.0, 0.0], [10.0, 0.0], [-10.0, 0.0], [0.0, 1.5]] {
        let u = DVector::from_row_slice(&u);
        println!("L V at u = {:?}: {:.1}", u.as_slice(), generator(&v, &sys, &x0, &u)?);
    }

    let mut noise = NoiseStream::new(seed);
    let u = DVector::from_vec(vec![5.0, 0.2]);
    let mut x = x0;
    for k in 1..=50 {
        x = euler_maruyama_step(&sys, &x, &u, 0.1, &noise.draw(3))?;
        if k % 10 == 0 {
            println!("t = {:.1}: ({:.3}, {:.3}, {:.3})", k as f64 * 0.1, x[0], x[1], x[2]);
        }
    }
    Ok(())
}
