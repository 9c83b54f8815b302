//! Checks the CLF design inequalities for the case study and a few broken
//! parameter sets, then evaluates V and its minimizing lifted velocity.
//!
//! cargo run --example clf_design

use clbf_smpc::clf::{minimizing_p, validate_clf_params, ClfField, ClfParams};
use clbf_smpc::sde::{ScalarField, UnicycleParams};
use nalgebra::DVector;

fn main() -> clbf_smpc::Result<()> {
    let noise = UnicycleParams::default();
    let cases = [
        ("case study", ClfParams::default(), noise),
        ("singular P", ClfParams { p1: 1.0, p2: 1.0, p3: 1.0 }, noise),
        ("small goal disc", ClfParams::default(), UnicycleParams { r_g: 0.4, ..noise }),
        ("p1 too small", ClfParams { p1: 2.0, ..ClfParams::default() }, noise),
    ];
    for (name, p, n) in cases {
        let violations = validate_clf_params(&p, &n);
        if violations.is_empty() {
            println!("{name}: valid");
        }
        for v in violations {
            println!("{name}: {v}");
        }
    }

    let params = ClfParams::default();
    let v = ClfField::new(params)?;
    for x in [[100.0, 80.0, -1.57], [3.0, 4.0, 0.9273], [3.0, 4.0, 2.4981]] {
        let x = DVector::from_row_slice(&x);
        let s = v.sample(&x);
        println!(
            "V{:?} = {:.3}, gradient {:.3?}, best lifted velocity {:.3}",
            x.as_slice(),
            s.value,
            s.gradient.as_slice(),
            minimizing_p(&x, &params)
        );
    }
    Ok(())
}
