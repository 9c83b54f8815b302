mod common;

use clbf_smpc::barrier::BarrierField;
use clbf_smpc::clbf::{universal_terms, ClbfAssembly};
use clbf_smpc::clf::{minimizing_p, ClfField, ClfParams};
use clbf_smpc::regions::region_membership;
use clbf_smpc::sde::{generator, generator_split, ScalarField};
use common::*;
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn clf() -> ClfField {
    ClfField::new(ClfParams::default()).unwrap()
}

#[test]
fn clf_lies_between_its_quadratic_bounds() {
    let v = clf();
    let p = ClfParams::default();
    let c1 = p.p1 - p.p2 * p.p2 / p.p3;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let x = domain_state(&mut rng);
        let r2 = x[0] * x[0] + x[1] * x[1];
        let val = v.value(&x);
        assert!(val >= c1 * r2 * (1.0 - 1e-12), "{x:?}");
        assert!(val <= p.p1 * r2 * (1.0 + 1e-12), "{x:?}");
    }
}

#[test]
fn minimizing_velocity_beats_sampled_alternatives() {
    let v = clf();
    let p = ClfParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let x = domain_state(&mut rng);
        let best = v.lifted_value(&x, minimizing_p(&x, &p));
        assert!((best - v.value(&x)).abs() <= 1e-9 * (1.0 + best.abs()));
        for _ in 0..1000 {
            let other = rng.gen_range(-500.0..500.0);
            assert!(v.lifted_value(&x, other) >= best - 1e-9 * best.abs());
        }
    }
}

// The zero-gain set of V is where the heading is perpendicular to the
// position; there the noise-only generator must be negative.
#[test]
fn clf_generator_is_negative_where_its_input_gain_vanishes() {
    let v = clf();
    let sys = system();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let (x, y) = (rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0));
        let side = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let s = state(x, y, f64::atan2(y, x) + side * std::f64::consts::FRAC_PI_2);
        let split = generator_split(&v.sample(&s), &sys, &s);
        assert!(split.gain.amax() <= 1e-9 * v.value(&s).max(1.0), "{s:?}");
        assert!(split.drift < 0.0, "{s:?}: {}", split.drift);
    }
}

#[test]
fn clf_input_gain_is_nonzero_on_radial_headings() {
    let v = clf();
    let sys = system();
    let s = state(30.0, 40.0, f64::atan2(40.0, 30.0));
    let split = generator_split(&v.sample(&s), &sys, &s);
    // d/dx of V along the heading is 2 (p1 - p2^2/p3) r
    assert!((split.gain[0] - 2.0 * 9.0 * 50.0).abs() < 1e-9);
    assert!(split.drift > 0.0);
}

#[test]
fn barrier_is_radially_symmetric_and_monotone() {
    let field = BarrierField::new(barriers()[3]).unwrap();
    let c = field.spec().center;
    let reach = field.spec().l_x.sqrt() * 1.2;
    for k in 0..36 {
        let phi = k as f64 * TWO_PI / 36.0;
        let mut prev = f64::INFINITY;
        for j in 0..=200 {
            let r = reach * j as f64 / 200.0;
            let s = state(c[0] + r * phi.cos(), c[1] + r * phi.sin(), 0.3 * k as f64);
            let b = field.value(&s);
            assert!((b - field.profile(r * r).value).abs() <= 1e-12 * b.abs().max(1.0));
            assert!(b <= prev + 1e-12, "B rises at r = {r}");
            prev = b;
        }
    }
}

#[test]
fn generator_is_affine_in_the_input() {
    let a = assembly();
    let sys = system();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let x = domain_state(&mut rng);
        let u1 = DVector::from_vec(vec![rng.gen_range(-10.0..10.0), rng.gen_range(-1.6..1.6)]);
        let u2 = DVector::from_vec(vec![rng.gen_range(-10.0..10.0), rng.gen_range(-1.6..1.6)]);
        let t: f64 = rng.gen();
        let mixed = generator(&a, &sys, &x, &(&u1 * t + &u2 * (1.0 - t))).unwrap();
        let g1 = generator(&a, &sys, &x, &u1).unwrap();
        let g2 = generator(&a, &sys, &x, &u2).unwrap();
        let blend = t * g1 + (1.0 - t) * g2;
        assert!((mixed - blend).abs() <= 1e-12 * (g1.abs() + g2.abs()).max(1.0), "{x:?}");
    }
}

#[test]
fn generator_second_difference_in_the_input_vanishes() {
    let a = assembly();
    let sys = system();
    let zero = DVector::zeros(2);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let x = domain_state(&mut rng);
        let u1 = DVector::from_vec(vec![rng.gen_range(-10.0..10.0), rng.gen_range(-1.6..1.6)]);
        let u2 = DVector::from_vec(vec![rng.gen_range(-10.0..10.0), rng.gen_range(-1.6..1.6)]);
        let l = |u: &DVector<f64>| generator(&a, &sys, &x, u).unwrap();
        let terms = [l(&(&u1 + &u2)), l(&u2), l(&u1), l(&zero)];
        let scale = terms.iter().map(|t| t.abs()).fold(1.0, f64::max);
        assert!((terms[0] - terms[1] - terms[2] + terms[3]).abs() <= 1e-12 * scale, "{x:?}");
    }
}

#[test]
fn hessians_are_symmetric() {
    let a = assembly();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..1000 {
        let x = domain_state(&mut rng);
        let mut fields: Vec<Box<dyn ScalarField>> = vec![Box::new(clf()), Box::new(a.clone())];
        fields.extend(barriers().into_iter().map(|b| Box::new(BarrierField::new(b).unwrap()) as Box<dyn ScalarField>));
        for f in &fields {
            let h = f.hessian(&x);
            assert!((&h - h.transpose()).amax() <= 1e-12, "{x:?}");
        }
    }
}

/// Drift by a centred difference along the velocity and diffusion by second
/// differences of the value only.
fn ito_oracle(field: &dyn ScalarField, sys: &clbf_smpc::sde::AffineSdeSystem, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
    let vel = sys.velocity(x, u);
    let h = 1e-6;
    let drift = (field.value(&(x + &vel * h)) - field.value(&(x - &vel * h))) / (2.0 * h);
    let sigma = sys.diffusion_diagonal(x);
    let d = 1e-3;
    let mut trace = 0.0;
    for i in 0..x.len() {
        let mut e = DVector::zeros(x.len());
        e[i] = d;
        let second = (field.value(&(x + &e)) - 2.0 * field.value(x) + field.value(&(x - &e))) / (d * d);
        trace += sigma[i] * sigma[i] * second;
    }
    drift + 0.5 * trace
}

#[test]
fn generator_matches_the_finite_difference_ito_expansion() {
    let a = assembly();
    let sys = system();
    let x0 = state(100.0, 80.0, -std::f64::consts::FRAC_PI_2);
    for u in [vec![0.0, 0.0], vec![10.0, 0.0], vec![-3.0, 1.2], vec![7.5, -1.5]] {
        let u = DVector::from_vec(u);
        let got = generator(&a, &sys, &x0, &u).unwrap();
        let want = ito_oracle(&a, &sys, &x0, &u);
        assert!((got - want).abs() <= 1e-4 * want.abs().max(1.0), "u = {u:?}: {got} vs {want}");
    }
}

#[test]
fn clbf_is_the_weighted_sum_of_its_parts() {
    let a = assembly();
    let v = clf();
    let fields: Vec<BarrierField> = barriers().into_iter().map(|b| BarrierField::new(b).unwrap()).collect();
    let c = a.coefficients();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let x = domain_state(&mut rng);
        let parts: Vec<f64> = fields.iter().map(|b| b.value(&x)).collect();
        let want = v.value(&x) + parts.iter().zip(&c.lambda).map(|(b, l)| b * l).sum::<f64>() + c.kappa;
        let scale = v.value(&x).abs() + parts.iter().zip(&c.lambda).map(|(b, l)| (b * l).abs()).sum::<f64>() + c.kappa.abs();
        assert!((a.value(&x) - want).abs() <= 1e-9 * scale);
    }
}

#[test]
fn origin_is_a_stationary_minimum_of_the_clbf() {
    let a = assembly();
    let origin = state(0.0, 0.0, 0.4);
    let s = a.sample(&origin);
    assert!(s.gradient.amax() < 1e-9);
    assert!(s.hessian.symmetric_eigenvalues().min() >= -1e-9);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..10_000 {
        let x = domain_state(&mut rng);
        assert!(a.value(&x) >= s.value, "{x:?}");
    }
}

#[test]
fn initial_state_is_in_the_vertex_region() {
    let flags = region_membership(&assembly(), &system(), &input_box(), &state(100.0, 80.0, -std::f64::consts::FRAC_PI_2));
    assert!(flags.in_x_l);
    assert!(!flags.in_d && !flags.in_d_relaxed);
}

#[test]
fn far_field_states_are_in_the_vertex_region() {
    let (a, sys, bx) = (assembly(), system(), input_box());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    while checked < 500 {
        let x = domain_state(&mut rng);
        let clear = barriers().iter().all(|b| b.level(&x) > 4.0 * b.l_x);
        if !clear || x[0].hypot(x[1]) < 10.0 {
            continue;
        }
        assert!(region_membership(&a, &sys, &bx, &x).in_x_l, "{x:?}");
        checked += 1;
    }
}

/// Guaranteed decrease of the universal formula, `L W_c <= -rho V_c / (1 + sqrt(1 + |b|^2))`.
fn decrease_bound(a: &ClbfAssembly, terms: &clbf_smpc::clbf::UniversalTerms) -> f64 {
    -a.rho() * terms.shifted_value / (1.0 + (1.0 + terms.b.norm_squared()).sqrt())
}

#[test]
fn universal_formula_meets_its_decrease_bound_with_unit_correction() {
    let (a, sys, bx) = (assembly(), system(), input_box());
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut checked = 0;
    while checked < 2000 {
        let x = domain_state(&mut rng);
        let terms = universal_terms(&a, &sys, &bx, &x);
        if a.in_unsafe(&x) || !terms.certifies() || x[0].hypot(x[1]) < 1e-3 {
            continue;
        }
        let lw = terms.split.at(&terms.input);
        let bound = decrease_bound(&a, &terms);
        assert!(lw <= bound + 1e-9 * bound.abs().max(lw.abs()), "{x:?}: {lw} > {bound}");
        assert!(terms.correction(&bx).norm() <= 1.0 + 1e-12);
        checked += 1;
    }
}

#[test]
fn certified_region_lies_inside_the_vertex_region() {
    let (a, sys, bx) = (assembly(), system(), input_box());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5000 {
        let x = domain_state(&mut rng);
        let f = region_membership(&a, &sys, &bx, &x);
        assert!(!f.in_x_phi || f.in_x_l, "{x:?}");
        assert!(!f.in_x_phi || !f.in_d, "{x:?}");
    }
}

proptest! {
    #[test]
    fn clbf_derivatives_match_central_differences(
        x in -20.0f64..120.0, y in -20.0f64..120.0, th in -6.0f64..6.0
    ) {
        let a = assembly();
        let s = state(x, y, th);
        // skip the barrier switching rings where the profile is only C2
        let near_ring = barriers().iter().any(|b| {
            let f = b.level(&s);
            (f - b.l_x).abs() < 0.05 * b.l_x || f < 0.05 * b.l_x
        });
        prop_assume!(!near_ring);
        let (g, h) = derivative_mismatch(&a, &s);
        prop_assert!(g <= 1.0 && h <= 1.0, "gradient {} hessian {}", g, h);
    }
}
