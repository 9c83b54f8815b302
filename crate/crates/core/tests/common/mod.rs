#![allow(dead_code)]

use clbf_smpc::barrier::BarrierSpec;
use clbf_smpc::clbf::{ClbfAssembly, InputBox};
use clbf_smpc::clf::ClfParams;
use clbf_smpc::sde::{unicycle_system, AffineSdeSystem, ScalarField, UnicycleParams};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

pub fn barriers() -> Vec<BarrierSpec> {
    vec![
        BarrierSpec::with_defaults([30.0, 25.0], 25.0, 36.0),
        BarrierSpec::with_defaults([50.0, 50.0], 25.0, 36.0),
        BarrierSpec::with_defaults([68.0, 30.0], 56.25, 90.25),
        BarrierSpec::with_defaults([80.0, 60.0], 56.25, 90.25),
    ]
}

pub fn assembly() -> ClbfAssembly {
    ClbfAssembly::new(ClfParams::default(), &barriers(), 8.5, None, &[1e5, 8e4, 1e5, 8e4], 0.005).unwrap()
}

pub fn system() -> AffineSdeSystem {
    unicycle_system(UnicycleParams::default())
}

pub fn input_box() -> InputBox {
    InputBox::unicycle_default()
}

pub fn state(x: f64, y: f64, th: f64) -> DVector<f64> {
    DVector::from_vec(vec![x, y, th])
}

/// Uniform over `x, y in [-20, 120]`, `theta in [-2 pi, 2 pi]`.
pub fn domain_state(rng: &mut ChaCha8Rng) -> DVector<f64> {
    state(rng.gen_range(-20.0..120.0), rng.gen_range(-20.0..120.0), rng.gen_range(-TWO_PI..TWO_PI))
}

/// Uniform in the disc `F < level` around the obstacle centre, random heading.
pub fn in_disc(rng: &mut ChaCha8Rng, b: &BarrierSpec, level: f64) -> DVector<f64> {
    let r = level.sqrt() * rng.gen::<f64>().sqrt();
    let phi = rng.gen_range(0.0..TWO_PI);
    state(
        b.center[0] + r * phi.cos(),
        b.center[1] + r * phi.sin(),
        rng.gen_range(-TWO_PI..TWO_PI),
    )
}

pub fn fd_step(v: f64) -> f64 {
    1e-6 * (1.0 + v.abs())
}

/// Central differences of the value.
pub fn fd_gradient(field: &dyn ScalarField, x: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        x.len(),
        (0..x.len()).map(|i| {
            let h = fd_step(x[i]);
            let (mut p, mut m) = (x.clone(), x.clone());
            p[i] += h;
            m[i] -= h;
            (field.value(&p) - field.value(&m)) / (2.0 * h)
        }),
    )
}

/// Central differences of the analytic gradient, column by column.
pub fn fd_hessian(field: &dyn ScalarField, x: &DVector<f64>) -> DMatrix<f64> {
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        let d = fd_step(x[i]);
        let (mut p, mut m) = (x.clone(), x.clone());
        p[i] += d;
        m[i] -= d;
        h.set_column(i, &((field.gradient(&p) - field.gradient(&m)) / (2.0 * d)));
    }
    h
}

/// Rounding error bound of a central difference of a quantity of size
/// `magnitude` with step `h`.
pub fn fd_noise(magnitude: f64, h: f64) -> f64 {
    8.0 * f64::EPSILON * magnitude / h
}

/// Worst `|analytic - fd| / (tol |fd|_max + noise)` over the entries, where
/// `noise(k)` is the oracle's own rounding bound for entry `k`. At most 1
/// means the entries agree to `tol` relative to the oracle.
pub fn fd_mismatch(analytic: &[f64], fd: &[f64], tol: f64, noise: impl Fn(usize) -> f64) -> f64 {
    let scale = fd.iter().map(|v| v.abs()).fold(0.0, f64::max);
    analytic
        .iter()
        .zip(fd)
        .enumerate()
        .map(|(k, (a, b))| (a - b).abs() / (tol * scale + noise(k)).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

/// Gradient and Hessian mismatches against the finite-difference oracles at
/// tolerances `1e-5` and `1e-4`.
pub fn derivative_mismatch(field: &dyn ScalarField, x: &DVector<f64>) -> (f64, f64) {
    let s = field.sample(x);
    let n = x.len();
    let g = fd_mismatch(s.gradient.as_slice(), fd_gradient(field, x).as_slice(), 1e-5, |k| {
        fd_noise(s.value.abs(), fd_step(x[k]))
    });
    let gmax = s.gradient.amax();
    // column-major: entry k belongs to column k / n, differenced along x[k / n]
    let h = fd_mismatch(s.hessian.as_slice(), fd_hessian(field, x).as_slice(), 1e-4, |k| {
        fd_noise(gmax, fd_step(x[k / n]))
    });
    (g, h)
}

/// Classical RK4 of the unicycle kinematics under a held input.
pub fn unicycle_rk4(x: &DVector<f64>, u: &DVector<f64>, dt: f64) -> DVector<f64> {
    let f = |s: &DVector<f64>| state(u[0] * s[2].cos(), u[0] * s[2].sin(), u[1]);
    let k1 = f(x);
    let k2 = f(&(x + &k1 * (dt / 2.0)));
    let k3 = f(&(x + &k2 * (dt / 2.0)));
    let k4 = f(&(x + &k3 * dt));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

pub struct GridOptimum {
    pub input: DVector<f64>,
    pub cost: f64,
    pub cell: (f64, f64),
}

/// Exhaustive search of the one-step problem over a `nv x nw` lattice of the
/// box. The decrease constraint is evaluated with the library generator,
/// which is checked against finite differences elsewhere.
#[allow(clippy::too_many_arguments)]
pub fn one_step_grid_optimum(
    a: &ClbfAssembly,
    sys: &AffineSdeSystem,
    x0: &DVector<f64>,
    q: f64,
    eps: f64,
    period: f64,
    nv: usize,
    nw: usize,
) -> Option<GridOptimum> {
    let bx = input_box();
    let dv = (bx.u_max[0] - bx.u_min[0]) / (nv - 1) as f64;
    let dw = (bx.u_max[1] - bx.u_min[1]) / (nw - 1) as f64;
    let mut best: Option<GridOptimum> = None;
    for i in 0..nv {
        for j in 0..nw {
            let u = DVector::from_vec(vec![bx.u_min[0] + i as f64 * dv, bx.u_min[1] + j as f64 * dw]);
            let lw = clbf_smpc::sde::generator(a, sys, x0, &u).unwrap();
            if lw > -eps {
                continue;
            }
            let x1 = unicycle_rk4(x0, &u, period);
            let cost = q * x1.norm_squared();
            if best.as_ref().is_none_or(|b| cost < b.cost) {
                best = Some(GridOptimum { input: u, cost, cell: (dv, dw) });
            }
        }
    }
    best
}

/// States away from every barrier's active disc and from the origin.
pub fn far_field_states(rng: &mut ChaCha8Rng, count: usize) -> Vec<DVector<f64>> {
    let bs = barriers();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let x = domain_state(rng);
        if x[0].hypot(x[1]) > 20.0 && bs.iter().all(|b| b.level(&x) > 4.0 * b.l_x) {
            out.push(x);
        }
    }
    out
}
