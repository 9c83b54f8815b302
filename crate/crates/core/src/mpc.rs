//! Receding-horizon control with pointwise CLBF decrease constraints.
//!
//! The optimal control problem is transcribed by single shooting: the decision
//! variables are the `N` held inputs, the nominal (noise-free) prediction uses
//! one RK4 step per sample period, and the generator of `W_c` (including the
//! diffusion trace) must be at most `-eps_dec` at every knot whose predicted
//! state lies outside the unsafe set and away from the origin.

use std::fmt;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clbf::{universal_terms, ClbfAssembly, InputBox};
use crate::error::{Error, Result};
use crate::sde::{generator_split, AffineSdeSystem, ScalarField};

/// Relative step of the one-sided finite differences.
const FD_STEP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Iteration budget per start; each trial step costs one iteration and the
    /// start itself costs one. Zero disables the optimizer.
    pub max_iter: usize,
    /// Termination tolerance on the scaled constraint violation and on the
    /// relative merit decrease.
    pub tol: f64,
    /// Number of starts tried besides the first (warm start or
    /// universal-formula rollout).
    pub restarts: usize,
    /// Seed of the random starts used once the structured starts run out.
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iter: 60,
            tol: 1e-6,
            restarts: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    pub horizon: usize,
    pub period: f64,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub input_box: InputBox,
    pub eps_dec: f64,
    /// Knots closer than this to the position origin skip the decrease
    /// constraint (the generator vanishes there).
    pub origin_radius: f64,
    pub solver: SolverConfig,
}

impl MpcConfig {
    /// N = 20, T = 0.1, Q = 10 I, R = 0 and the unicycle input box.
    pub fn case_study() -> Self {
        Self {
            horizon: 20,
            period: 0.1,
            q: DMatrix::from_diagonal_element(3, 3, 10.0),
            r: DMatrix::zeros(2, 2),
            input_box: InputBox::unicycle_default(),
            eps_dec: 1e-6,
            origin_radius: 1e-6,
            solver: SolverConfig::default(),
        }
    }

    pub fn validate(&self, sys: &AffineSdeSystem) -> Result<()> {
        self.input_box.validate()?;
        let (n, m) = (sys.state_dim(), sys.input_dim());
        if self.input_box.dim() != m {
            return Err(Error::DimensionMismatch {
                what: "input box",
                expected: m,
                got: self.input_box.dim(),
            });
        }
        if self.q.shape() != (n, n) || self.r.shape() != (m, m) {
            return Err(Error::InvalidParameter(format!(
                "weights must be {n}x{n} and {m}x{m}, got {:?} and {:?}",
                self.q.shape(),
                self.r.shape()
            )));
        }
        if self.horizon == 0 || !(self.period > 0.0) || !(self.eps_dec > 0.0) || !(self.origin_radius >= 0.0) {
            return Err(Error::InvalidParameter(
                "need horizon >= 1, period > 0, eps_dec > 0, origin_radius >= 0".into(),
            ));
        }
        for (name, w) in [("Q", &self.q), ("R", &self.r)] {
            if (w - w.transpose()).amax() > 1e-12 {
                return Err(Error::InvalidParameter(format!("{name} must be symmetric")));
            }
            if w.clone().symmetric_eigenvalues().iter().any(|e| *e < -1e-12) {
                return Err(Error::InvalidParameter(format!("{name} must be positive semidefinite")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OcpStatus {
    Optimal,
    Feasible,
    Infeasible,
    Fallback,
}

impl OcpStatus {
    pub fn code(self) -> u8 {
        match self {
            OcpStatus::Optimal => 0,
            OcpStatus::Feasible => 1,
            OcpStatus::Fallback => 2,
            OcpStatus::Infeasible => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => OcpStatus::Optimal,
            1 => OcpStatus::Feasible,
            2 => OcpStatus::Fallback,
            3 => OcpStatus::Infeasible,
            _ => return None,
        })
    }

    pub fn is_solved(self) -> bool {
        matches!(self, OcpStatus::Optimal | OcpStatus::Feasible)
    }
}

impl fmt::Display for OcpStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OcpStatus::Optimal => "optimal",
            OcpStatus::Feasible => "feasible",
            OcpStatus::Infeasible => "infeasible",
            OcpStatus::Fallback => "fallback",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    /// Empty unless the status is optimal or feasible.
    pub inputs: Vec<DVector<f64>>,
    pub predicted_states: Vec<DVector<f64>>,
    pub status: OcpStatus,
    pub cost: f64,
    /// Largest knot value of `L W_c + eps_dec` at the returned inputs.
    pub max_violation: f64,
    /// Smallest-violation input sequence found when no feasible one was.
    pub least_infeasible: Option<Vec<DVector<f64>>>,
    /// Knots whose predicted state entered the unsafe set.
    pub unsafe_knots: Vec<usize>,
    /// Knots whose predicted state has `W_c > 0` outside the unsafe set.
    pub relaxed_knots: Vec<usize>,
    pub iterations: usize,
}

fn rk4_step(sys: &AffineSdeSystem, x: &DVector<f64>, u: &DVector<f64>, h: f64) -> DVector<f64> {
    let k1 = sys.velocity(x, u);
    let k2 = sys.velocity(&(x + &k1 * (0.5 * h)), u);
    let k3 = sys.velocity(&(x + &k2 * (0.5 * h)), u);
    let k4 = sys.velocity(&(x + &k3 * h), u);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Nominal prediction with zero-order-hold inputs, one RK4 step per period.
pub fn predict(sys: &AffineSdeSystem, x0: &DVector<f64>, inputs: &[DVector<f64>], period: f64) -> Result<Vec<DVector<f64>>> {
    sys.check_state(x0)?;
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(x0.clone());
    for (i, u) in inputs.iter().enumerate() {
        sys.check_input(u)?;
        let next = rk4_step(sys, &states[i], u, period);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::Prediction { knot: i + 1 });
        }
        states.push(next);
    }
    Ok(states)
}

/// Decrease constraint at one knot: `drift + gain . u + eps_dec <= 0`.
#[derive(Debug, Clone)]
struct Knot {
    drift: f64,
    gain: DVector<f64>,
    enforced: bool,
    unsafe_state: bool,
    relaxed: bool,
}

impl Knot {
    fn violation(&self, u: &DVector<f64>, eps: f64) -> f64 {
        if self.enforced {
            self.drift + self.gain.dot(u) + eps
        } else {
            f64::NEG_INFINITY
        }
    }

    fn hazard(&self) -> u8 {
        if self.unsafe_state {
            2
        } else {
            self.relaxed as u8
        }
    }
}

struct Rollout {
    states: Vec<DVector<f64>>,
    knots: Vec<Knot>,
}

#[derive(Clone)]
struct Candidate {
    inputs: Vec<DVector<f64>>,
    states: Vec<DVector<f64>>,
    cost: f64,
    /// Sum of positive knot violations after repair.
    shortfall: f64,
    max_violation: f64,
    converged: bool,
    /// 2 if some predicted state after the first lies in D, 1 if some lies in
    /// `W_c > 0`, else 0.
    hazard: u8,
}

struct Problem<'a> {
    sys: &'a AffineSdeSystem,
    assembly: &'a ClbfAssembly,
    cfg: &'a MpcConfig,
    x0: DVector<f64>,
    n: usize,
    m: usize,
    nx: usize,
    q_sqrt: DMatrix<f64>,
    r_sqrt: DMatrix<f64>,
    lower: DVector<f64>,
    upper: DVector<f64>,
}

fn psd_sqrt(w: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = w.clone().symmetric_eigen();
    let d = eig.eigenvalues.map(|e| e.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Projection of `u` onto `{box, gain . u <= bound}`; `None` if the set is empty.
fn project_halfspace_box(u: &DVector<f64>, gain: &DVector<f64>, bound: f64, bx: &InputBox) -> Option<DVector<f64>> {
    let clipped = |t: f64| {
        let mut v = u - gain * t;
        bx.clamp(&mut v);
        v
    };
    let start = clipped(0.0);
    if gain.dot(&start) <= bound {
        return Some(start);
    }
    let vertex = bx.minimizing_vertex(gain);
    if gain.dot(&vertex) > bound {
        return None;
    }
    let g2 = gain.norm_squared();
    if g2 == 0.0 {
        return None;
    }
    let mut hi = (gain.dot(&start) - bound) / g2;
    while gain.dot(&clipped(hi)) > bound {
        hi *= 2.0;
        if !hi.is_finite() {
            return Some(vertex);
        }
    }
    let mut lo = 0.0;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if gain.dot(&clipped(mid)) > bound {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(clipped(hi))
}

impl<'a> Problem<'a> {
    fn new(sys: &'a AffineSdeSystem, assembly: &'a ClbfAssembly, cfg: &'a MpcConfig, x0: &DVector<f64>) -> Self {
        let (n, m) = (cfg.horizon, sys.input_dim());
        let bx = &cfg.input_box;
        let lower = DVector::from_iterator(n * m, (0..n * m).map(|k| bx.u_min[k % m]));
        let upper = DVector::from_iterator(n * m, (0..n * m).map(|k| bx.u_max[k % m]));
        Self {
            sys,
            assembly,
            cfg,
            x0: x0.clone(),
            n,
            m,
            nx: sys.state_dim(),
            q_sqrt: psd_sqrt(&cfg.q),
            r_sqrt: psd_sqrt(&cfg.r),
            lower,
            upper,
        }
    }

    fn split(&self, z: &DVector<f64>) -> Vec<DVector<f64>> {
        (0..self.n).map(|i| z.rows(i * self.m, self.m).into_owned()).collect()
    }

    fn join(&self, inputs: &[DVector<f64>]) -> DVector<f64> {
        let mut z = DVector::zeros(self.n * self.m);
        for (i, u) in inputs.iter().enumerate() {
            z.rows_mut(i * self.m, self.m).copy_from(u);
        }
        z
    }

    fn knot(&self, x: &DVector<f64>) -> Knot {
        let sample = self.assembly.sample(x);
        let split = generator_split(&sample, self.sys, x);
        let unsafe_state = self.assembly.in_unsafe(x);
        let near_origin = x[0].hypot(x[1]) <= self.cfg.origin_radius;
        Knot {
            drift: split.drift,
            gain: split.gain,
            enforced: !unsafe_state && !near_origin,
            unsafe_state,
            relaxed: !unsafe_state && sample.value > 0.0,
        }
    }

    /// Whether some barrier's active disc is within the planar distance the
    /// robot can cover over the horizon at the largest box speed.
    fn barrier_in_reach(&self) -> bool {
        let bx = &self.cfg.input_box;
        let speed = bx
            .vertices()
            .iter()
            .map(|u| {
                let vel = self.sys.velocity(&self.x0, u);
                vel[0].hypot(vel[1])
            })
            .fold(0.0, f64::max);
        let reach = speed * self.cfg.period * self.n as f64;
        self.assembly.barriers().iter().any(|b| {
            let sp = b.spec();
            let dist = (self.x0[0] - sp.center[0]).hypot(self.x0[1] - sp.center[1]);
            dist - sp.l_x.sqrt() <= reach
        })
    }

    fn cost(&self, states: &[DVector<f64>], inputs: &[DVector<f64>]) -> f64 {
        let state_cost: f64 = states[1..].iter().map(|x| x.dot(&(&self.cfg.q * x))).sum();
        let input_cost: f64 = inputs.iter().map(|u| u.dot(&(&self.cfg.r * u))).sum();
        state_cost + input_cost
    }

    fn rollout(&self, inputs: &[DVector<f64>]) -> Option<Rollout> {
        let mut states = Vec::with_capacity(self.n + 1);
        let mut knots = Vec::with_capacity(self.n);
        states.push(self.x0.clone());
        for (i, u) in inputs.iter().enumerate() {
            knots.push(self.knot(&states[i]));
            let next = rk4_step(self.sys, &states[i], u, self.cfg.period);
            if !next.iter().all(|v| v.is_finite()) {
                return None;
            }
            states.push(next);
        }
        Some(Rollout { states, knots })
    }

    /// Forward pass that projects every violating input onto its knot's
    /// feasible set; inputs that cannot be repaired are replaced by the least
    /// violating box vertex.
    fn repair(&self, inputs: &[DVector<f64>]) -> Option<Candidate> {
        let eps = self.cfg.eps_dec;
        let bx = &self.cfg.input_box;
        let mut states = Vec::with_capacity(self.n + 1);
        let mut fixed = Vec::with_capacity(self.n);
        let mut shortfall = 0.0;
        let mut max_violation = f64::NEG_INFINITY;
        let mut hazard = 0;
        states.push(self.x0.clone());
        for (i, u) in inputs.iter().enumerate() {
            let knot = self.knot(&states[i]);
            // the current state is shared by every candidate
            if i > 0 {
                hazard = hazard.max(knot.hazard());
            }
            let mut u = u.clone();
            bx.clamp(&mut u);
            if knot.enforced {
                let slack = 1e-12 * (knot.drift.abs() + knot.gain.abs().dot(&bx.half_range().add_scalar(bx.mean().amax())));
                let bound = -eps - slack - knot.drift;
                if knot.gain.dot(&u) > bound {
                    u = match project_halfspace_box(&u, &knot.gain, bound, bx) {
                        Some(p) => p,
                        None => bx.minimizing_vertex(&knot.gain),
                    };
                }
                let v = knot.violation(&u, eps);
                max_violation = max_violation.max(v);
                shortfall += v.max(0.0);
            }
            let next = rk4_step(self.sys, &states[i], &u, self.cfg.period);
            if !next.iter().all(|v| v.is_finite()) {
                return None;
            }
            states.push(next);
            fixed.push(u);
        }
        hazard = hazard.max(self.knot(&states[self.n]).hazard());
        let cost = self.cost(&states, &fixed);
        Some(Candidate {
            inputs: fixed,
            states,
            cost,
            shortfall,
            max_violation,
            converged: false,
            hazard,
        })
    }

    /// Inputs produced by following the universal formula along the nominal
    /// prediction.
    fn universal_rollout(&self) -> Vec<DVector<f64>> {
        let mut x = self.x0.clone();
        let mut inputs = Vec::with_capacity(self.n);
        for _ in 0..self.n {
            let u = universal_terms(self.assembly, self.sys, &self.cfg.input_box, &x).input;
            x = rk4_step(self.sys, &x, &u, self.cfg.period);
            inputs.push(u);
            if !x.iter().all(|v| v.is_finite()) {
                break;
            }
        }
        while inputs.len() < self.n {
            inputs.push(self.cfg.input_box.mean());
        }
        inputs
    }

    fn starts(&self, warm: Option<&[DVector<f64>]>, count: usize) -> Vec<Vec<DVector<f64>>> {
        let bx = &self.cfg.input_box;
        let mut out: Vec<Vec<DVector<f64>>> = Vec::new();
        if let Some(w) = warm.filter(|w| w.len() == self.n) {
            out.push(w.to_vec());
        }
        out.push(self.universal_rollout());
        // constant box corners sweep full-speed arcs around nearby obstacles
        for u in bx.vertices() {
            out.push(vec![u; self.n]);
        }
        out.push(vec![bx.mean(); self.n]);
        out.truncate(count);
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.solver.seed);
        while out.len() < count {
            out.push(
                (0..self.n)
                    .map(|_| DVector::from_iterator(self.m, (0..self.m).map(|j| rng.gen_range(bx.u_min[j]..=bx.u_max[j]))))
                    .collect(),
            );
        }
        out
    }

    /// Forward-difference sensitivities of the RK4 step with respect to state
    /// and input; `next` is the unperturbed step.
    fn step_jacobians(&self, x: &DVector<f64>, u: &DVector<f64>, next: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let h = self.cfg.period;
        let mut a = DMatrix::zeros(self.nx, self.nx);
        let mut b = DMatrix::zeros(self.nx, self.m);
        let mut xp = x.clone();
        for j in 0..self.nx {
            let d = FD_STEP * (1.0 + x[j].abs());
            xp[j] = x[j] + d;
            a.set_column(j, &((rk4_step(self.sys, &xp, u, h) - next) / d));
            xp[j] = x[j];
        }
        let mut up = u.clone();
        for j in 0..self.m {
            let d = FD_STEP * (1.0 + u[j].abs());
            up[j] = u[j] + d;
            b.set_column(j, &((rk4_step(self.sys, x, &up, h) - next) / d));
            up[j] = u[j];
        }
        (a, b)
    }

    /// Forward-difference state derivative of `drift(x) + gain(x) . u`.
    fn constraint_state_gradient(&self, x: &DVector<f64>, u: &DVector<f64>, base: &Knot) -> DVector<f64> {
        let c0 = base.drift + base.gain.dot(u);
        let mut xp = x.clone();
        DVector::from_iterator(
            self.nx,
            (0..self.nx).map(|j| {
                let d = FD_STEP * (1.0 + x[j].abs());
                xp[j] = x[j] + d;
                let sample = self.assembly.sample(&xp);
                let split = generator_split(&sample, self.sys, &xp);
                xp[j] = x[j];
                (split.drift + split.gain.dot(u) - c0) / d
            }),
        )
    }
}

/// Augmented-Lagrangian merit in least-squares form.
struct Merit {
    cost_scale: f64,
    weights: Vec<f64>,
    multipliers: Vec<f64>,
    penalty: f64,
    tie_break: f64,
}

impl Merit {
    fn residual_len(&self, p: &Problem) -> usize {
        p.n * (p.nx + 2 * p.m) + p.n
    }

    fn residuals(&self, p: &Problem, z: &DVector<f64>, ro: &Rollout) -> DVector<f64> {
        let inputs = p.split(z);
        let mut r = DVector::zeros(self.residual_len(p));
        let cs = self.cost_scale.sqrt();
        let mut row = 0;
        for x in &ro.states[1..] {
            r.rows_mut(row, p.nx).copy_from(&(&p.q_sqrt * x / cs));
            row += p.nx;
        }
        let tb = self.tie_break.sqrt();
        for u in &inputs {
            r.rows_mut(row, p.m).copy_from(&(&p.r_sqrt * u / cs));
            row += p.m;
            r.rows_mut(row, p.m).copy_from(&(u * tb));
            row += p.m;
        }
        let sq = self.penalty.sqrt();
        for (i, knot) in ro.knots.iter().enumerate() {
            if knot.enforced {
                let g = self.weights[i] * knot.violation(&inputs[i], p.cfg.eps_dec);
                r[row + i] = sq * (g + self.multipliers[i] / self.penalty).max(0.0);
            }
        }
        r
    }

    fn jacobian(&self, p: &Problem, z: &DVector<f64>, ro: &Rollout, r: &DVector<f64>) -> DMatrix<f64> {
        let inputs = p.split(z);
        let nz = p.n * p.m;
        let mut jac = DMatrix::zeros(self.residual_len(p), nz);
        let cs = self.cost_scale.sqrt();
        let pen_row0 = p.n * (p.nx + 2 * p.m);
        let mut sens = DMatrix::zeros(p.nx, nz);
        for i in 0..p.n {
            // knot i constraint uses the sensitivity of x_i
            let row = pen_row0 + i;
            if ro.knots[i].enforced && r[row] > 0.0 {
                let w = self.penalty.sqrt() * self.weights[i];
                let gx = p.constraint_state_gradient(&ro.states[i], &inputs[i], &ro.knots[i]);
                let mut jr = sens.tr_mul(&gx);
                for j in 0..p.m {
                    jr[i * p.m + j] += ro.knots[i].gain[j];
                }
                jac.set_row(row, &(jr.transpose() * w));
            }
            let (a, b) = p.step_jacobians(&ro.states[i], &inputs[i], &ro.states[i + 1]);
            let mut next = &a * &sens;
            for j in 0..p.m {
                let mut col = next.column_mut(i * p.m + j);
                col += b.column(j);
            }
            sens = next;
            let qs = &p.q_sqrt * &sens / cs;
            jac.view_mut((i * p.nx, 0), (p.nx, nz)).copy_from(&qs);
        }
        let tb = self.tie_break.sqrt();
        let mut row = p.n * p.nx;
        for i in 0..p.n {
            jac.view_mut((row, i * p.m), (p.m, p.m)).copy_from(&(&p.r_sqrt / cs));
            row += p.m;
            for j in 0..p.m {
                jac[(row + j, i * p.m + j)] = tb;
            }
            row += p.m;
        }
        jac
    }
}

struct Search<'p, 'a> {
    problem: &'p Problem<'a>,
    best: Option<Candidate>,
    least_bad: Option<Candidate>,
    iterations: usize,
}

impl<'p, 'a> Search<'p, 'a> {
    fn offer(&mut self, cand: Candidate) {
        let tol = self.problem.cfg.solver.tol;
        if cand.max_violation <= tol {
            // predictions that stay out of W_c > 0, then out of D, rank first
            let better = match &self.best {
                None => true,
                Some(b) if cand.hazard != b.hazard => cand.hazard < b.hazard,
                Some(b) => cand.cost < b.cost || (cand.cost == b.cost && cand.converged && !b.converged),
            };
            if better {
                self.best = Some(cand);
            }
        } else if self.least_bad.as_ref().is_none_or(|b| cand.shortfall < b.shortfall) {
            self.least_bad = Some(cand);
        }
    }

    fn evaluate(&mut self, z: &DVector<f64>, converged: bool) {
        let inputs = self.problem.split(z);
        if let Some(mut c) = self.problem.repair(&inputs) {
            c.converged = converged;
            self.offer(c);
        }
    }

    /// Projected Levenberg-Marquardt on the augmented Lagrangian with
    /// multiplier and penalty updates.
    fn local_solve(&mut self, start: Vec<DVector<f64>>) {
        let p = self.problem;
        let budget = p.cfg.solver.max_iter;
        let tol = p.cfg.solver.tol;
        if budget == 0 {
            return;
        }
        let mut z = p.join(&start);
        z = z.sup(&p.lower).inf(&p.upper);
        let mut used = 1;
        self.evaluate(&z, false);
        let Some(mut ro) = p.rollout(&p.split(&z)) else { return };

        let inputs = p.split(&z);
        let weights: Vec<f64> = ro
            .knots
            .iter()
            .map(|k| {
                let spread = k.gain.abs().dot(&p.cfg.input_box.half_range());
                let s = spread.max(k.drift.abs());
                if s > 0.0 {
                    1.0 / s
                } else {
                    1.0
                }
            })
            .collect();
        let mut merit = Merit {
            cost_scale: p.cost(&ro.states, &inputs).max(1e-12),
            weights,
            multipliers: vec![0.0; p.n],
            penalty: 10.0,
            tie_break: 1e-10,
        };
        let mut damping = 1e-3;
        let mut last_violation = f64::INFINITY;

        'outer: for _round in 0..12 {
            let mut r = merit.residuals(p, &z, &ro);
            let mut phi = 0.5 * r.norm_squared();
            let mut inner_done = false;
            while !inner_done {
                if used >= budget {
                    break 'outer;
                }
                let jac = merit.jacobian(p, &z, &ro, &r);
                let grad = jac.tr_mul(&r);
                let free: Vec<usize> = (0..z.len())
                    .filter(|&k| !((z[k] <= p.lower[k] && grad[k] > 0.0) || (z[k] >= p.upper[k] && grad[k] < 0.0)))
                    .collect();
                let pg = free.iter().map(|&k| grad[k].abs()).fold(0.0, f64::max);
                if free.is_empty() || pg <= 1e-10 * (1.0 + phi) {
                    break;
                }
                let jf = jac.select_columns(free.iter());
                let gf = DVector::from_iterator(free.len(), free.iter().map(|&k| grad[k]));
                let jtj = jf.tr_mul(&jf);
                let mut accepted = false;
                while used < budget {
                    used += 1;
                    let mut h = jtj.clone();
                    for k in 0..free.len() {
                        h[(k, k)] += damping * (jtj[(k, k)] + 1e-9);
                    }
                    let Some(chol) = h.cholesky() else {
                        damping *= 10.0;
                        continue;
                    };
                    let step = chol.solve(&(-&gf));
                    let mut trial = z.clone();
                    for (s, &k) in free.iter().enumerate() {
                        trial[k] = (trial[k] + step[s]).clamp(p.lower[k], p.upper[k]);
                    }
                    let Some(tro) = p.rollout(&p.split(&trial)) else {
                        damping *= 10.0;
                        continue;
                    };
                    let tr = merit.residuals(p, &trial, &tro);
                    let tphi = 0.5 * tr.norm_squared();
                    if tphi < phi {
                        let rel = (phi - tphi) / phi.max(1e-300);
                        let moved = (&trial - &z).amax();
                        z = trial;
                        ro = tro;
                        r = tr;
                        phi = tphi;
                        damping = (damping / 3.0).max(1e-12);
                        self.evaluate(&z, false);
                        accepted = true;
                        if rel < tol || moved < 1e-10 {
                            inner_done = true;
                        }
                        break;
                    }
                    damping *= 5.0;
                    if damping > 1e12 {
                        inner_done = true;
                        break;
                    }
                }
                if !accepted && !inner_done {
                    break 'outer;
                }
            }

            // multiplier / penalty update
            let inputs = p.split(&z);
            let mut violation: f64 = 0.0;
            for (i, k) in ro.knots.iter().enumerate() {
                if k.enforced {
                    let g = merit.weights[i] * k.violation(&inputs[i], p.cfg.eps_dec);
                    violation = violation.max(g);
                    merit.multipliers[i] = (merit.multipliers[i] + merit.penalty * g).max(0.0);
                }
            }
            if violation <= tol {
                self.evaluate(&z, true);
                break;
            }
            if violation > 0.25 * last_violation {
                merit.penalty = (merit.penalty * 10.0).min(1e12);
            }
            last_violation = violation;
            damping = damping.max(1e-3);
        }
        self.iterations += used;
    }
}

/// Solves the receding-horizon problem from `state`.
pub fn solve_ocp(sys: &AffineSdeSystem, assembly: &ClbfAssembly, cfg: &MpcConfig, state: &DVector<f64>) -> OcpSolution {
    solve_ocp_from(sys, assembly, cfg, state, None)
}

/// Same as [`solve_ocp`], seeding the first start with `warm`.
pub fn solve_ocp_from(
    sys: &AffineSdeSystem,
    assembly: &ClbfAssembly,
    cfg: &MpcConfig,
    state: &DVector<f64>,
    warm: Option<&[DVector<f64>]>,
) -> OcpSolution {
    let problem = Problem::new(sys, assembly, cfg, state);
    let mut search = Search {
        problem: &problem,
        best: None,
        least_bad: None,
        iterations: 0,
    };
    // restarts only pay off where barriers make the problem nonconvex
    let count = if problem.barrier_in_reach() { 1 + cfg.solver.restarts } else { 1 };
    for start in problem.starts(warm, count) {
        search.local_solve(start);
    }
    let iterations = search.iterations;
    let flag_knots = |states: &[DVector<f64>]| {
        let mut unsafe_knots = Vec::new();
        let mut relaxed_knots = Vec::new();
        for (i, x) in states[..states.len() - 1].iter().enumerate() {
            let k = problem.knot(x);
            if k.unsafe_state {
                unsafe_knots.push(i);
            } else if k.relaxed {
                relaxed_knots.push(i);
            }
        }
        (unsafe_knots, relaxed_knots)
    };
    match (search.best, search.least_bad) {
        (Some(best), _) => {
            let (unsafe_knots, relaxed_knots) = flag_knots(&best.states);
            if !unsafe_knots.is_empty() {
                warn!("predicted trajectory enters the unsafe set at knots {unsafe_knots:?}");
            }
            if !relaxed_knots.is_empty() {
                debug!("predicted trajectory has W_c > 0 at knots {relaxed_knots:?}");
            }
            OcpSolution {
                status: if best.converged { OcpStatus::Optimal } else { OcpStatus::Feasible },
                cost: best.cost,
                max_violation: best.max_violation,
                inputs: best.inputs,
                predicted_states: best.states,
                least_infeasible: None,
                unsafe_knots,
                relaxed_knots,
                iterations,
            }
        }
        (None, bad) => {
            let (states, unsafe_knots, relaxed_knots, max_violation) = match &bad {
                Some(b) => {
                    let (u, r) = flag_knots(&b.states);
                    (b.states.clone(), u, r, b.max_violation)
                }
                None => (vec![state.clone()], Vec::new(), Vec::new(), f64::INFINITY),
            };
            OcpSolution {
                inputs: Vec::new(),
                predicted_states: states,
                status: OcpStatus::Infeasible,
                cost: f64::INFINITY,
                max_violation,
                least_infeasible: bad.map(|b| b.inputs),
                unsafe_knots,
                relaxed_knots,
                iterations,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutcome {
    pub input: DVector<f64>,
    pub status: OcpStatus,
    pub solution: OcpSolution,
}

fn resolve(sys: &AffineSdeSystem, assembly: &ClbfAssembly, cfg: &MpcConfig, state: &DVector<f64>, solution: OcpSolution) -> ControlOutcome {
    if solution.status.is_solved() {
        return ControlOutcome {
            input: solution.inputs[0].clone(),
            status: solution.status,
            solution,
        };
    }
    let terms = universal_terms(assembly, sys, &cfg.input_box, state);
    if terms.certifies() {
        return ControlOutcome {
            input: terms.input,
            status: OcpStatus::Fallback,
            solution,
        };
    }
    let input = match &solution.least_infeasible {
        Some(seq) => seq[0].clone(),
        None => cfg.input_box.minimizing_vertex(&terms.split.gain),
    };
    warn!("no admissible input at state {:?}; applying least-infeasible input", state.as_slice());
    ControlOutcome {
        input,
        status: OcpStatus::Infeasible,
        solution,
    }
}

/// First input of the optimal sequence, or the universal formula when the
/// optimizer fails inside `X_phi`, or the least-infeasible input otherwise.
pub fn control_step(sys: &AffineSdeSystem, assembly: &ClbfAssembly, cfg: &MpcConfig, state: &DVector<f64>) -> (DVector<f64>, OcpStatus) {
    let out = resolve(sys, assembly, cfg, state, solve_ocp(sys, assembly, cfg, state));
    (out.input, out.status)
}

/// Receding-horizon controller that warm-starts each solve with the previous
/// solution shifted by one period.
#[derive(Debug, Clone)]
pub struct MpcController {
    sys: AffineSdeSystem,
    assembly: ClbfAssembly,
    cfg: MpcConfig,
    previous: Option<Vec<DVector<f64>>>,
}

impl MpcController {
    pub fn new(sys: AffineSdeSystem, assembly: ClbfAssembly, cfg: MpcConfig) -> Result<Self> {
        cfg.validate(&sys)?;
        Ok(Self {
            sys,
            assembly,
            cfg,
            previous: None,
        })
    }

    pub fn system(&self) -> &AffineSdeSystem {
        &self.sys
    }

    pub fn assembly(&self) -> &ClbfAssembly {
        &self.assembly
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    pub fn step(&mut self, state: &DVector<f64>) -> ControlOutcome {
        let warm = self.previous.take().map(|mut prev| {
            prev.remove(0);
            let last = prev.last().cloned().unwrap_or_else(|| self.cfg.input_box.mean());
            prev.push(last);
            prev
        });
        let solution = solve_ocp_from(&self.sys, &self.assembly, &self.cfg, state, warm.as_deref());
        let out = resolve(&self.sys, &self.assembly, &self.cfg, state, solution);
        if out.status.is_solved() {
            self.previous = Some(out.solution.inputs.clone());
        }
        out
    }
}
