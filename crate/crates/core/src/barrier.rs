//! Sigmoid control barrier functions for circular obstacles.
//!
//! For an obstacle with level function `F(x) = (x - x_o)^2 + (y - y_o)^2`, the
//! unsafe set is `D = {F < l_D}` and the barrier is active on `X = {F < l_X}`:
//!
//! ```text
//! B = B_min + (B_max - B_min) / (1 + e1),   e1 = exp(-k_B (l_D - F) / (F (l_X - F)))
//! ```
//!
//! and `B = B_min` outside `X`. The decay rate `k_B` follows a cosine schedule in
//! `F`, so its state derivatives are obtained through `F`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sde::{FieldSample, ScalarField};

/// Exponent magnitude beyond which the sigmoid is replaced by its limit.
const EXPONENT_LIMIT: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierSpec {
    pub center: [f64; 2],
    pub l_d: f64,
    pub l_x: f64,
    pub b_min: f64,
    pub b_max: f64,
    /// Amplitude `a` of the cosine decay-rate schedule; zero gives a constant rate.
    pub kb_a: f64,
    /// Floor `b` of the decay-rate schedule.
    pub kb_b: f64,
}

impl BarrierSpec {
    /// Obstacle with the case-study levels `B_min = -10`, `B_max = 15` and
    /// schedule `a = 60`, `b = 0.1`.
    pub fn with_defaults(center: [f64; 2], l_d: f64, l_x: f64) -> Self {
        Self {
            center,
            l_d,
            l_x,
            b_min: -10.0,
            b_max: 15.0,
            kb_a: 60.0,
            kb_b: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.center.iter().all(|c| c.is_finite())
            && self.l_d > 0.0
            && self.l_d < self.l_x
            && self.l_x.is_finite()
            && self.b_min < 0.0
            && self.b_max > 0.0
            && self.b_max + self.b_min > 0.0
            && self.kb_a >= 0.0
            && self.kb_b > 0.0
            && self.b_max.is_finite()
            && self.b_min.is_finite()
            && self.kb_a.is_finite()
            && self.kb_b.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("barrier spec {self:?} violates 0 < l_D < l_X, B_min < 0 < B_max, B_max + B_min > 0, a >= 0, b > 0")))
        }
    }

    /// `-B_min`, the depth of the barrier below zero away from the obstacle.
    pub fn eta(&self) -> f64 {
        -self.b_min
    }

    pub fn level(&self, x: &DVector<f64>) -> f64 {
        let dx = x[0] - self.center[0];
        let dy = x[1] - self.center[1];
        dx * dx + dy * dy
    }

    pub fn in_unsafe(&self, x: &DVector<f64>) -> bool {
        self.level(x) < self.l_d
    }

    pub fn in_active(&self, x: &DVector<f64>) -> bool {
        self.level(x) < self.l_x
    }

    /// Same obstacle with a constant decay rate.
    pub fn with_constant_rate(&self, k: f64) -> Self {
        Self {
            kb_a: 0.0,
            kb_b: k,
            ..*self
        }
    }
}

/// `F = (x - x_o)^2 + (y - y_o)^2` with its derivatives over `(x, y, theta)`.
pub fn obstacle_f(spec: &BarrierSpec, x: &DVector<f64>) -> FieldSample {
    let dx = x[0] - spec.center[0];
    let dy = x[1] - spec.center[1];
    let mut s = FieldSample::zeros(x.len(), dx * dx + dy * dy);
    s.gradient[0] = 2.0 * dx;
    s.gradient[1] = 2.0 * dy;
    s.hessian[(0, 0)] = 2.0;
    s.hessian[(1, 1)] = 2.0;
    s
}

/// Decay rate and its first two derivatives with respect to `F`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KbSample {
    pub k: f64,
    pub dk: f64,
    pub d2k: f64,
}

/// `k_B = a cos(2 pi F / (3 l_X)) + a / 2 + b`, decreasing from `3a/2 + b` at
/// `F = 0` to `b` at `F = l_X`.
pub fn kb_schedule(spec: &BarrierSpec, f: f64) -> Result<KbSample> {
    if !(0.0..=spec.l_x).contains(&f) {
        return Err(Error::ScheduleDomain { value: f, l_x: spec.l_x });
    }
    let w = 2.0 * std::f64::consts::PI / (3.0 * spec.l_x);
    let (s, c) = (w * f).sin_cos();
    let a = spec.kb_a;
    Ok(KbSample {
        k: a * c + 0.5 * a + spec.kb_b,
        dk: -a * w * s,
        d2k: -a * w * w * c,
    })
}

/// Barrier value and its first two derivatives with respect to `F`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierProfile {
    pub value: f64,
    pub d_f: f64,
    pub d2_f: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierField {
    spec: BarrierSpec,
}

pub fn barrier_field(spec: BarrierSpec) -> Result<BarrierField> {
    BarrierField::new(spec)
}

impl BarrierField {
    pub fn new(spec: BarrierSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &BarrierSpec {
        &self.spec
    }

    /// `B` as a function of the level value `F >= 0`.
    pub fn profile(&self, f: f64) -> BarrierProfile {
        let sp = &self.spec;
        let outside = BarrierProfile {
            value: sp.b_min,
            d_f: 0.0,
            d2_f: 0.0,
        };
        let center = BarrierProfile {
            value: sp.b_max,
            d_f: 0.0,
            d2_f: 0.0,
        };
        if f >= sp.l_x {
            return outside;
        }
        if f <= 0.0 {
            return center;
        }
        let kb = kb_schedule(sp, f).expect("F inside the schedule domain");
        let (l_d, l_x, k) = (sp.l_d, sp.l_x, kb.k);

        let e4 = (l_d - f) / (f * (l_x - f));
        // e1 = exp(-k e4)
        let exponent = -k * e4;
        if exponent > EXPONENT_LIMIT {
            return outside;
        }
        if exponent < -EXPONENT_LIMIT {
            return center;
        }
        // sig = 1 / (1 + e1) and comp = 1 - sig, both from one exponential so
        // neither overflows nor loses digits to cancellation near saturation
        let (sig, comp) = if exponent <= 0.0 {
            let e1 = exponent.exp();
            (1.0 / (1.0 + e1), e1 / (1.0 + e1))
        } else {
            let t = (-exponent).exp();
            (t / (1.0 + t), 1.0 / (1.0 + t))
        };
        let span = sp.b_max - sp.b_min;
        // span e1 / (1 + e1)^2
        let w1 = span * sig * comp;
        // 2 span e1^2 / (1 + e1)^3 - span e1 / (1 + e1)^2
        let e5 = w1 * (comp - sig);
        let e2 = f * f - 2.0 * l_d * f + l_d * l_x;
        let e3 = f * f * (l_x - f) * (l_x - f);

        let ke2e3 = k * e2 / e3;
        let d_f = -w1 * (ke2e3 - e4 * kb.dk);

        // second derivative grouped by dF dF^T, dF dk^T, dk dk^T and the
        // curvature of k; dk = k'(F) dF because k depends on the state through F
        let ff = e5 * ke2e3 * ke2e3
            - w1 * k / (e3 * e3) * (2.0 * e3 * (f - l_d) - 2.0 * e2 * f * (f - l_x) * (2.0 * f - l_x));
        let fk = -(e5 * 2.0 * k * e2 * e4 / e3 + 2.0 * w1 * e2 / e3);
        let kk = e5 * e4 * e4;
        let d2_f = ff + fk * kb.dk + kk * kb.dk * kb.dk + w1 * e4 * kb.d2k;

        BarrierProfile {
            value: sp.b_min + span * sig,
            d_f,
            d2_f,
        }
    }
}

impl ScalarField for BarrierField {
    fn dim(&self) -> usize {
        3
    }

    fn sample(&self, x: &DVector<f64>) -> FieldSample {
        let level = obstacle_f(&self.spec, x);
        let p = self.profile(level.value);
        if p.d_f == 0.0 && p.d2_f == 0.0 {
            return FieldSample::zeros(x.len(), p.value);
        }
        let gradient = &level.gradient * p.d_f;
        let hessian: DMatrix<f64> = &level.gradient * level.gradient.transpose() * p.d2_f + &level.hessian * p.d_f;
        FieldSample {
            value: p.value,
            gradient,
            hessian,
        }
    }
}

/// Barrier value over `F` for the slowest constant rate `b`, the fastest
/// constant rate `3a/2 + b` and the cosine schedule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileCurves {
    pub f: Vec<f64>,
    pub constant_small: Vec<f64>,
    pub constant_large: Vec<f64>,
    pub scheduled: Vec<f64>,
}

/// `points` evenly spaced levels over `[0, l_X]`, both ends included.
pub fn profile_curves(spec: &BarrierSpec, points: usize) -> Result<ProfileCurves> {
    if points < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 points, got {points}")));
    }
    let small = BarrierField::new(spec.with_constant_rate(spec.kb_b))?;
    let large = BarrierField::new(spec.with_constant_rate(1.5 * spec.kb_a + spec.kb_b))?;
    let scheduled = BarrierField::new(*spec)?;
    let f: Vec<f64> = (0..points).map(|i| spec.l_x * i as f64 / (points - 1) as f64).collect();
    Ok(ProfileCurves {
        constant_small: f.iter().map(|v| small.profile(*v).value).collect(),
        constant_large: f.iter().map(|v| large.profile(*v).value).collect(),
        scheduled: f.iter().map(|v| scheduled.profile(*v).value).collect(),
        f,
    })
}

impl ProfileCurves {
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# F,B_constant_small,B_constant_large,B_scheduled")?;
        for i in 0..self.f.len() {
            writeln!(
                out,
                "{},{},{},{}",
                self.f[i], self.constant_small[i], self.constant_large[i], self.scheduled[i]
            )?;
        }
        Ok(())
    }
}

/// Largest derivative magnitudes on one ring `F = l_X (1 - 10^-k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RingStat {
    pub exponent: u32,
    pub level: f64,
    pub max_gradient: f64,
    pub max_hessian: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothnessReport {
    pub rings: Vec<RingStat>,
    /// Derivative magnitudes exactly on the outer boundary.
    pub boundary_gradient: f64,
    pub boundary_hessian: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Samples rings approaching the outer boundary from inside and checks that
/// gradient and Hessian (Frobenius) norms fall below `tol` on the innermost ring
/// and vanish on the boundary itself.
pub fn verify_boundary_smoothness(spec: &BarrierSpec, tol: f64) -> Result<SmoothnessReport> {
    let field = BarrierField::new(*spec)?;
    let angles = 64;
    let ring_max = |level: f64| {
        let r = level.sqrt();
        (0..angles).fold((0.0f64, 0.0f64), |(g, h), j| {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / angles as f64;
            let x = DVector::from_vec(vec![spec.center[0] + r * phi.cos(), spec.center[1] + r * phi.sin(), 0.0]);
            let s = field.sample(&x);
            (g.max(s.gradient.norm()), h.max(s.hessian.norm()))
        })
    };
    let rings: Vec<RingStat> = (2..=8)
        .map(|k| {
            let level = spec.l_x * (1.0 - 10f64.powi(-(k as i32)));
            let (g, h) = ring_max(level);
            RingStat {
                exponent: k,
                level,
                max_gradient: g,
                max_hessian: h,
            }
        })
        .collect();
    let (bg, bh) = ring_max(spec.l_x);
    let inner = rings.last().expect("at least one ring");
    let pass = inner.max_gradient < tol && inner.max_hessian < tol && bg == 0.0 && bh == 0.0;
    Ok(SmoothnessReport {
        rings,
        boundary_gradient: bg,
        boundary_hessian: bh,
        tol,
        pass,
    })
}
