//! Unconstrained stochastic CLF for the wheeled robot, obtained by dynamic
//! feedback linearization.
//!
//! The augmented state `(x, y, theta, v)` maps to the flat coordinates
//! `z = (x, y, v cos(theta), v sin(theta)) = alpha(x) v + beta(x)` with
//! `alpha = (0, 0, cos(theta), sin(theta))` and `beta = (x, y, 0, 0)`. A quadratic
//! `z^T P z` is designed for the linearized system and minimized over `v`, which
//! gives `V(x) = V3 - V2^2 / V1` with
//! `V1 = alpha^T P alpha = p3`, `V2 = alpha^T P beta = p2 (x cos + y sin)` and
//! `V3 = beta^T P beta = p1 (x^2 + y^2)`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sde::{FieldSample, ScalarField, UnicycleParams};

/// Entries of `P = [[p1, 0, p2, 0], [0, p1, 0, p2], [p2, 0, p3, 0], [0, p2, 0, p3]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClfParams {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
}

impl Default for ClfParams {
    fn default() -> Self {
        Self {
            p1: 10.0,
            p2: 1.0,
            p3: 1.0,
        }
    }
}

impl ClfParams {
    /// `p2^2 / p3`, the weight of the heading-aligned cross term.
    pub fn cross_weight(&self) -> f64 {
        self.p2 * self.p2 / self.p3
    }
}

/// One failed design inequality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClfViolation {
    NonPositiveP1,
    NonPositiveP2,
    NonPositiveP3,
    NotPositiveDefinite,
    NoiseRatio,
    P1LowerBound,
}

impl fmt::Display for ClfViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = match self {
            ClfViolation::NonPositiveP1 => "p1 > 0",
            ClfViolation::NonPositiveP2 => "p2 > 0",
            ClfViolation::NonPositiveP3 => "p3 > 0",
            ClfViolation::NotPositiveDefinite => "p1*p3 - p2^2 > 0",
            ClfViolation::NoiseRatio => "p2/p3 - (sigma1^2 + sigma2^2)/r_g^2 > 0",
            ClfViolation::P1LowerBound => {
                "p1 > max(p2^2 r_g^2 sigma3^2 / (2 p2 r_g^2 - 2 p3 (sigma1^2 + sigma2^2)), 2 p2^2/p3 + p2 sigma3^2/2)"
            }
        };
        write!(f, "violated: {msg}")
    }
}

/// Checks the inequalities under which the linearized quadratic is an
/// unconstrained CLF for the given noise. An empty list means valid.
pub fn validate_clf_params(p: &ClfParams, noise: &UnicycleParams) -> Vec<ClfViolation> {
    let mut out = Vec::new();
    if !(p.p1 > 0.0) {
        out.push(ClfViolation::NonPositiveP1);
    }
    if !(p.p2 > 0.0) {
        out.push(ClfViolation::NonPositiveP2);
    }
    if !(p.p3 > 0.0) {
        out.push(ClfViolation::NonPositiveP3);
    }
    if !(p.p1 * p.p3 - p.p2 * p.p2 > 0.0) {
        out.push(ClfViolation::NotPositiveDefinite);
    }
    let planar = noise.sigma1 * noise.sigma1 + noise.sigma2 * noise.sigma2;
    let rg2 = noise.r_g * noise.r_g;
    let s3 = noise.sigma3 * noise.sigma3;
    if !(p.p2 / p.p3 - planar / rg2 > 0.0) {
        out.push(ClfViolation::NoiseRatio);
    }
    let first = p.p2 * p.p2 * rg2 * s3 / (2.0 * p.p2 * rg2 - 2.0 * p.p3 * planar);
    let second = 2.0 * p.p2 * p.p2 / p.p3 + 0.5 * p.p2 * s3;
    if !(p.p1 > first.max(second)) {
        out.push(ClfViolation::P1LowerBound);
    }
    out
}

/// `V(x, y, theta) = p1 (x^2 + y^2) - (p2^2 / p3) (x cos(theta) + y sin(theta))^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClfField {
    params: ClfParams,
}

impl ClfField {
    pub fn new(params: ClfParams) -> Result<Self> {
        let structural = [
            ClfViolation::NonPositiveP1,
            ClfViolation::NonPositiveP2,
            ClfViolation::NonPositiveP3,
            ClfViolation::NotPositiveDefinite,
        ];
        let failed: Vec<_> = validate_clf_params(&params, &UnicycleParams::default())
            .into_iter()
            .filter(|v| structural.contains(v))
            .collect();
        if let Some(first) = failed.first() {
            return Err(Error::InvalidParameter(format!("CLF parameters {params:?}: {first}")));
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &ClfParams {
        &self.params
    }

    /// `V1, V2, V3` of the lifted quadratic at `x`.
    pub fn components(&self, x: &DVector<f64>) -> (f64, f64, f64) {
        let p = &self.params;
        let (s, c) = x[2].sin_cos();
        (p.p3, p.p2 * (x[0] * c + x[1] * s), p.p1 * (x[0] * x[0] + x[1] * x[1]))
    }

    /// Lifted quadratic `z^T P z` with the velocity `v` kept free.
    pub fn lifted_value(&self, x: &DVector<f64>, v: f64) -> f64 {
        let (v1, v2, v3) = self.components(x);
        v1 * v * v + 2.0 * v2 * v + v3
    }
}

/// Velocity that minimizes the lifted quadratic, `-(p2/p3)(x cos + y sin)`.
pub fn minimizing_p(x: &DVector<f64>, p: &ClfParams) -> f64 {
    let (s, c) = x[2].sin_cos();
    -(p.p2 / p.p3) * (x[0] * c + x[1] * s)
}

pub fn clf_field(p: ClfParams) -> Result<ClfField> {
    ClfField::new(p)
}

impl ScalarField for ClfField {
    fn dim(&self) -> usize {
        3
    }

    fn sample(&self, x: &DVector<f64>) -> FieldSample {
        let p1 = self.params.p1;
        let q = self.params.cross_weight();
        let (px, py) = (x[0], x[1]);
        let (s, c) = x[2].sin_cos();
        // projections of the position on the heading and its normal
        let along = px * c + py * s;
        let across = -px * s + py * c;

        let value = p1 * (px * px + py * py) - q * along * along;
        let gradient = DVector::from_vec(vec![
            2.0 * p1 * px - 2.0 * q * along * c,
            2.0 * p1 * py - 2.0 * q * along * s,
            -2.0 * q * along * across,
        ]);
        let hxx = 2.0 * p1 - 2.0 * q * c * c;
        let hyy = 2.0 * p1 - 2.0 * q * s * s;
        let hxy = -2.0 * q * c * s;
        let hxt = -2.0 * q * (across * c - along * s);
        let hyt = -2.0 * q * (across * s + along * c);
        let htt = 2.0 * q * (along * along - across * across);
        let hessian = DMatrix::from_row_slice(3, 3, &[hxx, hxy, hxt, hxy, hyy, hyt, hxt, hyt, htt]);
        FieldSample {
            value,
            gradient,
            hessian,
        }
    }
}
