//! Control Lyapunov-barrier function `W_c = V + sum_i lambda_i B_i + kappa` and
//! the bounded universal-formula controller built on it.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::barrier::{BarrierField, BarrierSpec};
use crate::clf::{ClfField, ClfParams};
use crate::error::{Error, Result};
use crate::sde::{generator_split, AffineSdeSystem, FieldSample, GeneratorSplit, ScalarField};

/// Weights of the combined function and the bounds they were derived from.
///
/// `c1`, `c2` bound `V` by the squared position norm; `c3[i]` is the largest
/// squared position norm on the outer boundary of obstacle `i` and `c4[i]` the
/// smallest inside its unsafe set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub lambda: Vec<f64>,
    pub kappa: f64,
    pub kappa_window: (f64, f64),
    pub eta: Vec<f64>,
    pub c1: f64,
    pub c2: f64,
    pub c3: Vec<f64>,
    pub c4: Vec<f64>,
}

/// `lambda_i = (c2 c3_i - c1 c4_i) / eta_i + K_i` and `kappa` at the midpoint
/// of its admissible window.
pub fn compute_coefficients(barriers: &[BarrierSpec], c1: f64, c2: f64, k_lambda: &[f64]) -> Result<Coefficients> {
    if barriers.len() != k_lambda.len() {
        return Err(Error::DimensionMismatch {
            what: "lambda offsets",
            expected: barriers.len(),
            got: k_lambda.len(),
        });
    }
    if !(c2 > c1 && c1 > 0.0) {
        return Err(Error::InvalidParameter(format!("need c2 > c1 > 0, got c1 = {c1}, c2 = {c2}")));
    }
    if let Some(k) = k_lambda.iter().find(|k| !(**k >= 0.0)) {
        return Err(Error::InvalidParameter(format!("lambda offsets must be non-negative, got {k}")));
    }
    let mut c3 = Vec::with_capacity(barriers.len());
    let mut c4 = Vec::with_capacity(barriers.len());
    for (i, b) in barriers.iter().enumerate() {
        b.validate()?;
        let dist = b.center[0].hypot(b.center[1]);
        if dist <= b.l_d.sqrt() {
            return Err(Error::InvalidParameter(format!("obstacle {i} contains the origin in its unsafe set")));
        }
        c3.push((dist + b.l_x.sqrt()).powi(2));
        c4.push((dist - b.l_d.sqrt()).powi(2));
    }
    let eta: Vec<f64> = barriers.iter().map(BarrierSpec::eta).collect();
    let lambda: Vec<f64> = (0..barriers.len())
        .map(|i| (c2 * c3[i] - c1 * c4[i]) / eta[i] + k_lambda[i])
        .collect();
    let total: f64 = lambda.iter().zip(&eta).map(|(l, e)| l * e).sum();

    let upper = total - c2 * c3.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut lower = f64::NEG_INFINITY;
    for i in 0..barriers.len() {
        let lo_i = total - lambda[i] * eta[i] - c1 * c4[i];
        if lo_i >= upper {
            return Err(Error::EmptyKappaWindow {
                obstacle: i,
                lower: lo_i,
                upper,
            });
        }
        lower = lower.max(lo_i);
    }
    // without obstacles any kappa < 0 keeps W_c(0) < 0; pick the CLF-only midpoint
    let kappa = if barriers.is_empty() { -1.0 } else { 0.5 * (lower + upper) };
    Ok(Coefficients {
        lambda,
        kappa,
        kappa_window: (lower, upper),
        eta,
        c1,
        c2,
        c3,
        c4,
    })
}

/// Immutable assembled CLBF.
#[derive(Debug, Clone)]
pub struct ClbfAssembly {
    clf: ClfField,
    barriers: Vec<BarrierField>,
    coefficients: Coefficients,
    rho: f64,
    origin_value: f64,
}

impl ClbfAssembly {
    /// `c2 = None` uses `p1`, the tight upper bound of `V` over the squared
    /// position norm.
    pub fn new(clf: ClfParams, barriers: &[BarrierSpec], c1: f64, c2: Option<f64>, k_lambda: &[f64], rho: f64) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(Error::InvalidParameter(format!("rho must be positive, got {rho}")));
        }
        let clf = ClfField::new(clf)?;
        let c2 = c2.unwrap_or(clf.params().p1);
        let coefficients = compute_coefficients(barriers, c1, c2, k_lambda)?;
        let barriers = barriers.iter().map(|b| BarrierField::new(*b)).collect::<Result<Vec<_>>>()?;
        let mut out = Self {
            clf,
            barriers,
            coefficients,
            rho,
            origin_value: 0.0,
        };
        out.origin_value = out.value(&DVector::zeros(3));
        Ok(out)
    }

    pub fn clf(&self) -> &ClfField {
        &self.clf
    }

    pub fn barriers(&self) -> &[BarrierField] {
        &self.barriers
    }

    pub fn coefficients(&self) -> &Coefficients {
        &self.coefficients
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn with_rho(&self, rho: f64) -> Self {
        Self { rho, ..self.clone() }
    }

    /// `W_c(0)`, the minimum value.
    pub fn origin_value(&self) -> f64 {
        self.origin_value
    }

    /// `V_c = W_c - W_c(0) >= 0`.
    pub fn shifted_value(&self, w: f64) -> f64 {
        w - self.origin_value
    }

    pub fn in_unsafe(&self, x: &DVector<f64>) -> bool {
        self.barriers.iter().any(|b| b.spec().in_unsafe(x))
    }
}

pub fn clbf_field(assembly: &ClbfAssembly) -> &dyn ScalarField {
    assembly
}

impl ScalarField for ClbfAssembly {
    fn dim(&self) -> usize {
        3
    }

    fn sample(&self, x: &DVector<f64>) -> FieldSample {
        let mut s = self.clf.sample(x);
        s.value += self.coefficients.kappa;
        for (b, lambda) in self.barriers.iter().zip(&self.coefficients.lambda) {
            let bs = b.sample(x);
            s.add_scaled(*lambda, &bs);
        }
        s
    }
}

/// Componentwise input bounds `u_min <= u <= u_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputBox {
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
}

impl InputBox {
    pub fn new(u_min: Vec<f64>, u_max: Vec<f64>) -> Result<Self> {
        let b = Self { u_min, u_max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.u_min.len() != self.u_max.len() {
            return Err(Error::DimensionMismatch {
                what: "input box",
                expected: self.u_min.len(),
                got: self.u_max.len(),
            });
        }
        if self.u_min.iter().zip(&self.u_max).any(|(lo, hi)| !(lo < hi) || !lo.is_finite() || !hi.is_finite()) {
            return Err(Error::InvalidParameter(format!("input box needs u_min < u_max, got {self:?}")));
        }
        Ok(())
    }

    /// Velocity in `[-10, 10]`, turn rate in `[-pi/2, pi/2]`.
    pub fn unicycle_default() -> Self {
        let h = std::f64::consts::FRAC_PI_2;
        Self {
            u_min: vec![-10.0, -h],
            u_max: vec![10.0, h],
        }
    }

    pub fn dim(&self) -> usize {
        self.u_min.len()
    }

    pub fn mean(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.u_min.iter().zip(&self.u_max).map(|(lo, hi)| 0.5 * (lo + hi)))
    }

    pub fn half_range(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.u_min.iter().zip(&self.u_max).map(|(lo, hi)| 0.5 * (hi - lo)))
    }

    pub fn contains(&self, u: &DVector<f64>) -> bool {
        u.len() == self.dim() && u.iter().enumerate().all(|(i, v)| *v >= self.u_min[i] && *v <= self.u_max[i])
    }

    pub fn clamp(&self, u: &mut DVector<f64>) {
        for (i, v) in u.iter_mut().enumerate() {
            *v = v.clamp(self.u_min[i], self.u_max[i]);
        }
    }

    /// All `2^dim` vertices; bit `j` of the index selects the upper bound of component `j`.
    pub fn vertices(&self) -> Vec<DVector<f64>> {
        (0..1usize << self.dim())
            .map(|k| {
                DVector::from_iterator(
                    self.dim(),
                    (0..self.dim()).map(|j| if k >> j & 1 == 1 { self.u_max[j] } else { self.u_min[j] }),
                )
            })
            .collect()
    }

    /// Box vertex minimizing `gain . u`; ties go to the upper bound.
    pub fn minimizing_vertex(&self, gain: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            gain.iter()
                .enumerate()
                .map(|(i, g)| if *g <= 0.0 { self.u_max[i] } else { self.u_min[i] }),
        )
    }
}

/// Terms of the bounded universal formula at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct UniversalTerms {
    /// `L_f W_c + 1/2 tr(sigma^T H sigma) + L_g W_c u_mean + rho V_c`
    pub a: f64,
    /// `L_g W_c u_d`
    pub b: DVector<f64>,
    pub split: GeneratorSplit,
    pub shifted_value: f64,
    pub input: DVector<f64>,
}

impl UniversalTerms {
    /// Membership in the region where the formula certifies decrease.
    pub fn certifies(&self) -> bool {
        self.a <= self.b.norm()
    }

    /// Normalized correction `K` with `u = u_mean + u_d K`.
    pub fn correction(&self, input_box: &InputBox) -> DVector<f64> {
        (&self.input - input_box.mean()).component_div(&input_box.half_range())
    }
}

pub fn universal_terms(assembly: &ClbfAssembly, sys: &AffineSdeSystem, input_box: &InputBox, x: &DVector<f64>) -> UniversalTerms {
    let sample = assembly.sample(x);
    universal_terms_from(assembly, sys, input_box, x, &sample)
}

pub(crate) fn universal_terms_from(
    assembly: &ClbfAssembly,
    sys: &AffineSdeSystem,
    input_box: &InputBox,
    x: &DVector<f64>,
    sample: &FieldSample,
) -> UniversalTerms {
    let split = generator_split(sample, sys, x);
    let mean = input_box.mean();
    let half = input_box.half_range();
    let shifted = assembly.shifted_value(sample.value);
    let a = split.at(&mean) + assembly.rho() * shifted;
    let b = split.gain.component_mul(&half);
    let nb2 = b.norm_squared();
    let input = if nb2 == 0.0 {
        mean
    } else {
        let scale = (a + (a * a + nb2 * nb2).sqrt()) / (nb2 * (1.0 + (1.0 + nb2).sqrt()));
        mean - half.component_mul(&b) * scale
    };
    UniversalTerms {
        a,
        b,
        split,
        shifted_value: shifted,
        input,
    }
}

/// Bounded universal-formula feedback for box-constrained inputs.
pub fn universal_formula(assembly: &ClbfAssembly, sys: &AffineSdeSystem, input_box: &InputBox, x: &DVector<f64>) -> DVector<f64> {
    universal_terms(assembly, sys, input_box, x).input
}
