//! Controlled affine SDEs `dx = (f(x) + g(x) u) dt + sigma(x) dW` with diagonal
//! diffusion, the Ito generator of a C^2 scalar field along such a system, and
//! Euler-Maruyama integration.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

type VectorMap = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type MatrixMap = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Value, gradient and Hessian of a scalar field at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

impl FieldSample {
    pub fn zeros(dim: usize, value: f64) -> Self {
        Self {
            value,
            gradient: DVector::zeros(dim),
            hessian: DMatrix::zeros(dim, dim),
        }
    }

    /// `self += weight * other`
    pub fn add_scaled(&mut self, weight: f64, other: &FieldSample) {
        self.value += weight * other.value;
        self.gradient.axpy(weight, &other.gradient, 1.0);
        self.hessian += &other.hessian * weight;
    }
}

/// A twice continuously differentiable scalar function of the state with
/// analytic first and second derivatives.
pub trait ScalarField: Send + Sync {
    fn dim(&self) -> usize;

    fn sample(&self, x: &DVector<f64>) -> FieldSample;

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.sample(x).value
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.sample(x).gradient
    }

    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.sample(x).hessian
    }
}

/// `dx = (f(x) + g(x) u) dt + diag(sigma(x)) dW`.
#[derive(Clone)]
pub struct AffineSdeSystem {
    state_dim: usize,
    input_dim: usize,
    drift: VectorMap,
    input_matrix: MatrixMap,
    diffusion: VectorMap,
}

impl fmt::Debug for AffineSdeSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AffineSdeSystem")
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .finish_non_exhaustive()
    }
}

impl AffineSdeSystem {
    /// `diffusion` returns the diagonal of sigma(x).
    pub fn new<F, G, S>(state_dim: usize, input_dim: usize, drift: F, input_matrix: G, diffusion: S) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        G: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        S: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            state_dim,
            input_dim,
            drift: Arc::new(drift),
            input_matrix: Arc::new(input_matrix),
            diffusion: Arc::new(diffusion),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.drift)(x)
    }

    pub fn input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.input_matrix)(x)
    }

    pub fn diffusion_diagonal(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.diffusion)(x)
    }

    pub fn diffusion(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.diffusion_diagonal(x))
    }

    /// Deterministic vector field `f(x) + g(x) u`.
    pub fn velocity(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut v = self.drift(x);
        v.gemv(1.0, &self.input_matrix(x), u, 1.0);
        v
    }

    pub fn check_state(&self, x: &DVector<f64>) -> Result<()> {
        check_dim("state", self.state_dim, x.len())
    }

    pub fn check_input(&self, u: &DVector<f64>) -> Result<()> {
        check_dim("input", self.input_dim, u.len())
    }
}

fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { what, expected, got })
    }
}

/// Noise intensities and goal radius of the wheeled-robot model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnicycleParams {
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma3: f64,
    pub r_g: f64,
}

impl Default for UnicycleParams {
    fn default() -> Self {
        Self {
            sigma1: 0.3,
            sigma2: 0.3,
            sigma3: 0.6,
            r_g: 5.0,
        }
    }
}

impl UnicycleParams {
    pub fn validate(&self) -> Result<()> {
        let sigmas = [self.sigma1, self.sigma2, self.sigma3];
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "noise intensities must be finite and non-negative, got {sigmas:?}"
            )));
        }
        if !(self.r_g.is_finite() && self.r_g > 0.0) {
            return Err(Error::InvalidParameter(format!("goal radius must be positive, got {}", self.r_g)));
        }
        Ok(())
    }

    /// Position noise multiplier: 1 outside the goal disc, `|p| / r_g` inside.
    pub fn goal_scale(&self, x: f64, y: f64) -> f64 {
        let r2 = x * x + y * y;
        if r2 <= self.r_g * self.r_g {
            r2.sqrt() / self.r_g
        } else {
            1.0
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            sigma1: self.sigma1 * factor,
            sigma2: self.sigma2 * factor,
            sigma3: self.sigma3 * factor,
            r_g: self.r_g,
        }
    }
}

/// Kinematic wheeled robot: state `(x, y, theta)`, input `(v, omega)`, no drift.
pub fn unicycle_system(params: UnicycleParams) -> AffineSdeSystem {
    AffineSdeSystem::new(
        3,
        2,
        |_x| DVector::zeros(3),
        |x| {
            let (s, c) = x[2].sin_cos();
            DMatrix::from_row_slice(3, 2, &[c, 0.0, s, 0.0, 0.0, 1.0])
        },
        move |x| {
            let scale = params.goal_scale(x[0], x[1]);
            DVector::from_vec(vec![scale * params.sigma1, scale * params.sigma2, params.sigma3])
        },
    )
}

/// Generator of a field split into its input-free part
/// `L_f W + 1/2 tr(sigma^T H sigma)` and the input gain `L_g W`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSplit {
    pub drift: f64,
    pub gain: DVector<f64>,
}

impl GeneratorSplit {
    pub fn at(&self, u: &DVector<f64>) -> f64 {
        self.drift + self.gain.dot(u)
    }
}

pub fn generator_split(sample: &FieldSample, sys: &AffineSdeSystem, x: &DVector<f64>) -> GeneratorSplit {
    let f = sys.drift(x);
    let g = sys.input_matrix(x);
    let sigma = sys.diffusion_diagonal(x);
    let trace: f64 = sigma
        .iter()
        .enumerate()
        .map(|(i, s)| s * s * sample.hessian[(i, i)])
        .sum();
    GeneratorSplit {
        drift: sample.gradient.dot(&f) + 0.5 * trace,
        gain: g.tr_mul(&sample.gradient),
    }
}

/// Ito generator `grad W . (f + g u) + 1/2 tr(sigma^T H sigma)`.
pub fn generator(field: &dyn ScalarField, sys: &AffineSdeSystem, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
    sys.check_state(x)?;
    sys.check_input(u)?;
    check_dim("field", sys.state_dim(), field.dim())?;
    let sample = field.sample(x);
    Ok(generator_split(&sample, sys, x).at(u))
}

/// One Euler-Maruyama step; `noise` holds `state_dim` standard normal draws.
/// Angles are left unwrapped.
pub fn euler_maruyama_step(
    sys: &AffineSdeSystem,
    x: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
    noise: &DVector<f64>,
) -> Result<DVector<f64>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {dt}")));
    }
    sys.check_state(x)?;
    sys.check_input(u)?;
    check_dim("noise", sys.state_dim(), noise.len())?;
    let mut next = x + sys.velocity(x, u) * dt;
    let sigma = sys.diffusion_diagonal(x);
    let sqrt_dt = dt.sqrt();
    for i in 0..next.len() {
        next[i] += sigma[i] * sqrt_dt * noise[i];
    }
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(Error::NonFiniteState)
    }
}

/// Seeded source of Brownian increments, one standard normal per state
/// dimension per step.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn draw(&mut self, dim: usize) -> DVector<f64> {
        DVector::from_iterator(dim, (0..dim).map(|_| StandardNormal.sample(&mut self.rng)))
    }
}
