//! Scenario files: every parameter of a closed-loop experiment in one TOML
//! document.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::barrier::BarrierSpec;
use crate::clbf::{ClbfAssembly, InputBox};
use crate::clf::{validate_clf_params, ClfParams, ClfViolation};
use crate::error::{Error, Result};
use crate::mpc::{MpcConfig, SolverConfig};
use crate::sde::{unicycle_system, AffineSdeSystem, UnicycleParams};

/// The bundled unicycle case study.
pub const CASE_STUDY_TOML: &str = include_str!("../scenarios/table1.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClbfSection {
    pub c1: f64,
    /// Upper quadratic bound of `V`; `p1` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<f64>,
    pub k_lambda: Vec<f64>,
    pub rho: f64,
}

/// MPC settings with diagonal weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcSection {
    pub horizon: usize,
    pub period: f64,
    pub q_diag: Vec<f64>,
    pub r_diag: Vec<f64>,
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
    pub eps_dec: f64,
    #[serde(default = "default_origin_radius")]
    pub origin_radius: f64,
    #[serde(default)]
    pub solver: SolverConfig,
}

fn default_origin_radius() -> f64 {
    1e-6
}

impl MpcSection {
    pub fn to_config(&self) -> MpcConfig {
        MpcConfig {
            horizon: self.horizon,
            period: self.period,
            q: DMatrix::from_diagonal(&DVector::from_column_slice(&self.q_diag)),
            r: DMatrix::from_diagonal(&DVector::from_column_slice(&self.r_diag)),
            input_box: InputBox {
                u_min: self.u_min.clone(),
                u_max: self.u_max.clone(),
            },
            eps_dec: self.eps_dec,
            origin_radius: self.origin_radius,
            solver: self.solver,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub initial_state: [f64; 3],
    /// Simulated time.
    pub horizon: f64,
    /// Euler-Maruyama steps per MPC period.
    pub substeps: usize,
    pub seed: u64,
    pub runs: usize,
    pub convergence_radius: f64,
    pub unicycle: UnicycleParams,
    pub clf: ClfParams,
    #[serde(default)]
    pub barriers: Vec<BarrierSpec>,
    pub clbf: ClbfSection,
    pub mpc: MpcSection,
}

/// Objects built from a validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub system: AffineSdeSystem,
    pub assembly: ClbfAssembly,
    pub mpc: MpcConfig,
    pub initial_state: DVector<f64>,
}

impl ScenarioConfig {
    pub fn case_study() -> Self {
        Self::from_toml(CASE_STUDY_TOML).expect("bundled scenario parses")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Number of Euler-Maruyama steps covering the horizon.
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt()).round() as usize
    }

    pub fn dt(&self) -> f64 {
        self.mpc.period / self.substeps as f64
    }

    /// Failed CLF design inequalities for the configured noise.
    pub fn clf_violations(&self) -> Vec<ClfViolation> {
        validate_clf_params(&self.clf, &self.unicycle)
    }

    pub fn build(&self) -> Result<Scenario> {
        if self.substeps == 0 || !(self.horizon > 0.0) || self.runs == 0 || !(self.convergence_radius > 0.0) {
            return Err(Error::InvalidParameter(
                "need substeps >= 1, horizon > 0, runs >= 1, convergence_radius > 0".into(),
            ));
        }
        if let Some(v) = self.clf_violations().first() {
            return Err(Error::InvalidParameter(format!("CLF parameters: {v}")));
        }
        if self.initial_state.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState);
        }
        self.unicycle.validate()?;
        let system = unicycle_system(self.unicycle);
        let assembly = ClbfAssembly::new(
            self.clf,
            &self.barriers,
            self.clbf.c1,
            self.clbf.c2,
            &self.clbf.k_lambda,
            self.clbf.rho,
        )?;
        let mpc = self.mpc.to_config();
        mpc.validate(&system)?;
        let initial_state = DVector::from_column_slice(&self.initial_state);
        if assembly.in_unsafe(&initial_state) {
            return Err(Error::InvalidParameter("initial state lies in an unsafe set".into()));
        }
        Ok(Scenario {
            system,
            assembly,
            mpc,
            initial_state,
        })
    }
}
