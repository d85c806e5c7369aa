//! Hyper-reduced local-global complementary dynamics and the full-space
//! reference solver used to validate it.
//!
//! The objective minimized each step is
//! `E(z) = 1/2 x^T L x + sum_c m_c (-mu_c tr(R_c^T F_c) + 3/2 mu_c + lambda_c/4 (tr(R_c^T F_c) - 3)^2)`
//! `     + 1/(2h^2) |B (z - z_hist) + J (p - p_hist)|_M^2 - f_ext . z`
//! with `x = x0 + J p + B z` and `R_c` the polar rotation of the cluster
//! deformation gradient. The elastic part is half of the usual
//! `mu |F - R|^2 + lambda/2 tr^2(R^T F - I)` density, which is exactly the
//! scaling under which the system matrix is `B^T L B + B^T M B / h^2`.

mod polar;
mod reduced;
mod reference;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Execution;

pub use polar::{polar_rotation, polar_rotation_checked};
pub use reduced::{precompute_reduced_operators, project_full, History, ReducedOperators};
pub use reference::{FullSpaceProblem, FullState, MAX_REFERENCE_DOFS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElasticEnergy {
    #[default]
    Arap,
    Corot,
}

impl std::str::FromStr for ElasticEnergy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "arap" => Ok(ElasticEnergy::Arap),
            "corot" => Ok(ElasticEnergy::Corot),
            other => Err(Error::Config(format!("unknown energy {other:?} (expected arap or corot)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Timestep in seconds.
    pub h: f64,
    pub energy: ElasticEnergy,
    pub max_iters: usize,
    /// Convergence when `max |dz| < tol * bbox_diagonal`.
    pub tol: f64,
    pub ls_beta: f64,
    pub ls_c: f64,
    pub ls_max: usize,
    /// Start each step from the previous `z` instead of zero.
    pub warm_start_previous: bool,
    pub execution: Execution,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            h: 1.0 / 60.0,
            energy: ElasticEnergy::Arap,
            max_iters: 30,
            tol: 1e-6,
            ls_beta: 0.5,
            ls_c: 1e-4,
            ls_max: 20,
            warm_start_previous: false,
            execution: Execution::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::Config(format!("timestep must be positive, got {}", self.h)));
        }
        if !(self.ls_beta > 0.0 && self.ls_beta < 1.0) {
            return Err(Error::Config(format!("ls_beta must lie in (0, 1), got {}", self.ls_beta)));
        }
        if !(self.ls_c > 0.0 && self.ls_c < 1.0) {
            return Err(Error::Config(format!("ls_c must lie in (0, 1), got {}", self.ls_c)));
        }
        if self.tol < 0.0 || !self.tol.is_finite() {
            return Err(Error::Config(format!("tolerance must be non-negative, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Reduced simulation state: current and previous `z` and rig parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub z: DVector<f64>,
    pub z_prev: DVector<f64>,
    pub p: DVector<f64>,
    pub p_prev: DVector<f64>,
    /// Reduced external force (`12m`), constant until changed.
    pub f_ext: DVector<f64>,
    /// Number of accepted steps.
    pub step: u64,
}

impl SimState {
    pub fn at_rest(dim: usize, p_dim: usize) -> Self {
        SimState {
            z: DVector::zeros(dim),
            z_prev: DVector::zeros(dim),
            p: DVector::zeros(p_dim),
            p_prev: DVector::zeros(p_dim),
            f_ext: DVector::zeros(dim),
            step: 0,
        }
    }

    /// Zeroes `z`, histories and rig parameters; the external force is kept.
    pub fn reset(&mut self) {
        self.z.fill(0.0);
        self.z_prev.fill(0.0);
        self.p.fill(0.0);
        self.p_prev.fill(0.0);
    }

    pub fn z_hist(&self) -> DVector<f64> {
        &self.z * 2.0 - &self.z_prev
    }

    pub fn p_hist(&self) -> DVector<f64> {
        &self.p * 2.0 - &self.p_prev
    }

    pub fn is_finite(&self) -> bool {
        self.z.iter().chain(self.z_prev.iter()).all(|v| v.is_finite())
    }
}

/// Per-step diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub iterations: usize,
    pub converged: bool,
    /// Energy of the accepted iterate.
    pub energy: f64,
    /// Energy at the warm start followed by the energy after each iteration.
    pub energies: Vec<f64>,
    /// Iterations where the line search found no decrease.
    pub line_search_failures: usize,
}
