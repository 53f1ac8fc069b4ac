//! Probabilistic dynamic movement primitives.
//!
//! A DMP trajectory obeys `τ²ÿ = α(β(g − y) − τẏ) + x·φᵀw`. With the phase
//! following the same time constant (`x = exp(−α_x t/τ)`), every trajectory is
//! a time-scaled copy `y(t) = Y(t/τ)` of the canonical (`τ = 1`) solution, so the
//! position/velocity basis tables are built once in canonical time and shared by
//! every trajectory and every `τ`.

mod basis;
mod generate;

mod op;
mod oracle;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use basis::{
    assemble_basis_tables, build_forcing_basis, build_phase, compute_pq, BasisRow, BasisTables,
    ForcingBasis, PqTables,
};
pub use generate::{boundary_coefficients, generate_trajectory, Trajectory1d, TrajectoryNd};

pub use op::{ProDmpOp, ProDmpRequest};
pub use oracle::{euler_oracle, oracle_suite, random_case, OracleCase, OracleReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProDmpConfig {
    /// Spring constant α.
    pub alpha: f64,
    /// Damping β; must equal α/4 (critical damping).
    pub beta: f64,
    /// Number of forcing basis functions.
    pub n_weights: usize,
    /// Phase decay rate in canonical time.
    pub alpha_x: f64,
    pub tau_range: (f64, f64),
    /// Canonical execution length at `τ = 1`.
    pub duration: f64,
    /// Table rows per unit of canonical time.
    pub table_resolution: usize,
    /// Quadrature points per table step.
    pub quad_factor: usize,
    /// Adjacent forcing bases cross at this fraction of their peak.
    pub basis_overlap: f64,
    /// Multiplier applied by models to raw forcing weights; the goal entry is unscaled.
    pub weight_scale: f64,
}

impl Default for ProDmpConfig {
    fn default() -> Self {
        ProDmpConfig {
            alpha: 25.0,
            beta: 6.25,
            n_weights: 30,
            alpha_x: 3.0,
            tau_range: (0.3, 3.0),
            duration: 1.0,
            table_resolution: 1000,
            quad_factor: 10,
            basis_overlap: 0.55,
            weight_scale: 25.0 * 6.25,
        }
    }
}

impl ProDmpConfig {
    pub fn with_weights(n_weights: usize) -> Self {
        ProDmpConfig {
            n_weights,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !(self.beta > 0.0) {
            return Err(Error::config("alpha and beta must be positive"));
        }
        if (self.beta - self.alpha / 4.0).abs() > 1e-12 * self.alpha {
            return Err(Error::config(format!(
                "beta must equal alpha/4 for the critically damped closed forms (alpha {}, beta {})",
                self.alpha, self.beta
            )));
        }
        if self.n_weights < 2 {
            return Err(Error::config(format!(
                "need at least 2 forcing basis functions, got {}",
                self.n_weights
            )));
        }
        let (lo, hi) = self.tau_range;
        if !(lo > 0.0 && lo < hi) {
            return Err(Error::config(format!("invalid tau range [{lo}, {hi}]")));
        }
        if self.quad_factor < 10 {
            return Err(Error::config(format!(
                "quadrature must be at least 10x the table resolution, got {}x",
                self.quad_factor
            )));
        }
        if self.table_resolution == 0 || !(self.duration > 0.0) || !(self.alpha_x > 0.0) {
            return Err(Error::config(
                "table resolution, duration and alpha_x must be positive",
            ));
        }
        if !(self.basis_overlap > 0.0 && self.basis_overlap < 1.0) {
            return Err(Error::config("basis overlap must lie in (0, 1)"));
        }
        Ok(())
    }

    /// `α/2`, the decay rate of the complementary solutions in canonical time.
    pub fn half_alpha(&self) -> f64 {
        0.5 * self.alpha
    }

    /// Canonical time covered by the tables: the full execution at the smallest `τ`.
    pub fn canonical_horizon(&self) -> f64 {
        self.duration / self.tau_range.0
    }

    /// Uniform canonical grid from 0 through [`Self::canonical_horizon`].
    pub fn table_times(&self) -> Vec<f64> {
        let steps = (self.canonical_horizon() * self.table_resolution as f64).ceil() as usize;
        let h = 1.0 / self.table_resolution as f64;
        (0..=steps).map(|i| i as f64 * h).collect()
    }

    /// Width (standard deviation, canonical time) shared by all forcing bases.
    pub fn basis_width(&self) -> f64 {
        let spacing = self.duration / (self.n_weights - 1) as f64;
        let half = 0.5 * spacing;
        half / (2.0 * (1.0 / self.basis_overlap).ln()).sqrt()
    }

    pub fn basis_centers(&self) -> Vec<f64> {
        let spacing = self.duration / (self.n_weights - 1) as f64;
        (0..self.n_weights).map(|i| i as f64 * spacing).collect()
    }

    pub fn check_tau(&self, tau: f64) -> Result<()> {
        let (lo, hi) = self.tau_range;
        if !(tau >= lo && tau <= hi) {
            return Err(Error::contract(format!("tau {tau} outside [{lo}, {hi}]")));
        }
        Ok(())
    }
}

/// Position/velocity condition of a trajectory at canonical time `t_b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    pub t_b: f64,
    pub y_b: Vec<f64>,
    pub y_dot_b: Vec<f64>,
}

impl InitialCondition {
    pub fn dim(&self) -> usize {
        self.y_b.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalMode {
    Absolute,
    /// Goal given relative to the start position: `g_abs = g_rel + y_b`.
    RelativeToStart,
}

/// Forcing weights followed by the goal, for one spatial dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub w_g: Vec<f64>,
    pub goal_mode: GoalMode,
}

impl WeightVector {
    pub fn new(w_g: Vec<f64>, goal_mode: GoalMode) -> Self {
        WeightVector { w_g, goal_mode }
    }

    pub fn zeros(n_weights: usize) -> Self {
        WeightVector {
            w_g: vec![0.0; n_weights + 1],
            goal_mode: GoalMode::Absolute,
        }
    }

    pub fn goal(&self) -> f64 {
        *self.w_g.last().expect("non-empty weights")
    }
}

/// Unit-initial-condition solutions of the homogeneous canonical ODE and their
/// derivatives: `h1(0)=1, h1'(0)=0`, `h2(0)=0, h2'(0)=1`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Propagator {
    pub h1: f64,
    pub h1_dot: f64,
    pub h2: f64,
    pub h2_dot: f64,
}

impl Propagator {
    pub fn at(a: f64, u: f64) -> Self {
        let e = (-a * u).exp();
        Propagator {
            h1: e * (1.0 + a * u),
            h1_dot: -a * a * u * e,
            h2: u * e,
            h2_dot: e * (1.0 - a * u),
        }
    }
}
