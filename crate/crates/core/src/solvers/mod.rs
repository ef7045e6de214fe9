//! Stationary splitting iterations and Krylov solvers for `Q u = b`.

mod gmres;
mod mskp;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

pub use gmres::{gmres_solve, gmres_solve_preconditioned, GmresConfig};
pub use mskp::{
    gkps_solve, gkps_two_step_solve, kps_solve, mskp_solve, pgmres_mskp, MskpPreconditioner,
};

/// Splitting parameters `(α, β, ω)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitParams {
    pub alpha: f64,
    pub beta: f64,
    pub omega: f64,
}

impl SplitParams {
    pub fn new(alpha: f64, beta: f64, omega: f64) -> Result<Self> {
        let p = SplitParams { alpha, beta, omega };
        p.validate()?;
        Ok(p)
    }

    pub fn kps(alpha: f64) -> Result<Self> {
        Self::new(alpha, alpha, 0.0)
    }

    pub fn gkps(alpha: f64, beta: f64) -> Result<Self> {
        Self::new(alpha, beta, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha > 0.0
            && self.beta > 0.0
            && (0.0..2.0).contains(&self.omega)
            && self.alpha.is_finite()
            && self.beta.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InadmissibleParams {
                alpha: self.alpha,
                beta: self.beta,
                omega: self.omega,
            })
        }
    }

    /// `(α+β)(2-ω)/2`, the factor in front of the residual.
    pub fn residual_scale(&self) -> f64 {
        (self.alpha + self.beta) * (2.0 - self.omega) / 2.0
    }
}

/// How the per-block spatial systems `(τK + βM) v = r` are solved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InnerSolver {
    /// Unpreconditioned GMRES to a relative tolerance.
    Gmres { tolerance: f64, max_iterations: usize },
    /// Banded LU factorization computed once per parameter set.
    Direct,
}

impl Default for InnerSolver {
    fn default() -> Self {
        InnerSolver::Gmres {
            tolerance: 1e-10,
            max_iterations: 2000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    pub outer_tolerance: f64,
    pub max_outer: usize,
    pub inner: InnerSolver,
    /// Restart length for GMRES; `None` runs full GMRES.
    pub restart: Option<usize>,
    /// Initial guess; zero when absent.
    pub initial_guess: Option<Vec<f64>>,
    /// Residual monitored by preconditioned GMRES.
    pub residual_norm: ResidualNorm,
}

/// Which residual preconditioned GMRES drives below the tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualNorm {
    /// `‖P⁻¹(b - Q u)‖ / ‖P⁻¹(b - Q u₀)‖`, the residual of the system GMRES works on.
    #[default]
    Preconditioned,
    /// `‖b - Q u‖ / ‖b - Q u₀‖`.
    True,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            outer_tolerance: 1e-6,
            max_outer: 2000,
            inner: InnerSolver::default(),
            restart: None,
            initial_guess: None,
            residual_norm: ResidualNorm::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.outer_tolerance > 0.0 && self.outer_tolerance < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "outer tolerance {} must lie in (0, 1)",
                self.outer_tolerance
            )));
        }
        if self.max_outer == 0 {
            return Err(Error::InvalidArgument("max_outer must be positive".into()));
        }
        if let InnerSolver::Gmres {
            tolerance,
            max_iterations,
        } = self.inner
        {
            if !(tolerance > 0.0 && tolerance < 1.0) || max_iterations == 0 {
                return Err(Error::InvalidArgument("invalid inner GMRES settings".into()));
            }
        }
        if self.restart == Some(0) {
            return Err(Error::InvalidArgument("restart length must be positive".into()));
        }
        Ok(())
    }

    pub fn with_direct_inner(mut self) -> Self {
        self.inner = InnerSolver::Direct;
        self
    }

    pub fn with_max_outer(mut self, max_outer: usize) -> Self {
        self.max_outer = max_outer;
        self
    }

    pub(crate) fn start(&self, dim: usize) -> Result<Vec<f64>> {
        match &self.initial_guess {
            Some(u0) => {
                crate::error::check_len("initial guess", dim, u0.len())?;
                Ok(u0.clone())
            }
            None => Ok(vec![0.0; dim]),
        }
    }
}

/// Outcome of one solver run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// `‖b - Q u⁽ᵏ⁾‖ / ‖b - Q u⁽⁰⁾‖` for `k = 0..=iterations`.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub inner_iterations_total: usize,
}

impl SolveReport {
    pub fn final_residual(&self) -> f64 {
        *self.residual_history.last().unwrap_or(&f64::NAN)
    }
}

/// A square linear operator applied into a caller-owned buffer.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl LinearOperator for SparseMatrix {
    fn dim(&self) -> usize {
        self.rows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec_into(x, y);
    }
}

impl LinearOperator for crate::bvm::AssembledSystem {
    fn dim(&self) -> usize {
        crate::bvm::AssembledSystem::dim(self)
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut work = vec![0.0; x.len()];
        self.apply_q_into(x, y, &mut work);
    }
}

/// Wraps a closure as a [`LinearOperator`].
pub struct FnOperator<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> FnOperator<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnOperator { dim, f }
    }
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> LinearOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (self.f)(x, y)
    }
}

/// Applies `z ≈ P⁻¹ r`, returning the number of inner iterations spent.
pub trait Preconditioner: Sync {
    fn precondition(&self, r: &[f64], z: &mut [f64]) -> usize;
}

pub(crate) fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}
