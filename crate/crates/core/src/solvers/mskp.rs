//! Modified skew-symmetric Kronecker product splitting.
//!
//! The iteration is `u ← u + P⁻¹(b - Q u)` with
//! `P = 2/((α+β)(2-ω)) (A + αB) ⊗ (τK + βM)`. Applying `P⁻¹` costs one
//! spatial solve per time block and one banded time solve across blocks.

use rayon::prelude::*;

use crate::banded::BandedLu;
use crate::bvm::AssembledSystem;
use crate::error::{check_len, Error, Result};
use crate::sparse::SparseMatrix;

use super::gmres::{gmres_solve_preconditioned, inner_gmres};
use super::{norm2, InnerSolver, Preconditioner, SolveReport, SolverConfig, SplitParams};

/// Relative residual beyond which a stationary iteration is abandoned.
const DIVERGENCE_LIMIT: f64 = 1e8;

enum SpatialSolve {
    Direct(BandedLu),
    Gmres {
        matrix: SparseMatrix,
        tolerance: f64,
        max_iterations: usize,
    },
}

impl SpatialSolve {
    fn new(matrix: SparseMatrix, inner: InnerSolver) -> Result<Self> {
        Ok(match inner {
            InnerSolver::Direct => SpatialSolve::Direct(BandedLu::factor(&matrix)?),
            InnerSolver::Gmres {
                tolerance,
                max_iterations,
            } => SpatialSolve::Gmres {
                matrix,
                tolerance,
                max_iterations,
            },
        })
    }

    /// Solves every block of `z` in place; returns inner iterations.
    fn solve_blocks(&self, z: &mut [f64], block: usize) -> usize {
        match self {
            SpatialSolve::Direct(lu) => {
                z.par_chunks_mut(block).for_each(|c| lu.solve_blocks_in_place(c, 1));
                0
            }
            SpatialSolve::Gmres {
                matrix,
                tolerance,
                max_iterations,
            } => z
                .par_chunks_mut(block)
                .map(|c| {
                    let (x, its) = inner_gmres(matrix, c, *tolerance, *max_iterations);
                    c.copy_from_slice(&x);
                    its
                })
                .sum(),
        }
    }
}

/// `P⁻¹` for fixed `(α, β, ω)`, factorized once.
pub struct MskpPreconditioner {
    params: SplitParams,
    space_dim: usize,
    nodes: usize,
    time: BandedLu,
    space: SpatialSolve,
}

impl MskpPreconditioner {
    pub fn new(sys: &AssembledSystem, params: SplitParams, inner: InnerSolver) -> Result<Self> {
        params.validate()?;
        let t = &sys.time;
        let time_matrix = t.a.linear_combination(1.0, &t.b, params.alpha)?;
        let space_matrix = sys.stiffness.linear_combination(sys.tau(), &sys.mass, params.beta)?;
        Ok(MskpPreconditioner {
            params,
            space_dim: sys.space_dim(),
            nodes: t.nodes(),
            time: BandedLu::factor(&time_matrix)?,
            space: SpatialSolve::new(space_matrix, inner)?,
        })
    }

    pub fn params(&self) -> SplitParams {
        self.params
    }

    pub fn dim(&self) -> usize {
        self.space_dim * self.nodes
    }
}

impl Preconditioner for MskpPreconditioner {
    fn precondition(&self, r: &[f64], z: &mut [f64]) -> usize {
        let s = self.params.residual_scale();
        z.iter_mut().zip(r).for_each(|(zi, ri)| *zi = s * ri);
        let its = self.space.solve_blocks(z, self.space_dim);
        self.time.solve_blocks_in_place(z, self.space_dim);
        its
    }
}

/// Stationary MSKP iteration.
pub fn mskp_solve(sys: &AssembledSystem, params: SplitParams, cfg: &SolverConfig) -> Result<(Vec<f64>, SolveReport)> {
    cfg.validate()?;
    let precond = MskpPreconditioner::new(sys, params, cfg.inner)?;
    let u0 = cfg.start(sys.dim())?;
    Ok(stationary(sys, cfg, u0, |r, z| precond.precondition(r, z)))
}

/// MSKP with `ω = 0`.
pub fn gkps_solve(sys: &AssembledSystem, alpha: f64, beta: f64, cfg: &SolverConfig) -> Result<(Vec<f64>, SolveReport)> {
    mskp_solve(sys, SplitParams::gkps(alpha, beta)?, cfg)
}

/// MSKP with `ω = 0` and `α = β`.
pub fn kps_solve(sys: &AssembledSystem, alpha: f64, cfg: &SolverConfig) -> Result<(Vec<f64>, SolveReport)> {
    mskp_solve(sys, SplitParams::kps(alpha)?, cfg)
}

/// GMRES left-preconditioned by MSKP.
pub fn pgmres_mskp(sys: &AssembledSystem, params: SplitParams, cfg: &SolverConfig) -> Result<(Vec<f64>, SolveReport)> {
    cfg.validate()?;
    let precond = MskpPreconditioner::new(sys, params, cfg.inner)?;
    gmres_solve_preconditioned(sys, &precond, &sys.rhs, cfg)
}

/// GKPS written as two half steps on `H + S`, `H = B⁻¹A ⊗ I`,
/// `S = I ⊗ τM⁻¹K`:
///
/// ```text
/// (αI + H) u½    = (αI - S) u + b̃
/// (βI + S) u⁺    = (βI - H) u½ + b̃
/// ```
///
/// Both halves are multiplied through by `B ⊗ M`, so `B` must be
/// nonsingular. Spatial solves are direct.
pub fn gkps_two_step_solve(sys: &AssembledSystem, alpha: f64, beta: f64, cfg: &SolverConfig) -> Result<(Vec<f64>, SolveReport)> {
    cfg.validate()?;
    SplitParams::gkps(alpha, beta)?;
    let t = &sys.time;
    let n = sys.space_dim();
    let tau = sys.tau();
    let b_lu = BandedLu::factor(&t.b).map_err(|_| Error::Singular("two-step form needs a nonsingular B"))?;
    let first_time = BandedLu::factor(&t.a.linear_combination(1.0, &t.b, alpha)?)?;
    let mass_lu = BandedLu::factor(&sys.mass)?;
    let second_space = BandedLu::factor(&sys.stiffness.linear_combination(tau, &sys.mass, beta)?)?;

    let kron = |l: &SparseMatrix, r: &SparseMatrix, s: f64, x: &[f64], y: &mut [f64]| {
        let op = crate::kron::KroneckerOperator::new(l, r).expect("square factors");
        let mut work = vec![0.0; x.len()];
        op.apply_scaled_add(s, x, y, &mut work);
    };

    let u0 = cfg.start(sys.dim())?;
    Ok(stationary_steps(sys, cfg, u0, |u| {
        // (αB + A) ⊗ M  u½ = α(B⊗M)u - τ(B⊗K)u + b
        let mut rhs1 = sys.rhs.clone();
        kron(&t.b, &sys.mass, alpha, u, &mut rhs1);
        kron(&t.b, &sys.stiffness, -tau, u, &mut rhs1);
        mass_lu_blocks(&mass_lu, &mut rhs1, n);
        first_time.solve_blocks_in_place(&mut rhs1, n);
        let half = rhs1;
        // B ⊗ (τK + βM) u⁺ = β(B⊗M)u½ - (A⊗M)u½ + b
        let mut rhs2 = sys.rhs.clone();
        kron(&t.b, &sys.mass, beta, &half, &mut rhs2);
        kron(&t.a, &sys.mass, -1.0, &half, &mut rhs2);
        b_lu.solve_blocks_in_place(&mut rhs2, n);
        rhs2.par_chunks_mut(n).for_each(|c| second_space.solve_blocks_in_place(c, 1));
        rhs2
    }))
}

fn mass_lu_blocks(lu: &BandedLu, x: &mut [f64], n: usize) {
    x.par_chunks_mut(n).for_each(|c| lu.solve_blocks_in_place(c, 1));
}

/// Residual-correction loop shared by the stationary solvers.
fn stationary<F>(sys: &AssembledSystem, cfg: &SolverConfig, u0: Vec<f64>, precond: F) -> (Vec<f64>, SolveReport)
where
    F: Fn(&[f64], &mut [f64]) -> usize,
{
    let dim = sys.dim();
    let mut z = vec![0.0; dim];
    let mut inner = 0usize;
    let mut res_buf = vec![0.0; dim];
    let mut work = vec![0.0; dim];
    let step = |u: &[f64], r: &[f64], z: &mut Vec<f64>, inner: &mut usize| -> Vec<f64> {
        *inner += precond(r, z);
        u.iter().zip(z.iter()).map(|(a, b)| a + b).collect()
    };
    let mut u = u0;
    residual_into(sys, &u, &mut res_buf, &mut work);
    let r0 = norm2(&res_buf);
    if r0 == 0.0 {
        return (u, converged_at_start());
    }
    let mut history = vec![1.0];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_outer {
        u = step(&u, &res_buf, &mut z, &mut inner);
        iterations += 1;
        residual_into(sys, &u, &mut res_buf, &mut work);
        let res = norm2(&res_buf) / r0;
        history.push(res);
        if res <= cfg.outer_tolerance {
            converged = true;
            break;
        }
        if !res.is_finite() || res > DIVERGENCE_LIMIT {
            break;
        }
    }
    (
        u,
        SolveReport {
            iterations,
            residual_history: history,
            converged,
            inner_iterations_total: inner,
        },
    )
}

/// Like [`stationary`] but with an arbitrary update `u ↦ u⁺`.
fn stationary_steps<F>(sys: &AssembledSystem, cfg: &SolverConfig, u0: Vec<f64>, update: F) -> (Vec<f64>, SolveReport)
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let dim = sys.dim();
    let mut res_buf = vec![0.0; dim];
    let mut work = vec![0.0; dim];
    let mut u = u0;
    residual_into(sys, &u, &mut res_buf, &mut work);
    let r0 = norm2(&res_buf);
    if r0 == 0.0 {
        return (u, converged_at_start());
    }
    let mut history = vec![1.0];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_outer {
        u = update(&u);
        iterations += 1;
        residual_into(sys, &u, &mut res_buf, &mut work);
        let res = norm2(&res_buf) / r0;
        history.push(res);
        if res <= cfg.outer_tolerance {
            converged = true;
            break;
        }
        if !res.is_finite() || res > DIVERGENCE_LIMIT {
            break;
        }
    }
    (
        u,
        SolveReport {
            iterations,
            residual_history: history,
            converged,
            inner_iterations_total: 0,
        },
    )
}

fn converged_at_start() -> SolveReport {
    SolveReport {
        iterations: 0,
        residual_history: vec![0.0],
        converged: true,
        inner_iterations_total: 0,
    }
}

fn residual_into(sys: &AssembledSystem, u: &[f64], r: &mut [f64], work: &mut [f64]) {
    sys.apply_q_into(u, r, work);
    r.iter_mut().zip(&sys.rhs).for_each(|(ri, bi)| *ri = bi - *ri);
}

/// Checks that `u` has the system dimension.
#[allow(dead_code)]
pub(crate) fn check_state(sys: &AssembledSystem, u: &[f64]) -> Result<()> {
    check_len("space-time state", sys.dim(), u.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bvm::gam5_matrices;
    use nalgebra::DVector;

    fn small_system() -> AssembledSystem {
        let n = 4;
        let h = 1.0 / (n as f64 + 1.0);
        let t1 = SparseMatrix::tridiag(n, -1.0, 2.0, -1.0).scale(1.0 / (h * h));
        let k = t1.kron(&SparseMatrix::identity(n)).add(&SparseMatrix::identity(n).kron(&t1)).unwrap();
        let m = SparseMatrix::identity(n * n);
        let time = gam5_matrices(8, 1.0 / 8.0).unwrap();
        let f: Vec<Vec<f64>> = (0..9).map(|i| vec![(i as f64 * 0.3).sin() + 1.0; n * n]).collect();
        let psi: Vec<f64> = (0..n * n).map(|i| (i as f64 * 0.1).cos()).collect();
        AssembledSystem::assemble(time, m, k, &f, &psi).unwrap()
    }

    #[test]
    fn preconditioner_matches_dense_inverse() {
        let sys = small_system();
        let p = SplitParams::new(1.5, 0.7, 0.4).unwrap();
        let pre = MskpPreconditioner::new(&sys, p, InnerSolver::Direct).unwrap();
        let t = &sys.time;
        let l = t.a.linear_combination(1.0, &t.b, p.alpha).unwrap().to_dense();
        let r = sys.stiffness.linear_combination(sys.tau(), &sys.mass, p.beta).unwrap().to_dense();
        let dense_p = l.kronecker(&r) / p.residual_scale();
        let x: Vec<f64> = (0..sys.dim()).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        let mut z = vec![0.0; sys.dim()];
        pre.precondition(&x, &mut z);
        let back = &dense_p * DVector::from_column_slice(&z);
        assert!((back - DVector::from_column_slice(&x)).norm() < 1e-9);
    }

    #[test]
    fn direct_and_gmres_inner_agree() {
        let sys = small_system();
        let p = SplitParams::new(2.0, 1.0, 0.5).unwrap();
        let cfg = SolverConfig::default();
        let (u1, r1) = mskp_solve(&sys, p, &cfg.clone().with_direct_inner()).unwrap();
        let (u2, r2) = mskp_solve(&sys, p, &cfg).unwrap();
        assert!(r1.converged && r2.converged);
        assert_eq!(r1.iterations, r2.iterations);
        assert!(r2.inner_iterations_total > 0);
        let d: f64 = u1.iter().zip(&u2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(d < 1e-6);
    }

    #[test]
    fn pgmres_converges_faster_than_stationary() {
        let sys = small_system();
        let p = SplitParams::new(2.0, 1.0, 0.0).unwrap();
        let cfg = SolverConfig::default().with_direct_inner();
        let (_, s) = mskp_solve(&sys, p, &cfg).unwrap();
        let (_, g) = pgmres_mskp(&sys, p, &cfg).unwrap();
        assert!(g.converged && s.converged);
        assert!(g.iterations <= s.iterations);
    }

    #[test]
    fn two_step_requires_nonsingular_b() {
        let sys = small_system();
        let cfg = SolverConfig::default();
        assert!(matches!(gkps_two_step_solve(&sys, 1.0, 1.0, &cfg), Err(Error::Singular(_))));
    }

    #[test]
    fn inadmissible_parameters_rejected() {
        let sys = small_system();
        let cfg = SolverConfig::default();
        assert!(gkps_solve(&sys, -1.0, 1.0, &cfg).is_err());
        assert!(mskp_solve(&sys, SplitParams { alpha: 1.0, beta: 1.0, omega: 2.5 }, &cfg).is_err());
    }
}
