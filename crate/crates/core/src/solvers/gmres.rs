//! GMRES with modified Gram–Schmidt Arnoldi and Givens rotations.
//!
//! Left preconditioning solves `P⁻¹ Q u = P⁻¹ b`. By default convergence is
//! judged on the residual of that system, `‖P⁻¹(b - Q u)‖ / ‖P⁻¹(b - Q u₀)‖`,
//! read off the Givens recurrence. [`ResidualNorm::True`] instead forms the
//! iterate every step and monitors `‖b - Q u‖ / ‖b - Q u₀‖`.

use crate::error::{check_len, Result};

use super::{dot, norm2, LinearOperator, Preconditioner, ResidualNorm, SolveReport, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub restart: Option<usize>,
    pub residual_norm: ResidualNorm,
}

impl From<&SolverConfig> for GmresConfig {
    fn from(c: &SolverConfig) -> Self {
        GmresConfig {
            tolerance: c.outer_tolerance,
            max_iterations: c.max_outer,
            restart: c.restart,
            residual_norm: c.residual_norm,
        }
    }
}

/// Plain GMRES on `op u = b`.
pub fn gmres_solve<A: LinearOperator + ?Sized>(op: &A, b: &[f64], cfg: &SolverConfig) -> Result<(Vec<f64>, SolveReport)> {
    cfg.validate()?;
    check_len("gmres right-hand side", op.dim(), b.len())?;
    let x0 = cfg.start(b.len())?;
    Ok(gmres_core(op, None, b, x0, &cfg.into()))
}

/// Left-preconditioned GMRES.
pub fn gmres_solve_preconditioned<A, P>(op: &A, precond: &P, b: &[f64], cfg: &SolverConfig) -> Result<(Vec<f64>, SolveReport)>
where
    A: LinearOperator + ?Sized,
    P: Preconditioner,
{
    cfg.validate()?;
    check_len("gmres right-hand side", op.dim(), b.len())?;
    let x0 = cfg.start(b.len())?;
    Ok(gmres_core(op, Some(precond as &dyn Preconditioner), b, x0, &cfg.into()))
}

struct Givens {
    c: f64,
    s: f64,
}

impl Givens {
    fn new(a: f64, b: f64) -> Self {
        if b == 0.0 {
            return Givens { c: 1.0, s: 0.0 };
        }
        let r = a.hypot(b);
        Givens { c: a / r, s: b / r }
    }

    fn apply(&self, a: &mut f64, b: &mut f64) {
        let t = self.c * *a + self.s * *b;
        *b = -self.s * *a + self.c * *b;
        *a = t;
    }
}

pub(crate) fn gmres_core<A: LinearOperator + ?Sized>(
    op: &A,
    precond: Option<&dyn Preconditioner>,
    b: &[f64],
    mut x: Vec<f64>,
    cfg: &GmresConfig,
) -> (Vec<f64>, SolveReport) {
    let n = b.len();
    let mut inner_total = 0usize;
    let mut ax = vec![0.0; n];

    let true_residual = |x: &[f64], ax: &mut Vec<f64>| -> Vec<f64> {
        op.apply(x, ax);
        b.iter().zip(ax.iter()).map(|(bi, yi)| bi - yi).collect()
    };

    let mut r = true_residual(&x, &mut ax);
    let r0_norm = norm2(&r);
    if r0_norm == 0.0 {
        return (
            x,
            SolveReport {
                iterations: 0,
                residual_history: vec![0.0],
                converged: true,
                inner_iterations_total: 0,
            },
        );
    }
    let monitor_preconditioned = precond.is_some() && cfg.residual_norm == ResidualNorm::Preconditioned;
    let mut history = vec![1.0];
    let mut iterations = 0usize;
    let restart = cfg.restart.unwrap_or(usize::MAX).min(n).max(1);
    let mut z = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    // denominator of the monitored residual
    let mut scale = r0_norm;

    loop {
        // z = P⁻¹ r
        match precond {
            Some(p) => inner_total += p.precondition(&r, &mut z),
            None => z.copy_from_slice(&r),
        }
        let beta = norm2(&z);
        if beta == 0.0 {
            break;
        }
        if monitor_preconditioned && iterations == 0 {
            scale = beta;
        }
        let mut basis: Vec<Vec<f64>> = vec![z.iter().map(|v| v / beta).collect()];
        // rotated Hessenberg columns, upper triangular part only
        let mut hcols: Vec<Vec<f64>> = Vec::new();
        let mut rotations: Vec<Givens> = Vec::new();
        let mut g = vec![beta];
        let mut done = false;

        for j in 0..restart {
            if iterations >= cfg.max_iterations {
                break;
            }
            op.apply(&basis[j], &mut tmp);
            match precond {
                Some(p) => inner_total += p.precondition(&tmp, &mut w),
                None => w.copy_from_slice(&tmp),
            }
            let mut h = vec![0.0; j + 2];
            for (i, v) in basis.iter().enumerate() {
                let hij = dot(&w, v);
                h[i] = hij;
                w.iter_mut().zip(v).for_each(|(wk, vk)| *wk -= hij * vk);
            }
            let hnext = norm2(&w);
            h[j + 1] = hnext;
            for (i, rot) in rotations.iter().enumerate() {
                let (lo, hi) = h.split_at_mut(i + 1);
                rot.apply(&mut lo[i], &mut hi[0]);
            }
            let rot = Givens::new(h[j], h[j + 1]);
            {
                let (lo, hi) = h.split_at_mut(j + 1);
                rot.apply(&mut lo[j], &mut hi[0]);
            }
            let mut gj = g[j];
            let mut gnext = 0.0;
            rot.apply(&mut gj, &mut gnext);
            g[j] = gj;
            g.push(gnext);
            rotations.push(rot);
            h.truncate(j + 1);
            hcols.push(h);
            iterations += 1;

            let breakdown = hnext <= 1e-14 * beta;
            let res = if precond.is_none() || monitor_preconditioned {
                gnext.abs() / scale
            } else {
                let xk = assemble_iterate(&x, &basis, &hcols, &g);
                norm2(&true_residual(&xk, &mut ax)) / r0_norm
            };
            history.push(res);
            if res <= cfg.tolerance || breakdown {
                done = true;
                break;
            }
            basis.push(w.iter().map(|v| v / hnext).collect());
        }

        if hcols.is_empty() {
            break;
        }
        x = assemble_iterate(&x, &basis, &hcols, &g);
        if done || iterations >= cfg.max_iterations {
            break;
        }
        r = true_residual(&x, &mut ax);
    }

    // Givens estimates drift from the recomputed residual in finite
    // precision; the final entry is always recomputed.
    r = true_residual(&x, &mut ax);
    let final_res = match precond {
        Some(p) if monitor_preconditioned => {
            inner_total += p.precondition(&r, &mut z);
            norm2(&z) / scale
        }
        _ => norm2(&r) / r0_norm,
    };
    if history.len() > 1 {
        *history.last_mut().unwrap() = final_res;
    }
    let converged = final_res <= cfg.tolerance;
    (
        x,
        SolveReport {
            iterations,
            residual_history: history,
            converged,
            inner_iterations_total: inner_total,
        },
    )
}

/// `x₀ + V y` with `y` from back substitution on the rotated Hessenberg.
fn assemble_iterate(x0: &[f64], basis: &[Vec<f64>], hcols: &[Vec<f64>], g: &[f64]) -> Vec<f64> {
    let k = hcols.len();
    let mut y = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = g[i];
        for j in i + 1..k {
            s -= hcols[j][i] * y[j];
        }
        y[i] = s / hcols[i][i];
    }
    let mut x = x0.to_vec();
    for (yj, v) in y.iter().zip(basis) {
        x.iter_mut().zip(v).for_each(|(xi, vi)| *xi += yj * vi);
    }
    x
}

/// GMRES for an inner solve: returns the iterate and the iteration count.
pub(crate) fn inner_gmres<A: LinearOperator + ?Sized>(op: &A, b: &[f64], tolerance: f64, max_iterations: usize) -> (Vec<f64>, usize) {
    let cfg = GmresConfig {
        tolerance,
        max_iterations,
        restart: None,
        residual_norm: ResidualNorm::True,
    };
    let (x, rep) = gmres_core(op, None, b, vec![0.0; b.len()], &cfg);
    (x, rep.iterations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::FnOperator;
    use crate::sparse::SparseMatrix;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_converges_in_one_step() {
        let op = SparseMatrix::identity(10);
        let b: Vec<f64> = (0..10).map(|i| i as f64 + 1.0).collect();
        let (x, rep) = gmres_solve(&op, &b, &SolverConfig::default()).unwrap();
        assert_eq!(rep.iterations, 1);
        assert!(rep.converged);
        assert!(x.iter().zip(&b).all(|(a, b)| (a - b).abs() < 1e-14));
    }

    #[test]
    fn dense_5x5_solved_within_five_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = DMatrix::from_fn(5, 5, |i, j| rng.gen_range(-1.0..1.0) + if i == j { 3.0 } else { 0.0 });
        let b: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let exact = a.clone().lu().solve(&DVector::from_column_slice(&b)).unwrap();
        let ad = a.clone();
        let op = FnOperator::new(5, move |x: &[f64], y: &mut [f64]| {
            let r = &ad * DVector::from_column_slice(x);
            y.copy_from_slice(r.as_slice());
        });
        let mut cfg = SolverConfig::default();
        cfg.outer_tolerance = 1e-12;
        let (x, rep) = gmres_solve(&op, &b, &cfg).unwrap();
        assert!(rep.iterations <= 5);
        assert!(rep.final_residual() <= 1e-12);
        assert!((DVector::from_column_slice(&x) - exact).norm() < 1e-10);
    }

    #[test]
    fn exact_initial_guess_takes_zero_steps() {
        let op = SparseMatrix::tridiag(6, -1.0, 3.0, -1.0);
        let u: Vec<f64> = (0..6).map(|i| (i as f64).sin()).collect();
        let b = op.matvec(&u).unwrap();
        let mut cfg = SolverConfig::default();
        cfg.initial_guess = Some(u.clone());
        let (x, rep) = gmres_solve(&op, &b, &cfg).unwrap();
        assert_eq!(rep.iterations, 0);
        assert!(rep.converged);
        assert_eq!(x, u);
    }

    #[test]
    fn restarted_gmres_still_converges() {
        let op = SparseMatrix::tridiag(40, -1.0, 2.5, -1.2);
        let b = vec![1.0; 40];
        let mut cfg = SolverConfig::default();
        cfg.restart = Some(5);
        let (_, rep) = gmres_solve(&op, &b, &cfg).unwrap();
        assert!(rep.converged);
    }

    #[test]
    fn residual_history_non_increasing() {
        let op = SparseMatrix::tridiag(50, -1.3, 2.0, -0.7);
        let b: Vec<f64> = (0..50).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let (_, rep) = gmres_solve(&op, &b, &SolverConfig::default()).unwrap();
        assert!(rep.converged);
        for w in rep.residual_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-10), "{:?}", w);
        }
    }

    #[test]
    fn max_iterations_reports_not_converged() {
        let op = SparseMatrix::tridiag(60, -1.0, 2.0, -1.0);
        let b = vec![1.0; 60];
        let cfg = SolverConfig::default().with_max_outer(3);
        let (_, rep) = gmres_solve(&op, &b, &cfg).unwrap();
        assert_eq!(rep.iterations, 3);
        assert!(!rep.converged);
    }
}
