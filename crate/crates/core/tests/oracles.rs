//! Structured operations checked against dense materializations.

mod common;

use common::{rel_diff, small_systems};
use mskp::problems::convdiff_2d;
use mskp::solvers::{gmres_solve, mskp_solve, pgmres_mskp, MskpPreconditioner, Preconditioner, SolverConfig, SplitParams};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn kronecker_and_q_products_match_dense() {
    let err = common::kron_matvec_error();
    assert!(err <= 1e-12, "{err:e}");
}

#[test]
fn single_mskp_step_matches_dense_splitting() {
    let err = common::mskp_step_error();
    assert!(err <= 1e-8, "{err:e}");
}

#[test]
fn mskp_with_zero_omega_follows_two_step_form() {
    let err = common::two_step_error();
    assert!(err <= 1e-10, "{err:e}");
}

#[test]
fn preconditioner_with_inner_gmres_matches_dense_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let sys = convdiff_2d(4).unwrap().assemble(6, 1.0 / 6.0).unwrap();
    let p = SplitParams::new(1.3, 0.8, 0.5).unwrap();
    let pre = MskpPreconditioner::new(&sys, p, SolverConfig::default().inner).unwrap();
    let r = common::random_vec(sys.dim(), &mut rng);
    let mut z = vec![0.0; r.len()];
    pre.precondition(&r, &mut z);
    let expect = common::dense_p(&sys, p).lu().solve(&DVector::from_vec(r)).unwrap();
    assert!(rel_diff(&z, expect.as_slice()) <= 1e-8);
}

#[test]
fn krylov_solvers_match_dense_solve() {
    for sys in small_systems() {
        let cfg = SolverConfig {
            outer_tolerance: 1e-12,
            ..SolverConfig::default()
        };
        let exact = sys.dense_q().unwrap().lu().solve(&DVector::from_vec(sys.rhs.clone())).unwrap();
        let (x, rep) = gmres_solve(&sys, &sys.rhs, &cfg).unwrap();
        assert!(rep.converged);
        assert!(rel_diff(&x, exact.as_slice()) <= 1e-8);
        let (y, rep) = pgmres_mskp(&sys, SplitParams::new(1.0, 0.5, 0.3).unwrap(), &cfg.with_direct_inner()).unwrap();
        assert!(rep.converged);
        assert!(rel_diff(&y, exact.as_slice()) <= 1e-8);
    }
}

#[test]
fn mskp_converges_to_dense_solution() {
    for sys in small_systems() {
        let cfg = SolverConfig {
            outer_tolerance: 1e-12,
            ..SolverConfig::default()
        }
        .with_direct_inner();
        let (x, rep) = mskp_solve(&sys, SplitParams::new(1.0, 0.5, 0.2).unwrap(), &cfg).unwrap();
        assert!(rep.converged);
        let exact = sys.dense_q().unwrap().lu().solve(&DVector::from_vec(sys.rhs.clone())).unwrap();
        assert!(rel_diff(&x, exact.as_slice()) <= 1e-9);
    }
}
