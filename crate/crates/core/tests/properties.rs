//! Randomized invariants of the Kronecker algebra, the discretization,
//! the generators, the solvers and the multitask GP.

mod common;

use common::{random_model, rel_diff};
use mskp::bvm::{gam5_matrices, AssembledSystem};
use mskp::kron::{dense_kron, KroneckerOperator};
use mskp::mtgpr::kernel::{kernel_eval, library, KernelHyper, KernelSpec};
use mskp::problems::{convdiff_2d, diffusion_2d, sylvester_problem};
use mskp::solvers::{gmres_solve, mskp_solve, SolverConfig, SplitParams};
use mskp::spectral::eigenvalues;
use mskp::sparse::SparseMatrix;
use nalgebra::{Complex, DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dense(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

fn sparse(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> SparseMatrix {
    let d = DMatrix::from_fn(rows, cols, |_, _| if rng.gen_bool(0.4) { rng.gen_range(-2.0..2.0) } else { 0.0 });
    SparseMatrix::from_dense(&d).unwrap()
}

fn vector(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mixed_product_rule(seed in any::<u64>(), p in 1usize..5, q in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, c, d) = (dense(p, p, &mut rng), dense(q, q, &mut rng), dense(p, p, &mut rng), dense(q, q, &mut rng));
        let x = vector(p * q, &mut rng);
        let sa = SparseMatrix::from_dense(&a).unwrap();
        let sb = SparseMatrix::from_dense(&b).unwrap();
        let sc = SparseMatrix::from_dense(&c).unwrap();
        let sd = SparseMatrix::from_dense(&d).unwrap();
        let inner = KroneckerOperator::new(&sc, &sd).unwrap().matvec(&x).unwrap();
        let lhs = KroneckerOperator::new(&sa, &sb).unwrap().matvec(&inner).unwrap();
        let rhs = dense_kron(&(&a * &c), &(&b * &d)) * DVector::from_vec(x);
        prop_assert!(rel_diff(&lhs, rhs.as_slice()) <= 1e-12);
    }

    #[test]
    fn kronecker_matvec_matches_dense(seed in any::<u64>(), p in 1usize..21, q in 1usize..21) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (l, r) = (sparse(p, p, &mut rng), sparse(q, q, &mut rng));
        let x = vector(p * q, &mut rng);
        let y = KroneckerOperator::new(&l, &r).unwrap().matvec(&x).unwrap();
        let d = dense_kron(&l.to_dense(), &r.to_dense()) * DVector::from_vec(x);
        prop_assert!(rel_diff(&y, d.as_slice()) <= 1e-12);
    }

    #[test]
    fn sparse_matvec_is_linear(seed in any::<u64>(), rows in 1usize..30, cols in 1usize..30, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let op = sparse(rows, cols, &mut rng);
        let (x, y) = (vector(cols, &mut rng), vector(cols, &mut rng));
        let combo: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let lhs = op.matvec(&combo).unwrap();
        let (ox, oy) = (op.matvec(&x).unwrap(), op.matvec(&y).unwrap());
        let rhs: Vec<f64> = ox.iter().zip(&oy).map(|(u, v)| a * u + b * v).collect();
        prop_assert!(rel_diff(&lhs, &rhs) <= 1e-13);
    }

    #[test]
    fn relaxed_modulus_inequality(re in -3.0f64..3.0, im in -3.0f64..3.0, omega in 0.0f64..1.999) {
        let q = Complex::new(re, im);
        let lhs = ((q * (2.0 - omega) + omega) * 0.5).norm();
        let rhs = 0.5 * ((2.0 - omega) * q.norm() + omega);
        prop_assert!(lhs <= rhs + 1e-14);
    }

    #[test]
    fn kronecker_spectrum_is_pairwise_products(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (dense(3, 3, &mut rng), dense(3, 3, &mut rng));
        let (ea, eb) = (eigenvalues(a.clone()).unwrap(), eigenvalues(b.clone()).unwrap());
        let mut remaining = eigenvalues(dense_kron(&a, &b)).unwrap();
        for x in &ea {
            for y in &eb {
                let want = x * y;
                let (k, gap) = remaining
                    .iter()
                    .enumerate()
                    .map(|(k, z)| (k, (z - want).norm()))
                    .fold((0, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best });
                prop_assert!(gap <= 1e-6, "product {want} unmatched, nearest gap {gap:e}");
                remaining.swap_remove(k);
            }
        }
    }

    #[test]
    fn gram_matrices_are_symmetric_psd(seed in any::<u64>(), n in 2usize..25) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hyper = KernelHyper {
            offset: rng.gen_range(-1.0..1.0),
            lengthscale: rng.gen_range(0.05..2.0),
            period: rng.gen_range(0.1..2.0),
        };
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let kinds = library::full();
        let weights: Vec<f64> = kinds.iter().map(|_| rng.gen_range(0.0..2.0)).collect();
        let mut combo = DMatrix::zeros(n, n);
        for (&kind, &c) in kinds.iter().zip(&weights) {
            let spec = KernelSpec::new(kind, 1.0, hyper).unwrap();
            let g = DMatrix::from_fn(n, n, |i, j| kernel_eval(&spec, x[i], x[j]));
            prop_assert!((&g - g.transpose()).amax() <= 1e-14 * g.amax().max(1.0));
            let min = g.clone().symmetric_eigenvalues().min();
            prop_assert!(min >= -1e-10 * g.amax().max(1.0), "{} min eigenvalue {min:e}", kind.name());
            combo += g * c;
        }
        let min = combo.clone().symmetric_eigenvalues().min();
        prop_assert!(min >= -1e-10 * combo.amax().max(1.0), "combination min eigenvalue {min:e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn covariance_eigenvalues_exceed_smallest_noise(seed in any::<u64>(), tasks in 1usize..4, points in 2usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lib = if rng.gen_bool(0.5) { library::pde() } else { library::sylvester() };
        let model = random_model(&mut rng, lib, tasks, points);
        let min_noise = model.noise.iter().copied().fold(f64::INFINITY, f64::min);
        let min = model.covariance().symmetric_eigenvalues().min();
        prop_assert!(min >= min_noise - 1e-9, "{min} < {min_noise}");
    }

    #[test]
    fn posterior_variance_below_prior(seed in any::<u64>(), tasks in 1usize..4, points in 2usize..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lib = if rng.gen_bool(0.5) { library::pde() } else { library::sylvester() };
        let model = random_model(&mut rng, lib, tasks, points);
        let kt = model.task_covariance();
        let xs: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..100.0)).collect();
        for pred in model.predict_many(&xs).unwrap() {
            let xn = (pred.x - model.input_shift) / model.input_scale;
            for l in 0..tasks {
                let prior: f64 = model
                    .library
                    .iter()
                    .zip(&model.weights[l])
                    .map(|(&k, &c)| kernel_eval(&KernelSpec::new(k, 1.0, model.hyper).unwrap(), xn, xn) * c)
                    .sum::<f64>()
                    * kt[(l, l)];
                prop_assert!(pred.variance[l] <= prior + 1e-9 * prior.max(1.0), "x={} task {l}: {} > {prior}", pred.x, pred.variance[l]);
            }
        }
    }

    #[test]
    fn gam5_reproduces_constant_and_linear_solutions(m in 5usize..24, c in -5.0f64..5.0) {
        let tau = 1.0 / m as f64;
        let zero = SparseMatrix::zeros(1, 1);
        let one = SparseMatrix::identity(1);
        let flat = AssembledSystem::assemble(gam5_matrices(m, tau).unwrap(), one.clone(), zero.clone(), &vec![vec![0.0]; m + 1], &[c]).unwrap();
        let u = flat.dense_q().unwrap().lu().solve(&DVector::from_vec(flat.rhs.clone())).unwrap();
        prop_assert!(u.iter().all(|v| (v - c).abs() <= 1e-12 * c.abs().max(1.0)));
        let ramp = AssembledSystem::assemble(gam5_matrices(m, tau).unwrap(), one, zero, &vec![vec![1.0]; m + 1], &[0.0]).unwrap();
        let u = ramp.dense_q().unwrap().lu().solve(&DVector::from_vec(ramp.rhs.clone())).unwrap();
        for (i, v) in u.iter().enumerate() {
            prop_assert!((v - i as f64 * tau).abs() <= 1e-12, "node {i}: {v}");
        }
    }

    #[test]
    fn diffusion_stiffness_is_spd(n in 2usize..9, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = diffusion_2d(n).unwrap().stiffness;
        prop_assert!(k.is_symmetric(0.0));
        let x = vector(n * n, &mut rng);
        let kx = k.matvec(&x).unwrap();
        prop_assert!(x.iter().zip(&kx).map(|(a, b)| a * b).sum::<f64>() > 0.0);
    }

    #[test]
    fn generation_is_deterministic(n0 in 2usize..5, s in 1usize..4, seed in any::<u64>()) {
        let (a, b) = (sylvester_problem(n0, s, seed).unwrap(), sylvester_problem(n0, s, seed).unwrap());
        prop_assert_eq!(&a.e, &b.e);
        prop_assert_eq!(&a.f, &b.f);
        prop_assert_eq!(&a.a_op, &b.a_op);
        let (c, d) = (convdiff_2d(n0 + 1).unwrap(), convdiff_2d(n0 + 1).unwrap());
        prop_assert_eq!(&c.stiffness, &d.stiffness);
    }

    #[test]
    fn solvers_leave_the_system_untouched(alpha in 0.2f64..4.0, beta in 0.2f64..4.0, omega in 0.0f64..1.5) {
        let sys = diffusion_2d(3).unwrap().assemble(6, 1.0 / 6.0).unwrap();
        let before = sys.clone();
        let cfg = SolverConfig::default().with_direct_inner().with_max_outer(5);
        mskp_solve(&sys, SplitParams::new(alpha, beta, omega).unwrap(), &cfg).unwrap();
        gmres_solve(&sys, &sys.rhs, &cfg).unwrap();
        prop_assert_eq!(&sys.rhs, &before.rhs);
        prop_assert_eq!(&sys.stiffness, &before.stiffness);
        prop_assert_eq!(&sys.mass, &before.mass);
        prop_assert_eq!(&sys.time.a, &before.time.a);
        prop_assert_eq!(&sys.time.b, &before.time.b);
    }
}
