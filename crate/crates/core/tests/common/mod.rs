//! Measurement routines shared by the integration suites and the
//! acceptance runner. Each returns the worst observed error or a
//! violation count so callers pick their own thresholds.

#![allow(dead_code)]

use mskp::bvm::AssembledSystem;
use mskp::kron::{dense_kron, KroneckerOperator};
use mskp::mtgpr::kernel::{kernel_eval, library, KernelHyper, KernelKind, KernelSpec};
use mskp::mtgpr::{packed_gradient, packed_lml, train, MtgpModel, TrainOptions, JITTER};
use mskp::problems::{convdiff_2d, diffusion_2d, sylvester_problem};
use mskp::solvers::{gkps_two_step_solve, mskp_solve, SolverConfig, SplitParams};
use mskp::sparse::SparseMatrix;
use mskp::spectral::{hypotheses, iteration_matrix_radius, preconditioned_spectrum, Hypotheses};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// `‖a − b‖ / max(‖b‖, 1)`.
pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1.0);
    num / den
}

fn random_sparse(n: usize, rng: &mut ChaCha8Rng) -> SparseMatrix {
    let mut t = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if rng.gen_bool(0.5) {
                t.push((i, j, rng.gen_range(-2.0..2.0)));
            }
        }
    }
    SparseMatrix::from_triplets(n, n, &t).unwrap()
}

/// Small systems of every problem family with `n = 4`, `m = 6`.
pub fn small_systems() -> Vec<AssembledSystem> {
    vec![
        diffusion_2d(4).unwrap().assemble(6, 1.0 / 6.0).unwrap(),
        convdiff_2d(4).unwrap().assemble(6, 1.0 / 6.0).unwrap(),
        sylvester_problem(2, 2, 3).unwrap().to_space_time().unwrap().assemble(6, 0.1).unwrap(),
    ]
}

/// Dense `P(α,β,ω)` built from its definition.
pub fn dense_p(sys: &AssembledSystem, p: SplitParams) -> DMatrix<f64> {
    let left = sys.time.a.to_dense() + sys.time.b.to_dense() * p.alpha;
    let right = sys.stiffness.to_dense() * sys.tau() + sys.mass.to_dense() * p.beta;
    dense_kron(&left, &right) / p.residual_scale()
}

/// Worst absolute error of structured Kronecker and `Q` products
/// against their dense materializations.
pub fn kron_matvec_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for (p, q) in [(3, 4), (7, 2), (5, 5), (1, 6), (6, 9)] {
        let l = random_sparse(p, &mut rng);
        let r = random_sparse(q, &mut rng);
        let op = KroneckerOperator::new(&l, &r).unwrap();
        let x = random_vec(p * q, &mut rng);
        let y = op.matvec(&x).unwrap();
        let dense = dense_kron(&l.to_dense(), &r.to_dense()) * DVector::from_vec(x);
        worst = worst.max(y.iter().zip(dense.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    for sys in small_systems() {
        let x = random_vec(sys.dim(), &mut rng);
        let y = sys.apply_q(&x).unwrap();
        let dense = sys.dense_q().unwrap() * DVector::from_vec(x);
        let scale = dense.amax().max(1.0);
        worst = worst.max(y.iter().zip(dense.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale);
    }
    worst
}

/// Worst relative gap between one MSKP sweep and `u + P⁻¹(b − Qu)`.
pub fn mskp_step_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for sys in small_systems() {
        for &(a, b, w) in &[(1.0, 1.0, 0.0), (2.5, 0.4, 0.7), (0.3, 3.0, 1.5)] {
            let p = SplitParams::new(a, b, w).unwrap();
            let u0 = random_vec(sys.dim(), &mut rng);
            let mut cfg = SolverConfig::default().with_direct_inner().with_max_outer(1);
            cfg.initial_guess = Some(u0.clone());
            let (u1, rep) = mskp_solve(&sys, p, &cfg).unwrap();
            assert_eq!(rep.iterations, 1);
            let q = sys.dense_q().unwrap();
            let r = DVector::from_vec(sys.rhs.clone()) - &q * DVector::from_vec(u0.clone());
            let z = dense_p(&sys, p).lu().solve(&r).unwrap();
            let expect: Vec<f64> = u0.iter().zip(z.iter()).map(|(u, d)| u + d).collect();
            worst = worst.max(rel_diff(&u1, &expect));
        }
    }
    worst
}

/// Worst relative gap between MSKP at `ω = 0` and the two-step GKPS
/// form, compared after each of the first six sweeps. Runs on reduced
/// systems, where `B` is invertible.
pub fn two_step_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let reduced = [
        diffusion_2d(4).unwrap().assemble(6, 1.0 / 6.0).unwrap().without_initial_node().unwrap(),
        convdiff_2d(3).unwrap().assemble(8, 1.0 / 8.0).unwrap().without_initial_node().unwrap(),
    ];
    let mut worst: f64 = 0.0;
    for sys in &reduced {
        for &(a, b) in &[(1.0, 1.0), (2.0, 0.5), (0.7, 1.9)] {
            let u0 = random_vec(sys.dim(), &mut rng);
            for k in 1..=6 {
                let mut cfg = SolverConfig::default().with_direct_inner().with_max_outer(k);
                cfg.outer_tolerance = 1e-300;
                cfg.initial_guess = Some(u0.clone());
                let (u, _) = mskp_solve(sys, SplitParams::gkps(a, b).unwrap(), &cfg).unwrap();
                let (v, _) = gkps_two_step_solve(sys, a, b, &cfg).unwrap();
                worst = worst.max(rel_diff(&u, &v));
            }
        }
    }
    worst
}

pub fn random_model(rng: &mut ChaCha8Rng, lib: Vec<KernelKind>, tasks: usize, points: usize) -> MtgpModel {
    let inputs: Vec<f64> = (0..points).map(|i| 10.0 + 4.0 * i as f64 + rng.gen_range(0.0..2.0)).collect();
    let targets = (0..tasks).map(|_| (0..points).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    let weights = (0..tasks).map(|_| (0..lib.len()).map(|_| rng.gen_range(0.05..2.0)).collect()).collect();
    let factor = (0..tasks)
        .map(|i| {
            (0..tasks)
                .map(|j| match j.cmp(&i) {
                    std::cmp::Ordering::Less => rng.gen_range(-0.8..0.8),
                    std::cmp::Ordering::Equal => rng.gen_range(0.4..1.5),
                    std::cmp::Ordering::Greater => 0.0,
                })
                .collect()
        })
        .collect();
    let hyper = KernelHyper {
        offset: rng.gen_range(-0.5..0.5),
        lengthscale: rng.gen_range(0.15..1.0),
        period: rng.gen_range(0.1..0.6),
    };
    let noise = (0..tasks).map(|_| rng.gen_range(0.01..0.3)).collect();
    MtgpModel::new((0..tasks).map(|l| format!("t{l}")).collect(), inputs, targets, lib, weights, hyper, factor, noise).unwrap()
}

/// Worst relative error `‖g − g_fd‖ / ‖g‖` of the analytic likelihood
/// gradient against central differences over `trials` random models.
pub fn gradient_error(trials: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let libs = [library::pde(), library::sylvester(), library::full()];
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let lib = libs[trial % libs.len()].clone();
        let tasks = 1 + trial % 3;
        let points = rng.gen_range(4..9);
        let model = random_model(&mut rng, lib, tasks, points);
        let (theta, _, grad) = packed_gradient(&model).unwrap();
        let fd: Vec<f64> = (0..theta.len())
            .map(|k| {
                let h = 1e-5 * (1.0 + theta[k].abs());
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[k] += h;
                tm[k] -= h;
                (packed_lml(&model, &tp).unwrap() - packed_lml(&model, &tm).unwrap()) / (2.0 * h)
            })
            .collect();
        let diff: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = grad.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        worst = worst.max(diff / norm);
    }
    worst
}

/// Worst relative gap between a one-task model and a plain GP written
/// out from the kernel definitions (likelihood, mean and variance).
pub fn single_task_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for lib in [library::pde(), library::sylvester(), library::full()] {
        let model = random_model(&mut rng, lib.clone(), 1, 7);
        let kt = model.task_covariance()[(0, 0)];
        let hyper = model.hyper;
        let z = |x: f64| (x - model.input_shift) / model.input_scale;
        let k = |a: f64, b: f64| -> f64 {
            lib.iter()
                .zip(&model.weights[0])
                .map(|(&kind, &c)| kernel_eval(&KernelSpec::new(kind, kt * c, hyper).unwrap(), z(a), z(b)))
                .sum()
        };
        let x = &model.inputs;
        let n = x.len();
        let mut cov = DMatrix::from_fn(n, n, |i, j| k(x[i], x[j]));
        for i in 0..n {
            cov[(i, i)] += model.noise[0];
        }
        let jitter = JITTER * cov.trace() / n as f64;
        for i in 0..n {
            cov[(i, i)] += jitter;
        }
        let y = DVector::from_vec(model.targets[0].clone());
        let lu = cov.lu();
        let weights = lu.solve(&y).unwrap();
        let lml = -0.5 * y.dot(&weights) - 0.5 * lu.determinant().ln() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        let got = model.log_marginal_likelihood().unwrap();
        worst = worst.max((got - lml).abs() / lml.abs().max(1.0));
        for xs in [x[0] - 3.0, x[2] + 1.3, x[n - 1] + 5.0] {
            let kstar = DVector::from_fn(n, |i, _| k(xs, x[i]));
            let mean = kstar.dot(&weights);
            let var = (k(xs, xs) - kstar.dot(&lu.solve(&kstar).unwrap())).max(0.0);
            let (pm, pv) = model.predict(xs, 0).unwrap();
            worst = worst.max((pm - mean).abs() / mean.abs().max(1.0));
            worst = worst.max((pv - var).abs() / var.abs().max(1.0));
        }
    }
    worst
}

/// Worst absolute gap between the posterior mean at the training inputs
/// and the targets, for a three-task model with negligible noise.
pub fn interpolation_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for lib in [library::pde(), library::sylvester()] {
        let mut model = random_model(&mut rng, lib, 3, 8);
        model.noise = vec![1e-12; 3];
        model.hyper.lengthscale = 0.15;
        for (l, t) in model.targets.iter_mut().enumerate() {
            for (i, v) in t.iter_mut().enumerate() {
                *v = (0.4 * i as f64 + l as f64).sin();
            }
        }
        let preds = model.predict_many(&model.inputs.clone()).unwrap();
        for (i, p) in preds.iter().enumerate() {
            for l in 0..3 {
                worst = worst.max((p.mean[l] - model.targets[l][i]).abs());
            }
        }
    }
    worst
}

/// Restarts whose optimized likelihood is below their starting value,
/// and the total number of restarts run.
pub fn restart_violations() -> (usize, usize) {
    let inputs: Vec<f64> = (0..12).map(|i| 10.0 + 10.0 * i as f64).collect();
    let targets: Vec<Vec<f64>> = vec![
        inputs.iter().map(|x| 4.0 / x.sqrt()).collect(),
        inputs.iter().map(|x| 1.5 / x.powf(0.3)).collect(),
        inputs.iter().map(|x| 0.1 + 0.02 * (x / 15.0).sin()).collect(),
    ];
    let names: Vec<String> = ["alpha", "beta", "omega"].iter().map(|s| s.to_string()).collect();
    let (mut bad, mut total) = (0, 0);
    for (lib, seed) in [(library::pde(), 3), (library::sylvester(), 4), (library::full(), 5)] {
        let opts = TrainOptions { restarts: 6, seed, ..Default::default() };
        let (_, outcomes) = train(names.clone(), &inputs, &targets, &lib, &opts).unwrap();
        total += outcomes.len();
        bad += outcomes.iter().filter(|o| !(o.final_lml >= o.initial_lml)).count();
    }
    (bad, total)
}

/// Reduced diffusion and convection-diffusion systems small enough for
/// dense eigensolves.
pub fn theory_systems() -> Vec<(&'static str, AssembledSystem)> {
    vec![
        ("diffusion n=3 m=12", diffusion_2d(3).unwrap().assemble(12, 1.0 / 12.0).unwrap().without_initial_node().unwrap()),
        ("convdiff n=4 m=8", convdiff_2d(4).unwrap().assemble(8, 1.0 / 8.0).unwrap().without_initial_node().unwrap()),
    ]
}

/// Draws `(α, β, ω)` with `0 < β ≤ τ min Re σ(M⁻¹K)` and
/// `−min Re σ(B⁻¹A) < (α−β)/2 ≤ τ min Re σ(M⁻¹K)`.
pub fn admissible_params(h: &Hypotheses, tau: f64, rng: &mut ChaCha8Rng) -> SplitParams {
    let bmax = h.beta_max(tau);
    let ba = h.min_re_ba.expect("reduced systems have invertible B");
    let beta = rng.gen_range(1e-3 * bmax..=bmax);
    let lo = (-ba).max(-beta / 2.0) * (1.0 - 1e-9);
    let shift = rng.gen_range(lo..=bmax);
    let omega = rng.gen_range(0.0..1.99);
    let p = SplitParams::new((beta + 2.0 * shift).max(1e-6), beta, omega).unwrap();
    debug_assert!(h.in_contraction_region(&p, tau) && h.in_stated_region(&p, tau));
    p
}

#[derive(Debug, Clone, Default)]
pub struct BoundSummary {
    pub checked: usize,
    pub violations: usize,
    /// Largest `radius − bound` seen; negative when every sample is inside.
    pub worst_gap: f64,
    /// Largest bound seen; must stay below one.
    pub max_bound: f64,
    /// Violations among parameters drawn only from the stated `β`
    /// interval with unrestricted `α`.
    pub stated_only_violations: usize,
    pub stated_only_checked: usize,
}

/// Dense `ρ(T)` (or `max |1 − μ|` over `σ(P⁻¹Q)` when `spectrum` is set)
/// against `½[(2−ω)φ+ω]` for `samples` parameter draws per system.
pub fn bound_suite(samples: usize, spectrum: bool, seed: u64) -> BoundSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = BoundSummary {
        worst_gap: f64::NEG_INFINITY,
        ..Default::default()
    };
    let radius = |sys: &AssembledSystem, p: SplitParams| {
        let r = if spectrum {
            preconditioned_spectrum(sys, p).unwrap()
        } else {
            iteration_matrix_radius(sys, p).unwrap()
        };
        (r.spectral_radius, r.bound.expect("B is invertible"))
    };
    for (_, sys) in theory_systems() {
        let hyp = hypotheses(&sys).unwrap();
        assert!(hyp.ok());
        let tau = sys.tau();
        for _ in 0..samples {
            let p = admissible_params(&hyp, tau, &mut rng);
            let (rho, bound) = radius(&sys, p);
            s.checked += 1;
            s.worst_gap = s.worst_gap.max(rho - bound);
            s.max_bound = s.max_bound.max(bound);
            if rho > bound + 1e-8 || bound >= 1.0 {
                s.violations += 1;
            }
        }
        for _ in 0..samples / 4 {
            let beta = rng.gen_range(1e-3..=hyp.beta_max(tau));
            let p = SplitParams::new(rng.gen_range(0.01..5.0), beta, rng.gen_range(0.0..1.99)).unwrap();
            let (rho, bound) = radius(&sys, p);
            s.stated_only_checked += 1;
            if rho > bound + 1e-8 || bound >= 1.0 {
                s.stated_only_violations += 1;
            }
        }
    }
    s
}
