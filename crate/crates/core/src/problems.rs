//! Benchmark problems: 2D diffusion, 2D convection-diffusion and the
//! differential Sylvester equation, all as `M U' = -K U + F(t)`.
//!
//! Grids are uniform on the unit square with `n` interior points per
//! direction, `h = 1/(n+1)`, lexicographic ordering with `x` fastest
//! (unknown `(i, j)` sits at index `j·n + i`).

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bvm::{gam5_matrices, AssembledSystem};
use crate::error::{Error, Result};
use crate::kron::vec as vec_of;
use crate::sparse::SparseMatrix;

/// Angular frequency of the diffusion benchmark's exact solution.
const DIFFUSION_OMEGA: f64 = 5.25 * PI;

/// Default time step of the Sylvester benchmark.
pub const SYLVESTER_TAU: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Diffusion,
    ConvDiff,
    Sylvester,
}

impl ProblemKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemKind::Diffusion => "diffusion",
            ProblemKind::ConvDiff => "convdiff",
            ProblemKind::Sylvester => "sylvester",
        }
    }
}

impl std::str::FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diffusion" => Ok(ProblemKind::Diffusion),
            "convdiff" | "convection-diffusion" => Ok(ProblemKind::ConvDiff),
            "sylvester" => Ok(ProblemKind::Sylvester),
            other => Err(Error::InvalidArgument(format!("unknown problem `{other}`"))),
        }
    }
}

impl std::fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
enum Forcing {
    /// `f = u_t - Δu` for `u = sin(5.25πt)·xy(1-x)(1-y)`.
    Diffusion { n: usize, h: f64 },
    Constant(Vec<f64>),
}

/// A semi-discrete problem `M U' = -K U + F(t)`, `U(0) = Ψ`.
#[derive(Debug, Clone)]
pub struct SpaceTimeProblem {
    pub kind: ProblemKind,
    /// `n` for the PDE problems, `n0` for Sylvester.
    pub size: usize,
    pub h: f64,
    pub mass: SparseMatrix,
    pub stiffness: SparseMatrix,
    pub psi: Vec<f64>,
    pub seed: Option<u64>,
    forcing: Forcing,
    exact_constant: Option<Vec<f64>>,
}

impl SpaceTimeProblem {
    pub fn space_dim(&self) -> usize {
        self.mass.rows()
    }

    pub fn forcing_at(&self, t: f64) -> Vec<f64> {
        match &self.forcing {
            Forcing::Diffusion { n, h } => {
                let (n, h) = (*n, *h);
                let (s, c) = (DIFFUSION_OMEGA * t).sin_cos();
                let mut f = Vec::with_capacity(n * n);
                for j in 0..n {
                    let y = (j + 1) as f64 * h;
                    for i in 0..n {
                        let x = (i + 1) as f64 * h;
                        let gx = x * (1.0 - x);
                        let gy = y * (1.0 - y);
                        f.push(DIFFUSION_OMEGA * c * gx * gy + 2.0 * s * (gx + gy));
                    }
                }
                f
            }
            Forcing::Constant(v) => v.clone(),
        }
    }

    /// Exact solution sampled on the grid at time `t`, when known.
    pub fn exact_at(&self, t: f64) -> Option<Vec<f64>> {
        if let Some(c) = &self.exact_constant {
            return Some(c.clone());
        }
        match self.kind {
            ProblemKind::Diffusion => {
                let n = self.size;
                let h = self.h;
                let s = (DIFFUSION_OMEGA * t).sin();
                let mut u = Vec::with_capacity(n * n);
                for j in 0..n {
                    let y = (j + 1) as f64 * h;
                    for i in 0..n {
                        let x = (i + 1) as f64 * h;
                        u.push(s * x * (1.0 - x) * y * (1.0 - y));
                    }
                }
                Some(u)
            }
            _ => None,
        }
    }

    /// Assembles the GAM-5 space-time system over `m` steps of size `tau`.
    pub fn assemble(&self, m: usize, tau: f64) -> Result<AssembledSystem> {
        let time = gam5_matrices(m, tau)?;
        let forcing: Vec<Vec<f64>> = (0..=m).map(|i| self.forcing_at(i as f64 * tau)).collect();
        AssembledSystem::assemble(time, self.mass.clone(), self.stiffness.clone(), &forcing, &self.psi)
    }

    /// Assembles over `[0, 1]` with `m = round(1/tau)` steps.
    pub fn assemble_unit_interval(&self, tau: f64) -> Result<AssembledSystem> {
        self.assemble(steps_for_tau(tau)?, tau)
    }
}

/// Number of steps `m = T/τ` covering `[0, 1]`.
pub fn steps_for_tau(tau: f64) -> Result<usize> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidArgument(format!("time step {tau} must lie in (0, 1]")));
    }
    Ok((1.0 / tau).round() as usize)
}

/// Interior points per direction for mesh size `h = 1/(n+1)`.
pub fn points_for_h(h: f64) -> Result<usize> {
    if !(h > 0.0 && h < 0.5) {
        return Err(Error::InvalidArgument(format!("mesh size {h} must lie in (0, 1/2)")));
    }
    Ok((1.0 / h).round() as usize - 1)
}

fn check_grid(n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 interior points, got {n}")));
    }
    Ok(1.0 / (n as f64 + 1.0))
}

/// `u_t = Δu + f` with homogeneous Dirichlet data and exact solution
/// `sin(5.25πt)·xy(1-x)(1-y)`; `K = (I⊗T + T⊗I)/h²`.
pub fn diffusion_2d(n: usize) -> Result<SpaceTimeProblem> {
    let h = check_grid(n)?;
    let t = SparseMatrix::tridiag(n, -1.0, 2.0, -1.0);
    let i = SparseMatrix::identity(n);
    let stiffness = i.kron(&t).add(&t.kron(&i))?.scale(1.0 / (h * h));
    Ok(SpaceTimeProblem {
        kind: ProblemKind::Diffusion,
        size: n,
        h,
        mass: SparseMatrix::identity(n * n),
        stiffness,
        psi: vec![0.0; n * n],
        seed: None,
        forcing: Forcing::Diffusion { n, h },
        exact_constant: None,
    })
}

/// Convection-diffusion with `K = I⊗P + Q⊗I`, where `P` is the scaled
/// second difference and `Q` adds a centered first difference. The forcing
/// `F = K·1` and `Ψ = 1` make the all-ones vector the exact discrete solution.
pub fn convdiff_2d(n: usize) -> Result<SpaceTimeProblem> {
    let h = check_grid(n)?;
    let h2 = h * h;
    let p = SparseMatrix::tridiag(n, -1.0 / h2, 2.0 / h2, -1.0 / h2);
    let q = SparseMatrix::tridiag(n, -1.0 / (2.0 * h) - 1.0 / h2, 2.0 / h2, 1.0 / (2.0 * h) - 1.0 / h2);
    let i = SparseMatrix::identity(n);
    let stiffness = i.kron(&p).add(&q.kron(&i))?;
    let ones = vec![1.0; n * n];
    let forcing = stiffness.matvec(&ones)?;
    Ok(SpaceTimeProblem {
        kind: ProblemKind::ConvDiff,
        size: n,
        h,
        mass: SparseMatrix::identity(n * n),
        stiffness,
        psi: ones.clone(),
        seed: None,
        forcing: Forcing::Constant(forcing),
        exact_constant: Some(ones),
    })
}

/// Centered-difference discretization of
/// `ℒu = Δu + f1(x,y) u_x + f2(x,y) u_y + f(x,y) u` on the unit square with
/// homogeneous Dirichlet data. The matrix discretizes `ℒ` itself, so the
/// Laplacian part is negative definite.
pub fn fdm_2d_operator<F1, F2, F0>(n0: usize, f1: F1, f2: F2, f: F0) -> Result<SparseMatrix>
where
    F1: Fn(f64, f64) -> f64,
    F2: Fn(f64, f64) -> f64,
    F0: Fn(f64, f64) -> f64,
{
    let h = check_grid(n0)?;
    let h2 = h * h;
    let idx = |i: usize, j: usize| j * n0 + i;
    let mut t = Vec::with_capacity(5 * n0 * n0);
    for j in 0..n0 {
        let y = (j + 1) as f64 * h;
        for i in 0..n0 {
            let x = (i + 1) as f64 * h;
            let cx = f1(x, y) / (2.0 * h);
            let cy = f2(x, y) / (2.0 * h);
            let row = idx(i, j);
            t.push((row, row, -4.0 / h2 + f(x, y)));
            if i > 0 {
                t.push((row, idx(i - 1, j), 1.0 / h2 - cx));
            }
            if i + 1 < n0 {
                t.push((row, idx(i + 1, j), 1.0 / h2 + cx));
            }
            if j > 0 {
                t.push((row, idx(i, j - 1), 1.0 / h2 - cy));
            }
            if j + 1 < n0 {
                t.push((row, idx(i, j + 1), 1.0 / h2 + cy));
            }
        }
    }
    SparseMatrix::from_triplets(n0 * n0, n0 * n0, &t)
}

/// `X' = 𝒜X + X𝓑 + EFᵀ`, `X(0) = 0`, with `𝒜, 𝓑` of order `n = n0²`.
#[derive(Debug, Clone)]
pub struct SylvesterProblem {
    pub n0: usize,
    pub a_op: SparseMatrix,
    pub b_op: SparseMatrix,
    pub e: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub seed: u64,
}

impl SylvesterProblem {
    pub fn n(&self) -> usize {
        self.a_op.rows()
    }

    pub fn rank(&self) -> usize {
        self.e.ncols()
    }

    /// Vectorized form with `K = -(I⊗𝒜 + 𝓑ᵀ⊗I)`, `M = I`, `f = vec(EFᵀ)`.
    pub fn to_space_time(&self) -> Result<SpaceTimeProblem> {
        let n = self.n();
        let i = SparseMatrix::identity(n);
        let stiffness = i.kron(&self.a_op).add(&self.b_op.transpose().kron(&i))?.scale(-1.0);
        let forcing = vec_of(&(&self.e * self.f.transpose()));
        Ok(SpaceTimeProblem {
            kind: ProblemKind::Sylvester,
            size: self.n0,
            h: 1.0 / (self.n0 as f64 + 1.0),
            mass: SparseMatrix::identity(n * n),
            stiffness,
            psi: vec![0.0; n * n],
            seed: Some(self.seed),
            forcing: Forcing::Constant(forcing),
            exact_constant: None,
        })
    }
}

/// The Sylvester benchmark: `𝒜 = 𝓑 = fdm_2d_operator(n0, x, y, 0)` and
/// `E, F` with i.i.d. uniform `[0, 1]` entries drawn from `seed`.
pub fn sylvester_problem(n0: usize, s: usize, seed: u64) -> Result<SylvesterProblem> {
    let op = fdm_2d_operator(n0, |x, _| x, |_, y| y, |_, _| 0.0)?;
    sylvester_with_operators(n0, op.clone(), op, s, seed)
}

/// Sylvester problem with caller-chosen `𝒜` and `𝓑`.
pub fn sylvester_with_operators(
    n0: usize,
    a_op: SparseMatrix,
    b_op: SparseMatrix,
    s: usize,
    seed: u64,
) -> Result<SylvesterProblem> {
    if s == 0 {
        return Err(Error::InvalidArgument("low-rank factor width s must be at least 1".into()));
    }
    if !a_op.is_square() || a_op.rows() != b_op.rows() || !b_op.is_square() {
        return Err(Error::InvalidMatrix("Sylvester operators must be square and equal order".into()));
    }
    let n = a_op.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = DMatrix::from_fn(n, s, |_, _| rng.gen_range(0.0..=1.0));
    let f = DMatrix::from_fn(n, s, |_, _| rng.gen_range(0.0..=1.0));
    Ok(SylvesterProblem {
        n0,
        a_op,
        b_op,
        e,
        f,
        seed,
    })
}

/// Builds a benchmark problem by kind. `size` is `n` (PDE) or `n0` (Sylvester).
pub fn build(kind: ProblemKind, size: usize, seed: u64) -> Result<SpaceTimeProblem> {
    match kind {
        ProblemKind::Diffusion => diffusion_2d(size),
        ProblemKind::ConvDiff => convdiff_2d(size),
        ProblemKind::Sylvester => sylvester_problem(size, 2, seed)?.to_space_time(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diffusion_n2_entries() {
        let p = diffusion_2d(2).unwrap();
        let k = &p.stiffness;
        assert!((p.h - 1.0 / 3.0).abs() < 1e-15);
        for i in 0..4 {
            assert!((k.get(i, i) - 36.0).abs() < 1e-12);
        }
        // (0,0)-(1,0) neighbours in x, (0,0)-(0,1) in y; no diagonal coupling
        assert!((k.get(0, 1) + 9.0).abs() < 1e-12);
        assert!((k.get(0, 2) + 9.0).abs() < 1e-12);
        assert_eq!(k.get(0, 3), 0.0);
        assert!(p.psi.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn convdiff_n2_stencil() {
        let n = 2;
        let h = 1.0 / 3.0;
        let q = SparseMatrix::tridiag(n, -1.0 / (2.0 * h) - 1.0 / (h * h), 2.0 / (h * h), 1.0 / (2.0 * h) - 1.0 / (h * h));
        assert!((q.get(1, 0) + 10.5).abs() < 1e-12);
        assert!((q.get(0, 1) + 7.5).abs() < 1e-12);
        let p = convdiff_2d(2).unwrap();
        // y-neighbours carry Q's off-diagonals
        assert!((p.stiffness.get(2, 0) + 10.5).abs() < 1e-12);
        assert!((p.stiffness.get(0, 2) + 7.5).abs() < 1e-12);
        assert!((p.stiffness.get(0, 1) + 9.0).abs() < 1e-12);
    }

    #[test]
    fn fdm_pure_laplacian_is_negated_diffusion() {
        let a = fdm_2d_operator(4, |_, _| 0.0, |_, _| 0.0, |_, _| 0.0).unwrap();
        let k = diffusion_2d(4).unwrap().stiffness;
        let diff = a.add(&k).unwrap();
        assert!(diff.values().iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn fdm_reaction_shifts_diagonal() {
        let a0 = fdm_2d_operator(3, |x, _| x, |_, y| y, |_, _| 0.0).unwrap();
        let a1 = fdm_2d_operator(3, |x, _| x, |_, y| y, |_, _| 2.5).unwrap();
        let d = a1.linear_combination(1.0, &a0, -1.0).unwrap();
        assert_eq!(d.nnz(), 9);
        assert!(d.diagonal().iter().all(|v| (v - 2.5).abs() < 1e-10));
    }

    #[test]
    fn sylvester_sizes_and_seeding() {
        let p = sylvester_problem(4, 2, 17).unwrap();
        assert_eq!(p.n(), 16);
        let st = p.to_space_time().unwrap();
        assert_eq!(st.stiffness.rows(), 256);
        let q = sylvester_problem(4, 2, 17).unwrap();
        assert_eq!(p.e, q.e);
        assert_eq!(p.f, q.f);
        let r = sylvester_problem(4, 2, 18).unwrap();
        assert_ne!(p.e, r.e);
        assert!(sylvester_problem(4, 0, 1).is_err());
        assert!(p.e.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn sylvester_forcing_has_rank_at_most_s() {
        let p = sylvester_problem(3, 2, 5).unwrap();
        let st = p.to_space_time().unwrap();
        let f = DMatrix::from_column_slice(9, 9, &st.forcing_at(0.3));
        let sv = f.singular_values();
        let rank = sv.iter().filter(|s| **s > 1e-10 * sv[0]).count();
        assert!(rank <= 2);
    }

    #[test]
    fn small_grids_rejected() {
        assert!(diffusion_2d(1).is_err());
        assert!(convdiff_2d(0).is_err());
        assert!(fdm_2d_operator(1, |_, _| 0.0, |_, _| 0.0, |_, _| 0.0).is_err());
    }

    #[test]
    fn table_grid_conversions() {
        assert_eq!(points_for_h(1.0 / 16.0).unwrap(), 15);
        assert_eq!(steps_for_tau(1.0 / 16.0).unwrap(), 16);
        assert_eq!(steps_for_tau(SYLVESTER_TAU).unwrap(), 10);
    }
}
