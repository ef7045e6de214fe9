//! Spectra of the MSKP iteration matrix and preconditioned operator.
//!
//! For eigenpairs `λ ∈ σ(B⁻¹A)` and `μ ∈ σ(τM⁻¹K)` the iteration matrix
//! `T = I - P⁻¹Q` has eigenvalue `½[(2-ω)t + ω]` with
//! `t = (λ-β)/(λ+α) · (μ-α)/(μ+β)`. The bound `½[(2-ω)φ+ω]` controls the
//! first factor through `φ`; the second factor is at most one in modulus
//! exactly when `(α-β)/2 ≤ Re μ` for every `μ`.

use std::io::Write;

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::bvm::AssembledSystem;
use crate::error::{Error, Result};
use crate::kron::DENSE_ORACLE_CAP;
use crate::solvers::SplitParams;
use crate::sparse::SparseMatrix;

pub type C64 = Complex<f64>;

const SCHUR_EPS: f64 = 1e-14;
const SCHUR_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone)]
pub struct SpectrumReport {
    pub eigenvalues: Vec<C64>,
    pub spectral_radius: f64,
    /// `½[(2-ω)φ+ω]`, absent when `B` is singular.
    pub bound: Option<f64>,
    pub hypothesis_ok: bool,
}

/// Numerical check of the convergence hypotheses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hypotheses {
    /// `min Re σ(M⁻¹K)`.
    pub min_re_mk: f64,
    /// `min Re σ(B⁻¹A)`, absent when `B` is singular.
    pub min_re_ba: Option<f64>,
}

impl Hypotheses {
    pub fn ok(&self) -> bool {
        self.min_re_mk >= -1e-10 && self.min_re_ba.is_some_and(|v| v > 0.0)
    }

    /// Upper end `τ·min Re σ(M⁻¹K)` of the stated admissible `β` interval.
    pub fn beta_max(&self, tau: f64) -> f64 {
        tau * self.min_re_mk
    }

    /// Whether `(α, β)` lies in the region where both factors of every
    /// iteration-matrix eigenvalue are bounded by one:
    /// `-min Re σ(B⁻¹A) < (α-β)/2 ≤ τ·min Re σ(M⁻¹K)`.
    pub fn in_contraction_region(&self, p: &SplitParams, tau: f64) -> bool {
        let shift = (p.alpha - p.beta) / 2.0;
        match self.min_re_ba {
            Some(ba) => -ba < shift && shift <= tau * self.min_re_mk,
            None => false,
        }
    }

    /// Whether `β` satisfies the stated condition `0 < β ≤ τ·min Re σ(M⁻¹K)`.
    pub fn in_stated_region(&self, p: &SplitParams, tau: f64) -> bool {
        p.beta > 0.0 && p.beta <= self.beta_max(tau)
    }
}

/// Eigenvalues of a real dense matrix.
pub fn eigenvalues(m: DMatrix<f64>) -> Result<Vec<C64>> {
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = nalgebra::linalg::Schur::try_new(m, SCHUR_EPS, SCHUR_MAX_ITER).ok_or(Error::EigenFailure)?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Eigenvalues of a complex dense matrix.
pub fn complex_eigenvalues(m: DMatrix<C64>) -> Result<Vec<C64>> {
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = nalgebra::linalg::Schur::try_new(m, SCHUR_EPS, SCHUR_MAX_ITER).ok_or(Error::EigenFailure)?;
    schur
        .eigenvalues()
        .map(|v| v.iter().copied().collect())
        .ok_or(Error::EigenFailure)
}

fn check_cap(dim: usize) -> Result<()> {
    if dim > DENSE_ORACLE_CAP {
        return Err(Error::DimensionCap {
            dim,
            cap: DENSE_ORACLE_CAP,
        });
    }
    Ok(())
}

fn dense_solve(lhs: &SparseMatrix, rhs: DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    lhs.to_dense().lu().solve(&rhs).ok_or(Error::Singular(what))
}

/// `σ(L⁻¹R)` for square sparse `L`, `R`.
fn pencil_eigenvalues(l: &SparseMatrix, r: &SparseMatrix, what: &'static str) -> Result<Vec<C64>> {
    check_cap(l.rows())?;
    eigenvalues(dense_solve(l, r.to_dense(), what)?)
}

/// `σ(B⁻¹A)`; errors when `B` is singular.
pub fn time_pencil_eigenvalues(sys: &AssembledSystem) -> Result<Vec<C64>> {
    pencil_eigenvalues(&sys.time.b, &sys.time.a, "B")
}

/// `σ(M⁻¹K)`.
pub fn space_pencil_eigenvalues(sys: &AssembledSystem) -> Result<Vec<C64>> {
    pencil_eigenvalues(&sys.mass, &sys.stiffness, "M")
}

fn min_re(v: &[C64]) -> f64 {
    v.iter().map(|z| z.re).fold(f64::INFINITY, f64::min)
}

pub fn hypotheses(sys: &AssembledSystem) -> Result<Hypotheses> {
    let mk = space_pencil_eigenvalues(sys)?;
    let ba = match time_pencil_eigenvalues(sys) {
        Ok(v) => Some(min_re(&v)),
        Err(Error::Singular(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(Hypotheses {
        min_re_mk: min_re(&mk),
        min_re_ba: ba,
    })
}

/// `φ(α, β) = max |λ' - (α+β)/2| / |λ' + (α+β)/2|` over
/// `λ' ∈ σ(B⁻¹A) + (α-β)/2`.
pub fn phi_from_eigenvalues(ba: &[C64], alpha: f64, beta: f64) -> f64 {
    let shift = (alpha - beta) / 2.0;
    let c = (alpha + beta) / 2.0;
    ba.iter()
        .map(|&l| {
            let l = l + shift;
            (l - c).norm() / (l + c).norm()
        })
        .fold(0.0, f64::max)
}

/// `½[(2-ω)φ + ω]`.
pub fn bound_from_phi(phi: f64, omega: f64) -> f64 {
    0.5 * ((2.0 - omega) * phi + omega)
}

/// The convergence bound for `p`; needs a nonsingular `B`.
pub fn theoretical_bound(sys: &AssembledSystem, p: SplitParams) -> Result<f64> {
    p.validate()?;
    let ba = time_pencil_eigenvalues(sys)?;
    Ok(bound_from_phi(phi_from_eigenvalues(&ba, p.alpha, p.beta), p.omega))
}

/// Dense `P(α,β,ω)⁻¹ Q`.
pub fn dense_preconditioned_operator(sys: &AssembledSystem, p: SplitParams) -> Result<DMatrix<f64>> {
    p.validate()?;
    check_cap(sys.dim())?;
    let t = &sys.time;
    let l = t.a.linear_combination(1.0, &t.b, p.alpha)?.to_dense();
    let r = sys.stiffness.linear_combination(sys.tau(), &sys.mass, p.beta)?.to_dense();
    let li = l.try_inverse().ok_or(Error::Singular("A + alpha B"))?;
    let ri = r.try_inverse().ok_or(Error::Singular("tau K + beta M"))?;
    let q = sys.dense_q()?;
    Ok(li.kronecker(&ri) * q * p.residual_scale())
}

/// Dense `T(α,β,ω) = I - P⁻¹Q`.
pub fn dense_iteration_matrix(sys: &AssembledSystem, p: SplitParams) -> Result<DMatrix<f64>> {
    let pq = dense_preconditioned_operator(sys, p)?;
    Ok(DMatrix::identity(pq.nrows(), pq.ncols()) - pq)
}

fn optional_bound(sys: &AssembledSystem, p: SplitParams) -> Result<Option<f64>> {
    match theoretical_bound(sys, p) {
        Ok(b) => Ok(Some(b)),
        Err(Error::Singular(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn report(eigenvalues: Vec<C64>, bound: Option<f64>, hyp: &Hypotheses) -> SpectrumReport {
    let spectral_radius = eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max);
    SpectrumReport {
        eigenvalues,
        spectral_radius,
        bound,
        hypothesis_ok: hyp.ok(),
    }
}

/// Spectrum and radius of the iteration matrix by dense eigensolve.
pub fn iteration_matrix_radius(sys: &AssembledSystem, p: SplitParams) -> Result<SpectrumReport> {
    let t = dense_iteration_matrix(sys, p)?;
    let eig = eigenvalues(t)?;
    Ok(report(eig, optional_bound(sys, p)?, &hypotheses(sys)?))
}

/// Spectrum of `P⁻¹Q` by dense eigensolve. `spectral_radius` is
/// `max |1 - μ|`, the radius of the smallest disk about 1 holding it.
pub fn preconditioned_spectrum(sys: &AssembledSystem, p: SplitParams) -> Result<SpectrumReport> {
    let eig = eigenvalues(dense_preconditioned_operator(sys, p)?)?;
    let mut r = report(eig, optional_bound(sys, p)?, &hypotheses(sys)?);
    r.spectral_radius = r.eigenvalues.iter().map(|z| (C64::new(1.0, 0.0) - z).norm()).fold(0.0, f64::max);
    Ok(r)
}

/// Spectrum of `Q` itself by dense eigensolve.
pub fn operator_spectrum(sys: &AssembledSystem) -> Result<Vec<C64>> {
    check_cap(sys.dim())?;
    eigenvalues(sys.dense_q()?)
}

/// Spectrum of `Q` or `P⁻¹Q` through the spatial eigendecomposition.
///
/// With `M⁻¹K = W diag(ν) W⁻¹`, `Q` is similar to the block diagonal of
/// `A + τν B`, and `P⁻¹Q` to that of `s (A+αB)⁻¹(A + τν B)/(τν + β)`, so
/// only matrices of the time order are factorized. Valid when `M⁻¹K` is
/// diagonalizable, which holds for every bundled problem.
pub fn structured_spectrum(sys: &AssembledSystem, p: Option<SplitParams>) -> Result<Vec<C64>> {
    check_cap(sys.space_dim())?;
    check_cap(sys.time.nodes())?;
    let nus = space_pencil_eigenvalues(sys)?;
    let tau = sys.tau();
    let a = sys.time.a.to_dense().map(|v| C64::new(v, 0.0));
    let b = sys.time.b.to_dense().map(|v| C64::new(v, 0.0));
    let left = match p {
        Some(p) => {
            p.validate()?;
            let l = &a + &b * C64::new(p.alpha, 0.0);
            Some((l.try_inverse().ok_or(Error::Singular("A + alpha B"))?, p))
        }
        None => None,
    };
    let mut out = Vec::with_capacity(nus.len() * sys.time.nodes());
    for nu in nus {
        let block = &a + &b * (nu * tau);
        let block = match &left {
            Some((li, p)) => li * block * (C64::new(p.residual_scale(), 0.0) / (nu * tau + p.beta)),
            None => block,
        };
        out.extend(complex_eigenvalues(block)?);
    }
    Ok(out)
}

/// Tag identifying the preconditioner of an eigenvalue export.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectrumTag {
    None,
    Kps,
    Gkps,
    Mskp,
}

impl SpectrumTag {
    pub fn name(&self) -> &'static str {
        match self {
            SpectrumTag::None => "none",
            SpectrumTag::Kps => "kps",
            SpectrumTag::Gkps => "gkps",
            SpectrumTag::Mskp => "mskp",
        }
    }
}

impl std::str::FromStr for SpectrumTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(SpectrumTag::None),
            "kps" => Ok(SpectrumTag::Kps),
            "gkps" => Ok(SpectrumTag::Gkps),
            "mskp" => Ok(SpectrumTag::Mskp),
            other => Err(Error::InvalidArgument(format!("unknown spectrum tag `{other}`"))),
        }
    }
}

/// Writes `re,im,tag` rows.
pub fn write_eigenvalue_csv<W: Write>(w: W, eigenvalues: &[C64], tag: SpectrumTag) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["re", "im", "tag"])?;
    for z in eigenvalues {
        wr.write_record([format!("{:e}", z.re), format!("{:e}", z.im), tag.name().to_string()])?;
    }
    wr.flush()?;
    Ok(())
}
