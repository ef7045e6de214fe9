//! Boundary-value-method time discretization and space-time assembly.
//!
//! A BVM applied to `M U' = -K U + F` over `m+1` time nodes gives the
//! all-at-once system `(A ⊗ M + τ B ⊗ K) u = τ (B ⊗ I) f + e₁ ⊗ Ψ` where
//! `u = [U₀; U₁; …; U_m]` is stored time-major (block `i` is node `i`).

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::kron::KroneckerOperator;
use crate::sparse::SparseMatrix;

const GAM5_FIRST: [f64; 5] = [251.0, 646.0, -264.0, 106.0, -19.0];
const GAM5_INTERIOR: [f64; 5] = [-19.0, 346.0, 456.0, -74.0, 11.0];
const GAM5_PENULTIMATE: [f64; 5] = [11.0, -74.0, 456.0, 346.0, -19.0];
const GAM5_LAST: [f64; 5] = [-19.0, 106.0, -264.0, 646.0, 251.0];
const GAM5_DENOM: f64 = 720.0;

/// Temporal factors `A`, `B` of a BVM on a uniform grid.
#[derive(Debug, Clone)]
pub struct TimeDiscretization {
    pub tau: f64,
    pub a: SparseMatrix,
    pub b: SparseMatrix,
}

impl TimeDiscretization {
    /// Builds a scheme from arbitrary square temporal factors.
    pub fn new(tau: f64, a: SparseMatrix, b: SparseMatrix) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {tau}")));
        }
        if !a.is_square() || !b.is_square() || a.rows() != b.rows() {
            return Err(Error::InvalidMatrix("A and B must be square and of equal order".into()));
        }
        Ok(TimeDiscretization { tau, a, b })
    }

    /// Number of time nodes (`m + 1` for the full scheme).
    pub fn nodes(&self) -> usize {
        self.a.rows()
    }

    /// Number of time steps `m`.
    pub fn steps(&self) -> usize {
        self.nodes() - 1
    }

    /// Drops the initial node: rows/columns `1..` of `A` and `B`.
    ///
    /// The returned scheme describes the unknowns `U₁ … U_m` once `U₀ = Ψ`
    /// has been moved to the right-hand side. Its `B` is nonsingular for
    /// GAM-5, unlike the full one whose first row is zero.
    pub fn without_initial_node(&self) -> Self {
        let trim = |s: &SparseMatrix| {
            let t: Vec<_> = s
                .triplets()
                .into_iter()
                .filter(|&(i, j, _)| i > 0 && j > 0)
                .map(|(i, j, v)| (i - 1, j - 1, v))
                .collect();
            SparseMatrix::from_triplets(s.rows() - 1, s.cols() - 1, &t).expect("trimmed matrix is valid")
        };
        TimeDiscretization {
            tau: self.tau,
            a: trim(&self.a),
            b: trim(&self.b),
        }
    }
}

/// Fifth-order generalized Adams method on `m` steps of size `tau`.
pub fn gam5_matrices(m: usize, tau: f64) -> Result<TimeDiscretization> {
    if m < 5 {
        return Err(Error::InvalidArgument(format!(
            "GAM-5 needs at least 5 time steps, got {m}"
        )));
    }
    let n = m + 1;
    let mut a = Vec::with_capacity(2 * n);
    a.push((0, 0, 1.0));
    for i in 1..n {
        a.push((i, i - 1, -1.0));
        a.push((i, i, 1.0));
    }
    let mut b = Vec::with_capacity(5 * n);
    let mut put = |row: usize, first_col: usize, coeffs: &[f64; 5]| {
        for (k, c) in coeffs.iter().enumerate() {
            b.push((row, first_col + k, c / GAM5_DENOM));
        }
    };
    put(1, 0, &GAM5_FIRST);
    for i in 2..=m - 2 {
        put(i, i - 2, &GAM5_INTERIOR);
    }
    put(m - 1, m - 4, &GAM5_PENULTIMATE);
    put(m, m - 4, &GAM5_LAST);
    TimeDiscretization::new(
        tau,
        SparseMatrix::from_triplets(n, n, &a)?,
        SparseMatrix::from_triplets(n, n, &b)?,
    )
}

/// The space-time system `Q u = rhs` with `Q = A ⊗ M + τ B ⊗ K`.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub time: TimeDiscretization,
    pub mass: SparseMatrix,
    pub stiffness: SparseMatrix,
    pub rhs: Vec<f64>,
}

impl AssembledSystem {
    /// Assembles the system from nodal forcing samples `forcing[i] = F(tᵢ)`
    /// and the initial vector `psi`.
    pub fn assemble(
        time: TimeDiscretization,
        mass: SparseMatrix,
        stiffness: SparseMatrix,
        forcing: &[Vec<f64>],
        psi: &[f64],
    ) -> Result<Self> {
        let space = check_spatial(&mass, &stiffness)?;
        check_len("forcing samples", time.nodes(), forcing.len())?;
        check_len("initial vector", space, psi.len())?;
        let mut f = Vec::with_capacity(space * time.nodes());
        for fi in forcing {
            check_len("forcing sample", space, fi.len())?;
            f.extend_from_slice(fi);
        }
        let identity = SparseMatrix::identity(space);
        let mut rhs = KroneckerOperator::new(&time.b, &identity)?.matvec(&f)?;
        rhs.iter_mut().for_each(|v| *v *= time.tau);
        // e₁ ⊗ Ψ
        for (r, p) in rhs[..space].iter_mut().zip(psi) {
            *r += p;
        }
        Ok(AssembledSystem {
            time,
            mass,
            stiffness,
            rhs,
        })
    }

    /// Wraps an explicit right-hand side.
    pub fn with_rhs(time: TimeDiscretization, mass: SparseMatrix, stiffness: SparseMatrix, rhs: Vec<f64>) -> Result<Self> {
        let space = check_spatial(&mass, &stiffness)?;
        check_len("right-hand side", space * time.nodes(), rhs.len())?;
        Ok(AssembledSystem {
            time,
            mass,
            stiffness,
            rhs,
        })
    }

    pub fn space_dim(&self) -> usize {
        self.mass.rows()
    }

    pub fn dim(&self) -> usize {
        self.space_dim() * self.time.nodes()
    }

    pub fn tau(&self) -> f64 {
        self.time.tau
    }

    /// `(A ⊗ M + τ B ⊗ K) u`, matrix-free.
    pub fn apply_q(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_len("apply_q", self.dim(), u.len())?;
        let mut y = vec![0.0; u.len()];
        let mut work = vec![0.0; u.len()];
        self.apply_q_into(u, &mut y, &mut work);
        Ok(y)
    }

    pub(crate) fn apply_q_into(&self, u: &[f64], y: &mut [f64], work: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        KroneckerOperator::new(&self.time.a, &self.mass)
            .expect("validated at construction")
            .apply_scaled_add(1.0, u, y, work);
        KroneckerOperator::new(&self.time.b, &self.stiffness)
            .expect("validated at construction")
            .apply_scaled_add(self.time.tau, u, y, work);
    }

    /// `b - Q u`.
    pub fn residual(&self, u: &[f64]) -> Result<Vec<f64>> {
        let mut r = self.apply_q(u)?;
        for (ri, bi) in r.iter_mut().zip(&self.rhs) {
            *ri = bi - *ri;
        }
        Ok(r)
    }

    /// Dense `Q` for oracle checks on small instances.
    pub fn dense_q(&self) -> Result<nalgebra::DMatrix<f64>> {
        let am = KroneckerOperator::new(&self.time.a, &self.mass)?.to_dense()?;
        let bk = KroneckerOperator::new(&self.time.b, &self.stiffness)?.to_dense()?;
        Ok(am + bk * self.time.tau)
    }

    /// Node-`i` block of a space-time vector.
    pub fn block<'a>(&self, u: &'a [f64], i: usize) -> &'a [f64] {
        let s = self.space_dim();
        &u[i * s..(i + 1) * s]
    }

    /// Eliminates the initial node using the first block row `M U₀ = rhs₀`.
    ///
    /// Requires row 0 of `A` to be `e₁ᵀ` and row 0 of `B` to be zero, which
    /// every BVM built here satisfies. `U₀` is recovered by solving with `M`
    /// (the identity in all bundled problems).
    pub fn without_initial_node(&self) -> Result<Self> {
        let a = &self.time.a;
        let b = &self.time.b;
        let first_a: Vec<_> = a.row(0).collect();
        if first_a != vec![(0, 1.0)] || b.row(0).next().is_some() {
            return Err(Error::InvalidMatrix(
                "initial-node elimination needs A row 0 = e1 and B row 0 = 0".into(),
            ));
        }
        let s = self.space_dim();
        let nodes = self.time.nodes();
        let u0 = solve_mass(&self.mass, &self.rhs[..s])?;
        let mu0 = self.mass.matvec(&u0)?;
        let ku0 = self.stiffness.matvec(&u0)?;
        let mut rhs = self.rhs[s..].to_vec();
        for i in 1..nodes {
            let ai0 = a.get(i, 0);
            let bi0 = b.get(i, 0) * self.time.tau;
            if ai0 == 0.0 && bi0 == 0.0 {
                continue;
            }
            let blk = &mut rhs[(i - 1) * s..i * s];
            for k in 0..s {
                blk[k] -= ai0 * mu0[k] + bi0 * ku0[k];
            }
        }
        AssembledSystem::with_rhs(
            self.time.without_initial_node(),
            self.mass.clone(),
            self.stiffness.clone(),
            rhs,
        )
    }

    /// Writes `A`, `B`, `M`, `K` in coordinate form, the right-hand side as
    /// one value per line, and a JSON manifest.
    pub fn export(&self, dir: &Path, prefix: &str) -> Result<SystemManifest> {
        std::fs::create_dir_all(dir)?;
        let write_matrix = |name: &str, m: &SparseMatrix| -> Result<String> {
            let file = format!("{prefix}_{name}.coo");
            let w = std::io::BufWriter::new(std::fs::File::create(dir.join(&file))?);
            m.write_coordinate(w)?;
            Ok(file)
        };
        let manifest = SystemManifest {
            steps: self.time.steps(),
            tau: self.time.tau,
            space_dim: self.space_dim(),
            a: write_matrix("A", &self.time.a)?,
            b: write_matrix("B", &self.time.b)?,
            mass: write_matrix("M", &self.mass)?,
            stiffness: write_matrix("K", &self.stiffness)?,
            rhs: format!("{prefix}_rhs.txt"),
        };
        let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join(&manifest.rhs))?);
        for v in &self.rhs {
            writeln!(w, "{v:e}")?;
        }
        w.flush()?;
        let f = std::fs::File::create(dir.join(format!("{prefix}_manifest.json")))?;
        serde_json::to_writer_pretty(f, &manifest)?;
        Ok(manifest)
    }

    /// Reads back a system written by [`AssembledSystem::export`].
    pub fn import(dir: &Path, prefix: &str) -> Result<Self> {
        let f = std::fs::File::open(dir.join(format!("{prefix}_manifest.json")))?;
        let manifest: SystemManifest = serde_json::from_reader(f)?;
        let read = |file: &str| -> Result<SparseMatrix> {
            let r = std::io::BufReader::new(std::fs::File::open(dir.join(file))?);
            SparseMatrix::read_coordinate(r)
        };
        let text = std::fs::read_to_string(dir.join(&manifest.rhs))?;
        let rhs = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                l.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let time = TimeDiscretization::new(manifest.tau, read(&manifest.a)?, read(&manifest.b)?)?;
        AssembledSystem::with_rhs(time, read(&manifest.mass)?, read(&manifest.stiffness)?, rhs)
    }
}

/// Manifest describing an exported [`AssembledSystem`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemManifest {
    pub steps: usize,
    pub tau: f64,
    pub space_dim: usize,
    pub a: String,
    pub b: String,
    pub mass: String,
    pub stiffness: String,
    pub rhs: String,
}

fn check_spatial(mass: &SparseMatrix, stiffness: &SparseMatrix) -> Result<usize> {
    if !mass.is_square() || !stiffness.is_square() {
        return Err(Error::InvalidMatrix("M and K must be square".into()));
    }
    check_len("mass/stiffness order", mass.rows(), stiffness.rows())?;
    Ok(mass.rows())
}

fn solve_mass(mass: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let identity = mass.rows() == mass.nnz() && (0..mass.rows()).all(|i| mass.get(i, i) == 1.0);
    if identity {
        return Ok(b.to_vec());
    }
    crate::banded::BandedLu::factor(mass)?.solve(b)
}
