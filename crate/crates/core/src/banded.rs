//! Banded LU factorization with partial pivoting.
//!
//! Storage follows the LAPACK `gbtrf` layout: column `j` holds rows
//! `j-ku-kl ..= j+kl` so that row interchanges never leave the band.

use crate::error::{check_len, Error, Result};
use crate::sparse::SparseMatrix;

#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<f64>,
    ipiv: Vec<usize>,
}

impl BandedLu {
    pub fn factor(a: &SparseMatrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::InvalidMatrix("banded LU needs a square matrix".into()));
        }
        let n = a.rows();
        let (kl, ku) = a.bandwidths();
        let kv = ku + kl;
        let ldab = 2 * kl + ku + 1;
        let mut ab = vec![0.0; ldab * n];
        for (i, j, v) in a.triplets() {
            ab[kv + i - j + j * ldab] = v;
        }
        let mut lu = BandedLu {
            n,
            kl,
            ku,
            ldab,
            ab,
            ipiv: vec![0; n],
        };
        lu.eliminate()?;
        Ok(lu)
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        self.ku + self.kl + i - j + j * self.ldab
    }

    fn eliminate(&mut self) -> Result<()> {
        let n = self.n;
        let kl = self.kl;
        let kv = self.ku + self.kl;
        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut jp = 0;
            let mut best = self.ab[self.idx(j, j)].abs();
            for i in 1..=km {
                let v = self.ab[self.idx(j + i, j)].abs();
                if v > best {
                    best = v;
                    jp = i;
                }
            }
            self.ipiv[j] = j + jp;
            if best == 0.0 {
                return Err(Error::Singular("zero pivot in banded LU"));
            }
            ju = ju.max((j + self.ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    let a = self.idx(j, c);
                    let b = self.idx(j + jp, c);
                    self.ab.swap(a, b);
                }
            }
            let piv = self.ab[self.idx(j, j)];
            for i in 1..=km {
                let k = self.idx(j + i, j);
                self.ab[k] /= piv;
            }
            for c in j + 1..=ju {
                let ujc = self.ab[self.idx(j, c)];
                if ujc == 0.0 {
                    continue;
                }
                for i in 1..=km {
                    // rows j+i within the stored window of column c
                    if j + i + kv < c {
                        continue;
                    }
                    let l = self.ab[self.idx(j + i, j)];
                    let k = self.idx(j + i, c);
                    self.ab[k] -= l * ujc;
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        check_len("banded solve", self.n, b.len())?;
        let mut x = b.to_vec();
        self.solve_blocks_in_place(&mut x, 1);
        Ok(x)
    }

    /// Solves `(A ⊗ I_block) x = b` in place, where `x` holds `n` consecutive
    /// blocks of length `block`. With `block = 1` this is an ordinary solve.
    pub fn solve_blocks_in_place(&self, x: &mut [f64], block: usize) {
        debug_assert_eq!(x.len(), self.n * block);
        if block == 1 {
            self.solve_scalar(x);
            return;
        }
        let n = self.n;
        let kv = self.ku + self.kl;
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                let (lo, hi) = x.split_at_mut(p * block);
                lo[j * block..(j + 1) * block].swap_with_slice(&mut hi[..block]);
            }
            let km = self.kl.min(n - 1 - j);
            for i in 1..=km {
                let l = self.ab[self.idx(j + i, j)];
                if l != 0.0 {
                    let (lo, hi) = x.split_at_mut((j + i) * block);
                    let src = &lo[j * block..(j + 1) * block];
                    for (d, s) in hi[..block].iter_mut().zip(src) {
                        *d -= l * s;
                    }
                }
            }
        }
        for j in (0..n).rev() {
            let d = self.ab[self.idx(j, j)];
            x[j * block..(j + 1) * block].iter_mut().for_each(|v| *v /= d);
            let start = j.saturating_sub(kv);
            for i in start..j {
                let u = self.ab[self.idx(i, j)];
                if u != 0.0 {
                    let (lo, hi) = x.split_at_mut(j * block);
                    let src = &hi[..block];
                    for (d, s) in lo[i * block..(i + 1) * block].iter_mut().zip(src) {
                        *d -= u * s;
                    }
                }
            }
        }
    }

    fn solve_scalar(&self, x: &mut [f64]) {
        let n = self.n;
        let kv = self.ku + self.kl;
        let ld = self.ldab;
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                x.swap(j, p);
            }
            let xj = x[j];
            if xj != 0.0 {
                let km = self.kl.min(n - 1 - j);
                // column j below the diagonal starts at row kv + 1
                let col = &self.ab[j * ld + kv + 1..j * ld + kv + 1 + km];
                for (xi, l) in x[j + 1..j + 1 + km].iter_mut().zip(col) {
                    *xi -= l * xj;
                }
            }
        }
        for j in (0..n).rev() {
            let xj = x[j] / self.ab[j * ld + kv];
            x[j] = xj;
            if xj != 0.0 {
                let start = j.saturating_sub(kv);
                // rows start..j of column j sit at offsets kv - (j - i)
                let col = &self.ab[j * ld + kv - (j - start)..j * ld + kv];
                for (xi, u) in x[start..j].iter_mut().zip(col) {
                    *xi -= u * xj;
                }
            }
        }
    }
}
