//! Scalar-input covariance functions and their hyperparameter derivatives.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseKernel {
    Linear,
    Gaussian,
    Periodic,
}

impl BaseKernel {
    fn symbol(&self) -> char {
        match self {
            BaseKernel::Linear => 'l',
            BaseKernel::Gaussian => 'g',
            BaseKernel::Periodic => 'p',
        }
    }

    fn from_symbol(c: char) -> Option<Self> {
        match c {
            'l' => Some(BaseKernel::Linear),
            'g' => Some(BaseKernel::Gaussian),
            'p' => Some(BaseKernel::Periodic),
            _ => None,
        }
    }
}

/// A library element: one base kernel or the product of two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelKind {
    Single(BaseKernel),
    Product(BaseKernel, BaseKernel),
}

impl KernelKind {
    pub fn bases(&self) -> Vec<BaseKernel> {
        match *self {
            KernelKind::Single(a) => vec![a],
            KernelKind::Product(a, b) => vec![a, b],
        }
    }

    pub fn uses(&self, b: BaseKernel) -> bool {
        self.bases().contains(&b)
    }

    /// Short name such as `g`, `p` or `gp`.
    pub fn name(&self) -> String {
        self.bases().iter().map(|b| b.symbol()).collect()
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bases: Option<Vec<BaseKernel>> = s.chars().map(BaseKernel::from_symbol).collect();
        match bases.as_deref() {
            Some([a]) => Ok(KernelKind::Single(*a)),
            Some([a, b]) => Ok(KernelKind::Product(*a, *b)),
            _ => Err(Error::InvalidArgument(format!("unknown kernel `{s}`"))),
        }
    }
}

impl std::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name())
    }
}

/// Hyperparameters shared by every library element of the same kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelHyper {
    /// Linear kernel offset `c`.
    pub offset: f64,
    /// Lengthscale `ι`, shared by the Gaussian and periodic kernels.
    pub lengthscale: f64,
    /// Period `p`.
    pub period: f64,
}

impl Default for KernelHyper {
    fn default() -> Self {
        KernelHyper {
            offset: 0.0,
            lengthscale: 1.0,
            period: 1.0,
        }
    }
}

impl KernelHyper {
    pub fn validate(&self) -> Result<()> {
        if self.lengthscale > 0.0 && self.period > 0.0 && self.offset.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid kernel hyperparameters {self:?}")))
        }
    }
}

/// A kernel with its output variance, for standalone evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub sigma_f2: f64,
    pub hyper: KernelHyper,
}

impl KernelSpec {
    pub fn new(kind: KernelKind, sigma_f2: f64, hyper: KernelHyper) -> Result<Self> {
        hyper.validate()?;
        if !(sigma_f2 > 0.0) {
            return Err(Error::InvalidArgument(format!("output variance must be positive, got {sigma_f2}")));
        }
        Ok(KernelSpec { kind, sigma_f2, hyper })
    }
}

/// `σ_f² · k(x, x')`, products multiplying two unit-variance evaluations.
pub fn kernel_eval(spec: &KernelSpec, x: f64, xp: f64) -> f64 {
    spec.sigma_f2 * unit_eval(spec.kind, &spec.hyper, x, xp)
}

fn base_eval(b: BaseKernel, h: &KernelHyper, x: f64, xp: f64) -> f64 {
    match b {
        BaseKernel::Linear => (x - h.offset) * (xp - h.offset),
        BaseKernel::Gaussian => {
            let d = x - xp;
            (-d * d / (2.0 * h.lengthscale * h.lengthscale)).exp()
        }
        BaseKernel::Periodic => {
            let s = (PI * (x - xp) / h.period).sin();
            (-2.0 * s * s / (h.lengthscale * h.lengthscale)).exp()
        }
    }
}

pub(crate) fn unit_eval(kind: KernelKind, h: &KernelHyper, x: f64, xp: f64) -> f64 {
    match kind {
        KernelKind::Single(a) => base_eval(a, h, x, xp),
        KernelKind::Product(a, b) => base_eval(a, h, x, xp) * base_eval(b, h, x, xp),
    }
}

/// Derivatives with respect to `(c, log ι, log p)`.
fn base_grad(b: BaseKernel, h: &KernelHyper, x: f64, xp: f64) -> [f64; 3] {
    match b {
        BaseKernel::Linear => [2.0 * h.offset - x - xp, 0.0, 0.0],
        BaseKernel::Gaussian => {
            let d = x - xp;
            let l2 = h.lengthscale * h.lengthscale;
            let k = (-d * d / (2.0 * l2)).exp();
            [0.0, k * d * d / l2, 0.0]
        }
        BaseKernel::Periodic => {
            let u = PI * (x - xp) / h.period;
            let s = u.sin();
            let l2 = h.lengthscale * h.lengthscale;
            let k = (-2.0 * s * s / l2).exp();
            [0.0, k * 4.0 * s * s / l2, k * 2.0 / l2 * u * (2.0 * u).sin()]
        }
    }
}

pub(crate) fn unit_grad(kind: KernelKind, h: &KernelHyper, x: f64, xp: f64) -> [f64; 3] {
    match kind {
        KernelKind::Single(a) => base_grad(a, h, x, xp),
        KernelKind::Product(a, b) => {
            let (ka, kb) = (base_eval(a, h, x, xp), base_eval(b, h, x, xp));
            let (ga, gb) = (base_grad(a, h, x, xp), base_grad(b, h, x, xp));
            [0, 1, 2].map(|i| ga[i] * kb + ka * gb[i])
        }
    }
}

/// Predefined libraries.
pub mod library {
    use super::BaseKernel::{Gaussian as G, Linear as L, Periodic as P};
    use super::KernelKind::{self, Product, Single};

    /// `{k_g, k_p, k_gp}`.
    pub fn pde() -> Vec<KernelKind> {
        vec![Single(G), Single(P), Product(G, P)]
    }

    /// `{k_g, k_l, k_gl}`.
    pub fn sylvester() -> Vec<KernelKind> {
        vec![Single(G), Single(L), Product(G, L)]
    }

    /// `{k_l, k_g, k_p, k_ll, k_lg, k_lp, k_gp}`.
    pub fn full() -> Vec<KernelKind> {
        vec![
            Single(L),
            Single(G),
            Single(P),
            Product(L, L),
            Product(L, G),
            Product(L, P),
            Product(G, P),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: &str, s: f64) -> KernelSpec {
        KernelSpec::new(
            kind.parse().unwrap(),
            s,
            KernelHyper {
                offset: 0.0,
                lengthscale: 0.7,
                period: 1.3,
            },
        )
        .unwrap()
    }

    #[test]
    fn closed_forms() {
        assert_eq!(kernel_eval(&spec("g", 2.5), 0.4, 0.4), 2.5);
        assert!((kernel_eval(&spec("p", 1.7), 0.2, 0.2 + 1.3) - 1.7).abs() < 1e-12);
        assert!((kernel_eval(&spec("l", 3.0), 2.0, 3.0) - 18.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_in_arguments() {
        for k in library::full() {
            let s = KernelSpec::new(k, 1.2, KernelHyper { offset: 0.3, lengthscale: 0.5, period: 0.9 }).unwrap();
            for &(a, b) in &[(0.1, 0.8), (-1.0, 2.0), (0.0, 0.33)] {
                assert_eq!(kernel_eval(&s, a, b), kernel_eval(&s, b, a));
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let h = KernelHyper { offset: 0.2, lengthscale: 0.6, period: 0.8 };
        let eps = 1e-6;
        for k in library::full() {
            let g = unit_grad(k, &h, 0.3, 0.75);
            let mut hp = h;
            hp.offset += eps;
            let mut hm = h;
            hm.offset -= eps;
            let fd_c = (unit_eval(k, &hp, 0.3, 0.75) - unit_eval(k, &hm, 0.3, 0.75)) / (2.0 * eps);
            let (mut hp, mut hm) = (h, h);
            hp.lengthscale *= eps.exp();
            hm.lengthscale *= (-eps).exp();
            let fd_l = (unit_eval(k, &hp, 0.3, 0.75) - unit_eval(k, &hm, 0.3, 0.75)) / (2.0 * eps);
            let (mut hp, mut hm) = (h, h);
            hp.period *= eps.exp();
            hm.period *= (-eps).exp();
            let fd_p = (unit_eval(k, &hp, 0.3, 0.75) - unit_eval(k, &hm, 0.3, 0.75)) / (2.0 * eps);
            for (a, b) in g.iter().zip([fd_c, fd_l, fd_p]) {
                assert!((a - b).abs() < 1e-7, "{k}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn names_round_trip() {
        for k in library::full() {
            assert_eq!(k.name().parse::<KernelKind>().unwrap(), k);
        }
        assert!("x".parse::<KernelKind>().is_err());
        assert!("gpl".parse::<KernelKind>().is_err());
    }
}
