//! TOML configuration. Every key is optional and, when present, overrides
//! the matching flag.
//!
//! ```toml
//! tol = 1e-6
//! seed = 0
//! out = "results"
//! max_outer = 2000
//! inner = "direct"            # or "gmres"
//! inner_tol = 1e-10
//! residual_norm = "preconditioned"   # or "true"
//! strategy = "compass"        # or "exhaustive"
//! library = "pde"             # pde, sylvester, full, or "g,p,gp"
//! restarts = 5
//! train_iterations = 200
//! ```

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use mskp::bench::Instance;
use mskp::problems::ProblemKind;

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub max_outer: Option<usize>,
    pub inner: Option<String>,
    pub inner_tol: Option<f64>,
    pub residual_norm: Option<String>,
    pub strategy: Option<String>,
    pub library: Option<String>,
    pub restarts: Option<usize>,
    pub train_iterations: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Written next to the matrices by `gen`.
#[derive(Debug, Serialize)]
pub struct ProblemManifest {
    pub problem: ProblemKind,
    /// Interior points per direction, or n0 for Sylvester.
    pub n: usize,
    pub h: f64,
    pub m: usize,
    pub tau: f64,
    pub seed: u64,
}

impl ProblemManifest {
    pub fn new(inst: &Instance) -> Self {
        ProblemManifest {
            problem: inst.problem,
            n: inst.n,
            h: 1.0 / (inst.n as f64 + 1.0),
            m: inst.m,
            tau: inst.tau,
            seed: inst.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("tolerance = 1").is_err());
        let c: FileConfig = toml::from_str("tol = 1e-8\ninner = \"gmres\"").unwrap();
        assert_eq!(c.tol, Some(1e-8));
        assert_eq!(c.inner.as_deref(), Some("gmres"));
    }
}
