//! Benchmark tables: one row per (problem instance, method).

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bvm::AssembledSystem;
use crate::error::{Error, Result};
use crate::mtgpr::MtgpModel;
use crate::pipeline::{predict_records, traverse_optimal, Family, Provenance, SearchGrid, SearchStrategy};
use crate::problems::{points_for_h, steps_for_tau, ProblemKind, SYLVESTER_TAU};
use crate::solvers::{gmres_solve, mskp_solve, pgmres_mskp, SolveReport, SolverConfig, SplitParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "KPS")]
    Kps,
    #[serde(rename = "GKPS")]
    Gkps,
    #[serde(rename = "MSKP")]
    Mskp,
    #[serde(rename = "GMRES")]
    Gmres,
    #[serde(rename = "GMRES-GKPS")]
    GmresGkps,
    #[serde(rename = "GMRES-MSKP")]
    GmresMskp,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Kps,
        Method::Gkps,
        Method::Mskp,
        Method::Gmres,
        Method::GmresGkps,
        Method::GmresMskp,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Kps => "KPS",
            Method::Gkps => "GKPS",
            Method::Mskp => "MSKP",
            Method::Gmres => "GMRES",
            Method::GmresGkps => "GMRES-GKPS",
            Method::GmresMskp => "GMRES-MSKP",
        }
    }

    /// The splitting whose parameters this method uses, if any.
    pub fn family(&self) -> Option<Family> {
        match self {
            Method::Kps => Some(Family::Kps),
            Method::Gkps | Method::GmresGkps => Some(Family::Gkps),
            Method::Mskp | Method::GmresMskp => Some(Family::Mskp),
            Method::Gmres => None,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Runs one method. Splitting methods need `params`; GMRES ignores them.
pub fn run_method(sys: &AssembledSystem, method: Method, params: Option<SplitParams>, cfg: &SolverConfig) -> Result<SolveReport> {
    let need = || params.ok_or_else(|| Error::InvalidArgument(format!("{method} needs splitting parameters")));
    Ok(match method {
        Method::Gmres => gmres_solve(sys, &sys.rhs, cfg)?.1,
        Method::Kps => {
            let p = need()?;
            mskp_solve(sys, SplitParams::kps(p.alpha)?, cfg)?.1
        }
        Method::Gkps => {
            let p = need()?;
            mskp_solve(sys, SplitParams::gkps(p.alpha, p.beta)?, cfg)?.1
        }
        Method::Mskp => mskp_solve(sys, need()?, cfg)?.1,
        Method::GmresGkps => {
            let p = need()?;
            pgmres_mskp(sys, SplitParams::gkps(p.alpha, p.beta)?, cfg)?.1
        }
        Method::GmresMskp => pgmres_mskp(sys, need()?, cfg)?.1,
    })
}

/// One problem instance of a table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub problem: ProblemKind,
    /// Interior points per direction (PDE) or `n0` (Sylvester).
    pub n: usize,
    /// Time steps.
    pub m: usize,
    pub tau: f64,
    pub seed: u64,
}

impl Instance {
    /// PDE instance from `h` and `τ`.
    pub fn pde(problem: ProblemKind, h: f64, tau: f64) -> Result<Self> {
        Ok(Instance {
            problem,
            n: points_for_h(h)?,
            m: steps_for_tau(tau)?,
            tau,
            seed: 0,
        })
    }

    pub fn sylvester(n0: usize, seed: u64) -> Result<Self> {
        Ok(Instance {
            problem: ProblemKind::Sylvester,
            n: n0,
            m: steps_for_tau(SYLVESTER_TAU)?,
            tau: SYLVESTER_TAU,
            seed,
        })
    }

    pub fn system(&self) -> Result<AssembledSystem> {
        crate::problems::build(self.problem, self.n, self.seed)?.assemble(self.m, self.tau)
    }

    /// Key the parameter models regress on: `m` for PDEs, `n0²` for Sylvester.
    pub fn size_key(&self) -> usize {
        match self.problem {
            ProblemKind::Sylvester => self.n * self.n,
            _ => self.m,
        }
    }
}

/// Where a method's splitting parameters come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamSource {
    Fixed(SplitParams),
    /// Searched on the instance itself.
    Traversed(SearchStrategy),
    /// Posterior mean of a persisted three-task model.
    Model(PathBuf),
}

#[derive(Debug, Clone)]
pub struct BenchSpec {
    pub id: String,
    pub instances: Vec<Instance>,
    pub methods: Vec<Method>,
    pub kps: ParamSource,
    pub gkps: ParamSource,
    pub mskp: ParamSource,
    pub solver: SolverConfig,
}

impl BenchSpec {
    pub fn new(id: &str, instances: Vec<Instance>) -> Self {
        BenchSpec {
            id: id.to_string(),
            instances,
            methods: Method::ALL.to_vec(),
            kps: ParamSource::Traversed(SearchStrategy::Exhaustive),
            gkps: ParamSource::Traversed(SearchStrategy::Compass),
            mskp: ParamSource::Traversed(SearchStrategy::Compass),
            solver: SolverConfig::default().with_direct_inner(),
        }
    }

    /// Predefined tables. `table8` takes its `n0` values from `n0`, the
    /// others ignore it.
    pub fn table(id: &str, n0: &[usize], seeds: &[u64]) -> Result<Self> {
        use ProblemKind::{ConvDiff, Diffusion};
        let grid = |p: ProblemKind, hs: &[f64], taus: &[f64]| -> Result<Vec<Instance>> {
            let mut v = Vec::new();
            for &tau in taus {
                for &h in hs {
                    v.push(Instance::pde(p, h, tau)?);
                }
            }
            Ok(v)
        };
        let full = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0];
        let instances = match id {
            "table3-small" => grid(Diffusion, &[1.0 / 16.0], &[1.0 / 16.0])?,
            "table3-32" => grid(Diffusion, &[1.0 / 32.0], &[1.0 / 32.0])?,
            "table3" => grid(Diffusion, &full, &full)?,
            "table5-small" => grid(ConvDiff, &[1.0 / 16.0], &[1.0 / 16.0])?,
            "table5" => grid(ConvDiff, &full, &full)?,
            "table8" => {
                let n0s = if n0.is_empty() { &[4, 6, 8][..] } else { n0 };
                let seeds = if seeds.is_empty() { &[0, 1, 2, 3, 4][..] } else { seeds };
                let mut v = Vec::new();
                for &k in n0s {
                    for &s in seeds {
                        v.push(Instance::sylvester(k, s)?);
                    }
                }
                v
            }
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown table `{other}`; expected one of {}",
                    TABLE_IDS.join(", ")
                )))
            }
        };
        Ok(BenchSpec::new(id, instances))
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        for src in [&self.kps, &self.gkps, &self.mskp] {
            if let ParamSource::Fixed(p) = src {
                p.validate()?;
            }
        }
        Ok(())
    }

    fn source(&self, f: Family) -> &ParamSource {
        match f {
            Family::Kps => &self.kps,
            Family::Gkps => &self.gkps,
            Family::Mskp => &self.mskp,
        }
    }
}

pub const TABLE_IDS: [&str; 6] = ["table3-small", "table3-32", "table3", "table5-small", "table5", "table8"];

/// One result row. Column names are fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: Method,
    pub problem: ProblemKind,
    pub n: usize,
    pub m: usize,
    pub tau: f64,
    pub seed: u64,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub omega: Option<f64>,
    pub iterations: Option<usize>,
    pub final_res: Option<f64>,
    pub wall_time_s: f64,
    pub converged: bool,
    pub error: Option<String>,
}

pub const BENCH_COLUMNS: [&str; 14] = [
    "method",
    "problem",
    "n",
    "m",
    "tau",
    "seed",
    "alpha",
    "beta",
    "omega",
    "iterations",
    "final_res",
    "wall_time_s",
    "converged",
    "error",
];

fn resolve(spec: &BenchSpec, inst: &Instance, sys: &AssembledSystem, family: Family) -> Result<SplitParams> {
    match spec.source(family) {
        ParamSource::Fixed(p) => Ok(match family {
            Family::Kps => SplitParams::kps(p.alpha)?,
            Family::Gkps => SplitParams::gkps(p.alpha, p.beta)?,
            Family::Mskp => *p,
        }),
        ParamSource::Traversed(strategy) => {
            let grid = SearchGrid::new(family, *strategy);
            let t = traverse_optimal(sys, inst.size_key(), &grid, &spec.solver)?;
            t.record.params()
        }
        ParamSource::Model(path) => {
            let model = MtgpModel::load(path)?;
            let grid = SearchGrid::new(family, SearchStrategy::Compass);
            let rec = predict_records(&model, &[inst.size_key()], &grid, Provenance::Predicted)?[0];
            Ok(match family {
                Family::Kps => SplitParams::kps(rec.alpha)?,
                Family::Gkps => SplitParams::gkps(rec.alpha, rec.beta)?,
                Family::Mskp => rec.params()?,
            })
        }
    }
}

fn run_instance(spec: &BenchSpec, inst: &Instance) -> Vec<BenchRow> {
    let blank = |method: Method| BenchRow {
        method,
        problem: inst.problem,
        n: inst.n,
        m: inst.m,
        tau: inst.tau,
        seed: inst.seed,
        alpha: None,
        beta: None,
        omega: None,
        iterations: None,
        final_res: None,
        wall_time_s: 0.0,
        converged: false,
        error: None,
    };
    let sys = match inst.system() {
        Ok(s) => s,
        Err(e) => {
            return spec
                .methods
                .iter()
                .map(|&m| BenchRow {
                    error: Some(e.to_string()),
                    ..blank(m)
                })
                .collect()
        }
    };
    let mut resolved: Vec<(Family, Result<SplitParams>)> = Vec::new();
    let mut rows = Vec::with_capacity(spec.methods.len());
    for &method in &spec.methods {
        let mut row = blank(method);
        let params = match method.family() {
            None => Ok(None),
            Some(f) => {
                if !resolved.iter().any(|(g, _)| *g == f) {
                    resolved.push((f, resolve(spec, inst, &sys, f)));
                }
                match &resolved.iter().find(|(g, _)| *g == f).expect("just inserted").1 {
                    Ok(p) => Ok(Some(*p)),
                    Err(e) => Err(e.to_string()),
                }
            }
        };
        match params {
            Err(e) => row.error = Some(e),
            Ok(p) => {
                if let Some(p) = p {
                    row.alpha = Some(p.alpha);
                    row.beta = Some(p.beta);
                    row.omega = Some(p.omega);
                }
                let t = Instant::now();
                match run_method(&sys, method, p, &spec.solver) {
                    Ok(rep) => {
                        row.iterations = Some(rep.iterations);
                        row.final_res = Some(rep.final_residual());
                        row.converged = rep.converged;
                    }
                    Err(e) => row.error = Some(e.to_string()),
                }
                row.wall_time_s = t.elapsed().as_secs_f64();
            }
        }
        rows.push(row);
    }
    rows
}

/// Runs every method on every instance. Failures are recorded in their
/// rows; rows keep instance-then-method order.
pub fn run_bench(spec: &BenchSpec) -> Result<Vec<BenchRow>> {
    spec.validate()?;
    if spec.methods.is_empty() {
        return Ok(Vec::new());
    }
    let per_instance: Vec<Vec<BenchRow>> = spec.instances.par_iter().map(|inst| run_instance(spec, inst)).collect();
    Ok(per_instance.into_iter().flatten().collect())
}

pub fn write_bench_csv<W: Write>(w: W, rows: &[BenchRow]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(BENCH_COLUMNS)?;
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("sor".parse::<Method>().is_err());
    }

    #[test]
    fn table_instances() {
        let t = BenchSpec::table("table3-small", &[], &[]).unwrap();
        assert_eq!(t.instances.len(), 1);
        assert_eq!((t.instances[0].n, t.instances[0].m), (15, 16));
        let t8 = BenchSpec::table("table8", &[4], &[]).unwrap();
        assert_eq!(t8.instances.len(), 5);
        assert_eq!(t8.instances[0].size_key(), 16);
        assert_eq!(t8.instances[0].m, 10);
        assert!(BenchSpec::table("table9", &[], &[]).is_err());
    }

    #[test]
    fn empty_method_list_gives_empty_table() {
        let mut spec = BenchSpec::table("table3-small", &[], &[]).unwrap();
        spec.methods.clear();
        let rows = run_bench(&spec).unwrap();
        assert!(rows.is_empty());
        let mut buf = Vec::new();
        write_bench_csv(&mut buf, &rows).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim(), BENCH_COLUMNS.join(","));
    }

    #[test]
    fn header_matches_row_fields() {
        let row = BenchRow {
            method: Method::Gmres,
            problem: ProblemKind::Diffusion,
            n: 3,
            m: 6,
            tau: 0.5,
            seed: 0,
            alpha: None,
            beta: None,
            omega: None,
            iterations: Some(4),
            final_res: Some(1e-7),
            wall_time_s: 0.1,
            converged: true,
            error: None,
        };
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(&row).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert_eq!(text.lines().next().unwrap(), BENCH_COLUMNS.join(","));
    }

    #[test]
    fn failed_resolution_is_recorded_in_row() {
        let inst = Instance::pde(ProblemKind::Diffusion, 1.0 / 5.0, 1.0 / 6.0).unwrap();
        let mut spec = BenchSpec::new("t", vec![inst]);
        spec.methods = vec![Method::Mskp, Method::Gmres];
        spec.mskp = ParamSource::Model(PathBuf::from("/nonexistent/model.json"));
        let rows = run_bench(&spec).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].error.is_some() && !rows[0].converged);
        assert!(rows[1].converged);
    }
}
