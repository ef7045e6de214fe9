//! Multitask kernel learning workflow: traversal on small systems, model
//! training, prediction at large sizes and retraining.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bvm::AssembledSystem;
use crate::error::{Error, Result};
use crate::mtgpr::kernel::{library, KernelKind};
use crate::mtgpr::{train_from, MtgpModel, Prediction, RestartOutcome, TrainOptions};
use crate::problems::{self, ProblemKind, SYLVESTER_TAU};
use crate::solvers::{mskp_solve, SolveReport, SolverConfig, SplitParams};

pub const TASK_NAMES: [&str; 3] = ["alpha", "beta", "omega"];

/// Largest `ω` kept after clamping a prediction into `[0, 2)`.
pub const OMEGA_CLAMP: f64 = 1.99;

/// Which parameters a traversal is free to move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// `α = β`, `ω = 0`.
    Kps,
    /// `ω = 0`.
    Gkps,
    Mskp,
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kps" => Ok(Family::Kps),
            "gkps" => Ok(Family::Gkps),
            "mskp" => Ok(Family::Mskp),
            other => Err(Error::InvalidArgument(format!("unknown parameter family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchStrategy {
    /// Every coarse point over the box, then every fine point in the cell
    /// around the coarse optimum.
    Exhaustive,
    /// A sparse seed grid followed by compass search on a fractional
    /// iteration count, first on coarse steps, then on fine steps inside
    /// the refinement cell.
    Compass,
}

impl std::str::FromStr for SearchStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exhaustive" => Ok(SearchStrategy::Exhaustive),
            "compass" => Ok(SearchStrategy::Compass),
            other => Err(Error::InvalidArgument(format!("unknown search strategy `{other}`"))),
        }
    }
}

/// The parameter box and its discretization. `α ∈ (0, alpha_max]`,
/// `β ∈ (0, beta_max]`, `ω ∈ [0, omega_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub family: Family,
    pub strategy: SearchStrategy,
    pub alpha_max: f64,
    pub beta_max: f64,
    pub omega_max: f64,
    pub coarse_step: f64,
    pub fine_step: f64,
    /// Half-width of the refinement cell in each coordinate.
    pub fine_radius: f64,
    /// Outer iteration cap per trial solve.
    pub max_outer: usize,
}

impl Default for SearchGrid {
    fn default() -> Self {
        SearchGrid {
            family: Family::Mskp,
            strategy: SearchStrategy::Compass,
            alpha_max: 5.0,
            beta_max: 5.0,
            omega_max: 2.0,
            coarse_step: 0.1,
            fine_step: 0.01,
            fine_radius: 0.1,
            max_outer: 500,
        }
    }
}

impl SearchGrid {
    pub fn new(family: Family, strategy: SearchStrategy) -> Self {
        SearchGrid {
            family,
            strategy,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ratio = self.coarse_step / self.fine_step;
        let ok = self.fine_step > 0.0
            && self.coarse_step >= self.fine_step
            && (ratio - ratio.round()).abs() < 1e-9
            && self.alpha_max >= self.coarse_step
            && self.beta_max >= self.coarse_step
            && self.omega_max > 0.0
            && self.omega_max <= 2.0
            && self.fine_radius >= 0.0
            && self.max_outer > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid search grid {self:?}")))
        }
    }

    fn units(&self, v: f64) -> i64 {
        (v / self.fine_step + 1e-9).floor() as i64
    }

    fn ratio(&self) -> i64 {
        (self.coarse_step / self.fine_step).round() as i64
    }

    fn limits(&self) -> Limits {
        let omega_hi = {
            let u = self.units(self.omega_max);
            if (u as f64 * self.fine_step - self.omega_max).abs() < 1e-9 {
                u - 1
            } else {
                u
            }
        };
        Limits {
            alpha: (1, self.units(self.alpha_max)),
            beta: (1, self.units(self.beta_max)),
            omega: (0, if self.family == Family::Mskp { omega_hi } else { 0 }),
        }
    }

    fn point(&self, p: Point) -> SplitParams {
        let (a, b, w) = self.to_values(p);
        SplitParams {
            alpha: a,
            beta: b,
            omega: w,
        }
    }

    fn to_values(&self, p: Point) -> (f64, f64, f64) {
        let s = self.fine_step;
        let beta = if self.family == Family::Kps { p.0 } else { p.1 };
        // dividing by an integral 1/s keeps 0.47 from printing as 0.47000000000000003
        let inv = (1.0 / s).round();
        let conv = |u: i64| if (inv * s - 1.0).abs() < 1e-12 { u as f64 / inv } else { u as f64 * s };
        (conv(p.0), conv(beta), conv(p.2))
    }
}

/// Grid point in units of the fine step.
type Point = (i64, i64, i64);

#[derive(Debug, Clone, Copy)]
struct Limits {
    alpha: (i64, i64),
    beta: (i64, i64),
    omega: (i64, i64),
}

impl Limits {
    fn contains(&self, p: Point) -> bool {
        (self.alpha.0..=self.alpha.1).contains(&p.0)
            && (self.beta.0..=self.beta.1).contains(&p.1)
            && (self.omega.0..=self.omega.1).contains(&p.2)
    }

    fn shrink_to(&self, centre: Point, radius: i64) -> Limits {
        let clip = |(lo, hi): (i64, i64), c: i64| ((c - radius).max(lo), (c + radius).min(hi));
        Limits {
            alpha: clip(self.alpha, centre.0),
            beta: clip(self.beta, centre.1),
            omega: clip(self.omega, centre.2),
        }
    }
}

/// Iterations to reach the tolerance, interpolated inside the last step.
/// Distinguishes points with equal integer counts.
pub fn fractional_iterations(report: &SolveReport, tolerance: f64) -> f64 {
    let h = &report.residual_history;
    let k = report.iterations;
    if k == 0 || h.len() < k + 1 {
        return k as f64;
    }
    let (prev, last) = (h[k - 1], h[k]);
    if !(prev > tolerance) || !(last > 0.0) || !(prev > last) {
        return k as f64;
    }
    (k - 1) as f64 + ((prev / tolerance).ln() / (prev / last).ln()).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Eval {
    iterations: usize,
    fractional: f64,
}

struct Search<'a> {
    sys: &'a AssembledSystem,
    grid: &'a SearchGrid,
    cfg: SolverConfig,
    cache: BTreeMap<Point, Option<Eval>>,
    best: Option<(usize, Point)>,
}

impl<'a> Search<'a> {
    fn cap(&self) -> usize {
        self.best.map_or(self.grid.max_outer, |(k, _)| k.min(self.grid.max_outer))
    }

    /// Solves at `p` unless cached. A point that does not converge within
    /// the current best count is recorded as `None`.
    fn eval(&mut self, p: Point) -> Result<Option<Eval>> {
        let p = self.canonical(p);
        if let Some(e) = self.cache.get(&p) {
            return Ok(*e);
        }
        let cfg = self.cfg.clone().with_max_outer(self.cap());
        let (_, report) = mskp_solve(self.sys, self.grid.point(p), &cfg)?;
        let e = report.converged.then(|| Eval {
            iterations: report.iterations,
            fractional: fractional_iterations(&report, cfg.outer_tolerance),
        });
        if let Some(e) = e {
            let better = match self.best {
                None => true,
                Some((k, q)) => (e.iterations, p) < (k, q),
            };
            if better {
                self.best = Some((e.iterations, p));
            }
        }
        self.cache.insert(p, e);
        Ok(e)
    }

    fn canonical(&self, p: Point) -> Point {
        match self.grid.family {
            Family::Kps => (p.0, p.0, 0),
            Family::Gkps => (p.0, p.1, 0),
            Family::Mskp => p,
        }
    }

    fn axes(&self) -> Vec<Point> {
        let mut v = vec![(1, 0, 0)];
        if self.grid.family != Family::Kps {
            v.extend([(0, 1, 0), (1, 1, 0), (1, -1, 0)]);
        }
        if self.grid.family == Family::Mskp {
            v.push((0, 0, 1));
        }
        v
    }

    /// Points of `lim` on the lattice `offset + k·step`, per axis.
    fn box_points(&self, lim: &Limits, step: Point, offset: Point) -> Vec<Point> {
        let along = |(lo, hi): (i64, i64), s: i64, o: i64| -> Vec<i64> {
            let first = lo + (o - lo).rem_euclid(s);
            (first..=hi).step_by(s as usize).collect()
        };
        let alphas = along(lim.alpha, step.0, offset.0);
        let betas = if self.grid.family == Family::Kps { vec![0] } else { along(lim.beta, step.1, offset.1) };
        let omegas = if self.grid.family == Family::Mskp { along(lim.omega, step.2, offset.2) } else { vec![0] };
        let mut pts = Vec::with_capacity(alphas.len() * betas.len() * omegas.len());
        for &a in &alphas {
            for &b in &betas {
                for &w in &omegas {
                    pts.push(self.canonical((a, b, w)));
                }
            }
        }
        pts
    }

    fn exhaustive(&mut self) -> Result<Option<usize>> {
        let lim = self.grid.limits();
        let r = self.grid.ratio();
        for p in self.box_points(&lim, (r, r, r), (0, 0, 0)) {
            self.eval(p)?;
        }
        let coarse = self.best.map(|b| b.0);
        if let Some((_, centre)) = self.best {
            let cell = lim.shrink_to(centre, self.grid.units(self.grid.fine_radius).max(0));
            for p in self.box_points(&cell, (1, 1, 1), centre) {
                self.eval(p)?;
            }
        }
        Ok(coarse)
    }

    /// Geometrically spaced starting points, snapped to the coarse grid.
    fn seeds(&self, lim: &Limits) -> Vec<Point> {
        let r = self.grid.ratio();
        let snap = |v: f64| (self.grid.units(v) as f64 / r as f64).round() as i64 * r;
        let along = |vals: &[f64], (lo, hi): (i64, i64)| -> Vec<i64> {
            let mut u: Vec<i64> = vals.iter().map(|&v| snap(v)).filter(|u| (lo..=hi).contains(u)).collect();
            u.dedup();
            u
        };
        const AB: [f64; 9] = [0.2, 0.4, 0.7, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0];
        let alphas = along(&AB, lim.alpha);
        let betas = if self.grid.family == Family::Kps { vec![0] } else { along(&AB, lim.beta) };
        let omegas = if self.grid.family == Family::Mskp { along(&[0.0, 0.5, 1.0, 1.5], lim.omega) } else { vec![0] };
        let mut pts = Vec::new();
        for &a in &alphas {
            for &b in &betas {
                for &w in &omegas {
                    pts.push(self.canonical((a, b, w)));
                }
            }
        }
        pts
    }

    fn compass(&mut self) -> Result<Option<usize>> {
        let lim = self.grid.limits();
        let r = self.grid.ratio();
        let mut seeds = self.seeds(&lim);
        if seeds.is_empty() {
            seeds = self.box_points(&lim, (r, r, r), (0, 0, 0));
        }
        for p in seeds {
            self.eval(p)?;
        }
        if self.best.is_none() {
            // nothing converged on the sparse seed: fall back to the full coarse grid
            for p in self.box_points(&lim, (r, r, r), (0, 0, 0)) {
                self.eval(p)?;
            }
        }
        let Some((_, start)) = self.best else {
            return Ok(None);
        };
        let coarse_centre = self.pattern(start, &lim, &[8 * r, 4 * r, 2 * r, r])?;
        let coarse = self.best.map(|b| b.0);
        let cell = lim.shrink_to(coarse_centre, self.grid.units(self.grid.fine_radius).max(0));
        let fine: Vec<i64> = [5, 2, 1].into_iter().filter(|s| *s < r.max(2)).collect();
        self.pattern(coarse_centre, &cell, &fine)?;
        Ok(coarse)
    }

    /// Compass search minimizing the fractional iteration count.
    fn pattern(&mut self, start: Point, lim: &Limits, steps: &[i64]) -> Result<Point> {
        let axes = self.axes();
        let score = |e: Option<Eval>| e.map_or(f64::INFINITY, |e| e.fractional);
        let mut here = start;
        let mut here_score = score(self.eval(here)?);
        for &s in steps {
            loop {
                let mut next = None;
                for ax in &axes {
                    for sign in [-1, 1] {
                        let q = (here.0 + sign * s * ax.0, here.1 + sign * s * ax.1, here.2 + sign * s * ax.2);
                        if !lim.contains(q) {
                            continue;
                        }
                        let v = score(self.eval(q)?);
                        if v < here_score - 1e-9 && next.map_or(true, |(_, nv)| v < nv) {
                            next = Some((q, v));
                        }
                    }
                }
                match next {
                    Some((q, v)) => {
                        here = self.canonical(q);
                        here_score = v;
                    }
                    None => break,
                }
            }
        }
        Ok(here)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Traversed,
    Predicted,
    Retrained,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Provenance::Traversed => "traversed",
            Provenance::Predicted => "predicted",
            Provenance::Retrained => "retrained",
        })
    }
}

/// Optimal or predicted parameters at one size key (`m` for the PDE
/// problems, `n` for Sylvester).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub size: usize,
    pub alpha: f64,
    pub beta: f64,
    pub omega: f64,
    /// Outer iterations achieved; absent for predictions that were not run.
    pub iterations: Option<usize>,
    pub provenance: Provenance,
}

impl ParamRecord {
    pub fn params(&self) -> Result<SplitParams> {
        SplitParams::new(self.alpha, self.beta, self.omega)
    }
}

/// Result of one traversal.
#[derive(Debug, Clone)]
pub struct Traversal {
    pub record: ParamRecord,
    /// Trial solves performed.
    pub evaluations: usize,
    /// Best count after the coarse stage alone.
    pub coarse_iterations: usize,
}

/// Searches the grid for the parameters minimizing the MSKP outer iteration
/// count on `sys`. Ties go to the lexicographically smallest `(α, β, ω)`
/// among the evaluated points.
pub fn traverse_optimal(sys: &AssembledSystem, size: usize, grid: &SearchGrid, cfg: &SolverConfig) -> Result<Traversal> {
    grid.validate()?;
    cfg.validate()?;
    let mut search = Search {
        sys,
        grid,
        cfg: cfg.clone(),
        cache: BTreeMap::new(),
        best: None,
    };
    let coarse_iterations = match grid.strategy {
        SearchStrategy::Exhaustive => search.exhaustive()?,
        SearchStrategy::Compass => search.compass()?,
    };
    let (iterations, p) = search.best.ok_or(Error::NoConvergingPoint { size })?;
    let (alpha, beta, omega) = grid.to_values(p);
    debug!("size {size}: {} evaluations, best {iterations} at ({alpha}, {beta}, {omega})", search.cache.len());
    Ok(Traversal {
        record: ParamRecord {
            size,
            alpha,
            beta,
            omega,
            iterations: Some(iterations),
            provenance: Provenance::Traversed,
        },
        evaluations: search.cache.len(),
        coarse_iterations: coarse_iterations.unwrap_or(iterations),
    })
}

/// How to build the system at a size key.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemSetup {
    pub kind: ProblemKind,
    /// Interior points per direction for the PDE problems; unused for Sylvester.
    pub space_points: usize,
    /// Sylvester time step; the PDE problems use `τ = 1/m`.
    pub tau: f64,
    pub seed: u64,
}

impl ProblemSetup {
    pub fn diffusion(space_points: usize) -> Self {
        ProblemSetup {
            kind: ProblemKind::Diffusion,
            space_points,
            tau: 0.0,
            seed: 0,
        }
    }

    pub fn convdiff(space_points: usize) -> Self {
        ProblemSetup {
            kind: ProblemKind::ConvDiff,
            ..Self::diffusion(space_points)
        }
    }

    pub fn sylvester(seed: u64) -> Self {
        ProblemSetup {
            kind: ProblemKind::Sylvester,
            space_points: 0,
            tau: SYLVESTER_TAU,
            seed,
        }
    }

    /// For the PDE problems `size` is the number of time steps `m`; for
    /// Sylvester it is the matrix order `n`, which must be a perfect square.
    pub fn system(&self, size: usize) -> Result<AssembledSystem> {
        match self.kind {
            ProblemKind::Diffusion | ProblemKind::ConvDiff => {
                if size == 0 {
                    return Err(Error::InvalidArgument("number of time steps must be positive".into()));
                }
                problems::build(self.kind, self.space_points, self.seed)?.assemble(size, 1.0 / size as f64)
            }
            ProblemKind::Sylvester => {
                let n0 = (size as f64).sqrt().round() as usize;
                if n0 * n0 != size || n0 < 2 {
                    return Err(Error::InvalidArgument(format!("Sylvester size {size} is not a square n0² with n0 ≥ 2")));
                }
                problems::build(self.kind, n0, self.seed)?.assemble_unit_interval(self.tau)
            }
        }
    }

    pub fn library(&self) -> Vec<KernelKind> {
        match self.kind {
            ProblemKind::Sylvester => library::sylvester(),
            _ => library::pde(),
        }
    }
}

/// Training sizes per problem.
pub mod schedule {
    /// `10..32/2`, `36..80/4`, `88..128/8`.
    pub fn pde_training() -> Vec<usize> {
        (10..=32)
            .step_by(2)
            .chain((36..=80).step_by(4))
            .chain((88..=128).step_by(8))
            .collect()
    }

    /// `128..500/30`.
    pub fn pde_retrain() -> Vec<usize> {
        (128..=500).step_by(30).collect()
    }

    /// `1..500`.
    pub fn pde_test() -> Vec<usize> {
        (1..=500).collect()
    }

    /// `n = γ²` for `γ = 4..15`.
    pub fn sylvester_training() -> Vec<usize> {
        (4..=15).map(|g| g * g).collect()
    }

    /// `250..1200/50`.
    pub fn sylvester_retrain() -> Vec<usize> {
        (250..=1200).step_by(50).collect()
    }

    /// `1..1200`.
    pub fn sylvester_test() -> Vec<usize> {
        (1..=1200).collect()
    }
}

/// Parameter records for one problem together with the grid they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamDataset {
    pub problem: ProblemSetup,
    pub grid: SearchGrid,
    pub records: Vec<ParamRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub problem: ProblemSetup,
    pub grid: SearchGrid,
    pub dataset: PathBuf,
    pub model: Option<PathBuf>,
}

impl ParamDataset {
    pub fn new(problem: ProblemSetup, grid: SearchGrid) -> Self {
        ParamDataset {
            problem,
            grid,
            records: Vec::new(),
        }
    }

    pub fn with_provenance(&self, p: Provenance) -> impl Iterator<Item = &ParamRecord> {
        self.records.iter().filter(move |r| r.provenance == p)
    }

    /// Records used for fitting: traversed and retrained.
    pub fn training_records(&self) -> Vec<ParamRecord> {
        self.records
            .iter()
            .filter(|r| r.provenance != Provenance::Predicted)
            .copied()
            .collect()
    }

    /// Size keys strictly increase within each provenance class.
    pub fn validate(&self) -> Result<()> {
        let mut last: BTreeMap<Provenance, usize> = BTreeMap::new();
        for r in &self.records {
            if let Some(&prev) = last.get(&r.provenance) {
                if r.size <= prev {
                    return Err(Error::InvalidArgument(format!(
                        "{} sizes must increase strictly, got {} after {}",
                        r.provenance, r.size, prev
                    )));
                }
            }
            last.insert(r.provenance, r.size);
            r.params()?;
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_records(w, &self.records)
    }

    pub fn read_records<R: Read>(r: R) -> Result<Vec<ParamRecord>> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut v = Vec::new();
        for rec in rdr.deserialize() {
            v.push(rec?);
        }
        Ok(v)
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str, model: Option<&Path>) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let csv_name = PathBuf::from(format!("{stem}.csv"));
        self.write_csv(std::fs::File::create(dir.join(&csv_name))?)?;
        let manifest = DatasetManifest {
            problem: self.problem,
            grid: self.grid,
            dataset: csv_name,
            model: model.map(Path::to_path_buf),
        };
        let path = dir.join(format!("{stem}.json"));
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(path)
    }

    /// Loads from a manifest written by [`ParamDataset::save`].
    pub fn load(manifest_path: &Path) -> Result<(Self, DatasetManifest)> {
        let manifest: DatasetManifest = serde_json::from_str(&std::fs::read_to_string(manifest_path)?)?;
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let records = Self::read_records(std::fs::File::open(dir.join(&manifest.dataset))?)?;
        let ds = ParamDataset {
            problem: manifest.problem,
            grid: manifest.grid,
            records,
        };
        ds.validate()?;
        Ok((ds, manifest))
    }
}

/// Writes records with the columns `size, alpha, beta, omega, iterations,
/// provenance`.
pub fn write_records<W: Write>(w: W, records: &[ParamRecord]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(["size", "alpha", "beta", "omega", "iterations", "provenance"])?;
    for r in records {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Traverses every scheduled size. Sizes run in parallel; records keep
/// schedule order.
pub fn build_training_set(problem: ProblemSetup, grid: SearchGrid, sizes: &[usize], cfg: &SolverConfig) -> Result<ParamDataset> {
    grid.validate()?;
    let mut sorted = sizes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let results: Vec<Result<Traversal>> = sorted
        .par_iter()
        .map(|&size| {
            let wrap = |e: Error| Error::Traversal {
                size,
                source: Box::new(e),
            };
            let sys = problem.system(size).map_err(wrap)?;
            let t = traverse_optimal(&sys, size, &grid, cfg).map_err(wrap)?;
            info!(
                "size {size}: {} iterations at ({}, {}, {}) after {} solves",
                t.record.iterations.unwrap_or(0),
                t.record.alpha,
                t.record.beta,
                t.record.omega,
                t.evaluations
            );
            Ok(t)
        })
        .collect();
    let mut ds = ParamDataset::new(problem, grid);
    for r in results {
        ds.records.push(r?.record);
    }
    Ok(ds)
}

/// Clamps into `α, β ∈ [fine_step, 5]`, `ω ∈ [0, OMEGA_CLAMP]`.
pub fn clamp_params(alpha: f64, beta: f64, omega: f64, grid: &SearchGrid) -> (f64, f64, f64) {
    let fix = |v: f64, lo: f64, hi: f64| if v.is_nan() { lo } else { v.clamp(lo, hi) };
    (
        fix(alpha, grid.fine_step, grid.alpha_max),
        fix(beta, grid.fine_step, grid.beta_max),
        fix(omega, 0.0, OMEGA_CLAMP.min(grid.omega_max - grid.fine_step).max(0.0)),
    )
}

/// Trains a three-task model on the dataset's training records.
pub fn fit_model(ds: &ParamDataset, library: &[KernelKind], opts: &TrainOptions) -> Result<(MtgpModel, Vec<RestartOutcome>)> {
    fit_model_from(ds, library, opts, None)
}

/// [`fit_model`] with the first restart started from `warm`.
pub fn fit_model_from(
    ds: &ParamDataset,
    library: &[KernelKind],
    opts: &TrainOptions,
    warm: Option<&MtgpModel>,
) -> Result<(MtgpModel, Vec<RestartOutcome>)> {
    let recs = ds.training_records();
    let inputs: Vec<f64> = recs.iter().map(|r| r.size as f64).collect();
    let targets = vec![
        recs.iter().map(|r| r.alpha).collect(),
        recs.iter().map(|r| r.beta).collect(),
        recs.iter().map(|r| r.omega).collect(),
    ];
    train_from(TASK_NAMES.iter().map(|s| s.to_string()).collect(), &inputs, &targets, library, opts, warm)
}

/// Posterior means at `sizes`, clamped into the admissible box.
pub fn predict_records(model: &MtgpModel, sizes: &[usize], grid: &SearchGrid, provenance: Provenance) -> Result<Vec<ParamRecord>> {
    if model.tasks() != 3 {
        return Err(Error::InvalidArgument(format!("parameter model needs 3 tasks, has {}", model.tasks())));
    }
    let xs: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    let preds: Vec<Prediction> = model.predict_many(&xs)?;
    Ok(sizes
        .iter()
        .zip(preds)
        .map(|(&size, p)| {
            let (alpha, beta, omega) = clamp_params(p.mean[0], p.mean[1], p.mean[2], grid);
            ParamRecord {
                size,
                alpha,
                beta,
                omega,
                iterations: None,
                provenance,
            }
        })
        .collect())
}

/// Trains on `ds` and predicts `(α, β, ω)` at `sizes`. No solves are run.
pub fn mtkl_predict(ds: &ParamDataset, library: &[KernelKind], sizes: &[usize], opts: &TrainOptions) -> Result<(MtgpModel, Vec<ParamRecord>)> {
    if ds.training_records().is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    let (model, _) = fit_model(ds, library, opts)?;
    let recs = predict_records(&model, sizes, &ds.grid, Provenance::Predicted)?;
    Ok((model, recs))
}

/// How retraining obtains targets at the new sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrainMode {
    /// The current model's predictions become pseudo-observations.
    Predicted,
    /// Each new size is traversed.
    Traversed,
}

/// Appends records at `sizes` and refits. An empty schedule returns the
/// dataset and model unchanged.
pub fn retrain(
    model: &MtgpModel,
    ds: &ParamDataset,
    sizes: &[usize],
    mode: RetrainMode,
    opts: &TrainOptions,
    cfg: &SolverConfig,
) -> Result<(ParamDataset, MtgpModel)> {
    if sizes.is_empty() {
        return Ok((ds.clone(), model.clone()));
    }
    let mut sorted = sizes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut fresh = match mode {
        RetrainMode::Predicted => predict_records(model, &sorted, &ds.grid, Provenance::Retrained)?,
        RetrainMode::Traversed => build_training_set(ds.problem, ds.grid, &sorted, cfg)?.records,
    };
    fresh.iter_mut().for_each(|r| r.provenance = Provenance::Retrained);
    let mut out = ds.clone();
    out.records.retain(|r| r.provenance != Provenance::Retrained || !sorted.contains(&r.size));
    out.records.extend(fresh);
    out.records.sort_by_key(|r| (r.provenance, r.size));
    out.validate()?;
    let (new_model, _) = fit_model_from(&out, &model.library, opts, Some(model))?;
    Ok((out, new_model))
}

/// Runs MSKP at a record's parameters and returns the outer iteration count.
pub fn evaluate_record(problem: &ProblemSetup, rec: &ParamRecord, cfg: &SolverConfig) -> Result<SolveReport> {
    let sys = problem.system(rec.size)?;
    Ok(mskp_solve(&sys, rec.params()?, cfg)?.1)
}
