use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use mskp::bench::{run_bench, run_method, write_bench_csv, BenchRow, BenchSpec, Instance, Method, ParamSource};
use mskp::mtgpr::kernel::{library, KernelKind};
use mskp::mtgpr::{write_prediction_csv, MtgpModel, TrainOptions};
use mskp::pipeline::{
    build_training_set, fit_model, predict_records, retrain, schedule, write_records, Family, ParamDataset,
    ProblemSetup, Provenance, RetrainMode, SearchGrid, SearchStrategy,
};
use mskp::problems::{points_for_h, steps_for_tau, ProblemKind, SYLVESTER_TAU};
use mskp::solvers::{InnerSolver, ResidualNorm, SolverConfig, SplitParams};
use mskp::spectral::{self, SpectrumTag};

mod config;

use config::FileConfig;

#[derive(Parser, Debug)]
#[command(name = "mskp", version, about = "Kronecker splitting solvers and learned splitting parameters")]
struct Cli {
    /// Outer relative residual tolerance.
    #[arg(long, global = true, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory for every output file.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// TOML file whose keys override the flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the matrices and right-hand side of a problem instance.
    Gen(ProblemArgs),
    /// Run one method with explicit parameters.
    Solve(SolveArgs),
    /// Search optimal parameters at each requested size.
    Traverse(TraverseArgs),
    /// Fit a parameter model to a traversed dataset.
    Train(TrainArgs),
    /// Predict parameters at new sizes from a saved model.
    Predict(PredictArgs),
    /// Add records at new sizes and refit.
    Retrain(RetrainArgs),
    /// Reproduce a results table as CSV.
    Bench(BenchArgs),
    /// Export eigenvalues of Q or of the preconditioned operator.
    EigExport(EigArgs),
    /// Evaluate the convergence bound at given parameters.
    Bound(BoundArgs),
}

#[derive(Args, Debug, Clone)]
struct ProblemArgs {
    #[arg(long, default_value = "diffusion")]
    problem: ProblemKind,
    /// Interior points per direction (PDE) or n0 (Sylvester).
    #[arg(long)]
    n: Option<usize>,
    /// Mesh size, used when --n is absent.
    #[arg(long)]
    h: Option<f64>,
    /// Number of time steps.
    #[arg(long)]
    m: Option<usize>,
    /// Time step, used when --m is absent. PDE default: equal to h.
    #[arg(long)]
    tau: Option<f64>,
}

impl ProblemArgs {
    fn instance(&self, seed: u64) -> Result<Instance> {
        let n = match (self.n, self.h) {
            (Some(n), _) => n,
            (None, Some(h)) => points_for_h(h)?,
            (None, None) => bail!("give --n or --h"),
        };
        let tau = match (self.m, self.tau) {
            (Some(m), _) if self.problem != ProblemKind::Sylvester => 1.0 / m as f64,
            (Some(m), Some(t)) => {
                if (t * m as f64 - 1.0).abs() > 1e-9 {
                    bail!("--m and --tau disagree");
                }
                t
            }
            (Some(m), None) => 1.0 / m as f64,
            (None, Some(t)) => t,
            (None, None) if self.problem == ProblemKind::Sylvester => SYLVESTER_TAU,
            (None, None) => 1.0 / (n as f64 + 1.0),
        };
        let m = match self.m {
            Some(m) => m,
            None => steps_for_tau(tau)?,
        };
        Ok(Instance {
            problem: self.problem,
            n,
            m,
            tau,
            seed,
        })
    }
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long)]
    method: Method,
    #[arg(long)]
    alpha: Option<f64>,
    /// Defaults to alpha.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    omega: f64,
}

#[derive(Args, Debug, Clone)]
struct SetupArgs {
    #[arg(long, default_value = "diffusion")]
    problem: ProblemKind,
    /// Interior points per direction for the PDE problems.
    #[arg(long, default_value_t = 16)]
    n: usize,
}

impl SetupArgs {
    fn setup(&self, seed: u64) -> ProblemSetup {
        match self.problem {
            ProblemKind::Diffusion => ProblemSetup::diffusion(self.n),
            ProblemKind::ConvDiff => ProblemSetup::convdiff(self.n),
            ProblemKind::Sylvester => ProblemSetup::sylvester(seed),
        }
    }
}

#[derive(Args, Debug, Clone)]
struct SizeArgs {
    /// Size keys: `10..32:2,36,40` (m for PDEs, n = n0² for Sylvester).
    #[arg(long)]
    sizes: Option<String>,
    /// Named schedule: training, retrain or test.
    #[arg(long)]
    schedule: Option<String>,
}

impl SizeArgs {
    fn resolve(&self, kind: ProblemKind) -> Result<Vec<usize>> {
        match (&self.sizes, &self.schedule) {
            (Some(s), None) => parse_sizes(s),
            (None, Some(name)) => named_schedule(kind, name),
            (None, None) => bail!("give --sizes or --schedule"),
            (Some(_), Some(_)) => bail!("--sizes and --schedule are exclusive"),
        }
    }
}

#[derive(Args, Debug)]
struct TraverseArgs {
    #[command(flatten)]
    setup: SetupArgs,
    #[command(flatten)]
    sizes: SizeArgs,
    #[arg(long, default_value = "mskp")]
    family: Family,
    #[arg(long, default_value = "compass")]
    strategy: SearchStrategy,
    /// File stem for the dataset CSV and manifest.
    #[arg(long, default_value = "dataset")]
    name: String,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset manifest written by `traverse`.
    #[arg(long)]
    dataset: PathBuf,
    /// Kernel library: pde, sylvester, full, or names such as `g,p,gp`.
    #[arg(long)]
    library: Option<String>,
    #[arg(long, default_value = "model.json")]
    model: String,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "diffusion")]
    problem: ProblemKind,
    #[command(flatten)]
    sizes: SizeArgs,
    #[arg(long, default_value = "predicted")]
    name: String,
}

#[derive(Args, Debug)]
struct RetrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    sizes: SizeArgs,
    /// Traverse the new sizes instead of using predictions.
    #[arg(long)]
    traverse: bool,
    #[arg(long, default_value = "retrained")]
    name: String,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// table3-small, table3-32, table3, table5-small, table5 or table8.
    table: String,
    /// Sylvester n0 values for table8.
    #[arg(long, value_delimiter = ',')]
    n0: Vec<usize>,
    /// Sylvester seeds for table8.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Comma-separated subset of KPS,GKPS,MSKP,GMRES,GMRES-GKPS,GMRES-MSKP.
    /// An empty value selects no method.
    #[arg(long)]
    methods: Option<String>,
    /// Model file supplying the MSKP parameters.
    #[arg(long)]
    mskp_model: Option<PathBuf>,
    /// Fixed MSKP parameters `alpha,beta,omega`.
    #[arg(long)]
    mskp_params: Option<String>,
    /// Fixed GKPS parameters `alpha,beta`.
    #[arg(long)]
    gkps_params: Option<String>,
    /// Fixed KPS parameter `alpha`.
    #[arg(long)]
    kps_alpha: Option<f64>,
}

#[derive(Args, Debug)]
struct EigArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// none exports σ(Q); kps, gkps and mskp export σ(P⁻¹Q).
    #[arg(long, default_value = "none")]
    tag: SpectrumTag,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    omega: f64,
    /// Drop the initial time node so that B is nonsingular.
    #[arg(long)]
    reduced: bool,
}

#[derive(Args, Debug)]
struct BoundArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    beta: f64,
    #[arg(long, default_value_t = 0.0)]
    omega: f64,
    /// Evaluate on the full system instead of the reduced one.
    #[arg(long)]
    full: bool,
}

/// Settings after merging flags and the config file.
struct Settings {
    tol: f64,
    seed: u64,
    out: PathBuf,
    file: FileConfig,
}

impl Settings {
    fn solver(&self) -> Result<SolverConfig> {
        let mut cfg = SolverConfig::default();
        cfg.outer_tolerance = self.tol;
        cfg.inner = match self.file.inner.as_deref() {
            None | Some("direct") => InnerSolver::Direct,
            Some("gmres") => InnerSolver::Gmres {
                tolerance: self.file.inner_tol.unwrap_or(1e-10),
                max_iterations: 2000,
            },
            Some(other) => bail!("unknown inner solver `{other}`"),
        };
        if let Some(k) = self.file.max_outer {
            cfg.max_outer = k;
        }
        cfg.residual_norm = match self.file.residual_norm.as_deref() {
            None | Some("preconditioned") => ResidualNorm::Preconditioned,
            Some("true") => ResidualNorm::True,
            Some(other) => bail!("unknown residual norm `{other}`"),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn train_options(&self) -> TrainOptions {
        TrainOptions {
            restarts: self.file.restarts.unwrap_or(5),
            max_iterations: self.file.train_iterations.unwrap_or(200),
            seed: self.seed,
            ..Default::default()
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn parse_sizes(s: &str) -> Result<Vec<usize>> {
    let mut v = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((range, step)) = part.split_once(':').or(Some((part, "1"))).filter(|_| part.contains("..")) {
            let (a, b) = range.split_once("..").context("range needs `..`")?;
            let (a, b, step): (usize, usize, usize) = (a.parse()?, b.parse()?, step.parse()?);
            if step == 0 || a > b {
                bail!("bad range `{part}`");
            }
            v.extend((a..=b).step_by(step));
        } else {
            v.push(part.parse().with_context(|| format!("bad size `{part}`"))?);
        }
    }
    v.sort_unstable();
    v.dedup();
    Ok(v)
}

fn named_schedule(kind: ProblemKind, name: &str) -> Result<Vec<usize>> {
    let syl = kind == ProblemKind::Sylvester;
    Ok(match name {
        "training" if syl => schedule::sylvester_training(),
        "training" => schedule::pde_training(),
        "retrain" if syl => schedule::sylvester_retrain(),
        "retrain" => schedule::pde_retrain(),
        "test" if syl => schedule::sylvester_test(),
        "test" => schedule::pde_test(),
        other => bail!("unknown schedule `{other}`"),
    })
}

fn parse_library(spec: Option<&str>, kind: ProblemKind) -> Result<Vec<KernelKind>> {
    Ok(match spec {
        None if kind == ProblemKind::Sylvester => library::sylvester(),
        None | Some("pde") => library::pde(),
        Some("sylvester") => library::sylvester(),
        Some("full") => library::full(),
        Some(list) => list.split(',').map(|k| k.trim().parse()).collect::<Result<_, _>>()?,
    })
}

fn parse_floats(s: &str, n: usize) -> Result<Vec<f64>> {
    let v: Vec<f64> = s.split(',').map(|x| x.trim().parse()).collect::<Result<_, _>>()?;
    if v.len() != n {
        bail!("expected {n} comma-separated numbers, got `{s}`");
    }
    Ok(v)
}

fn write_rows(path: &Path, rows: &[BenchRow]) -> Result<()> {
    write_bench_csv(BufWriter::new(File::create(path)?), rows)?;
    Ok(())
}

fn report_rows(rows: &[BenchRow]) {
    for r in rows {
        match (&r.error, r.iterations) {
            (Some(e), _) => println!("{:<11} {:<10} n={:<3} m={:<3} error: {e}", r.method.name(), r.problem, r.n, r.m),
            (None, Some(it)) => println!(
                "{:<11} {:<10} n={:<3} m={:<3} seed={} IT={it:<5} RES={:.2e} converged={}",
                r.method.name(),
                r.problem,
                r.n,
                r.m,
                r.seed,
                r.final_res.unwrap_or(f64::NAN),
                r.converged
            ),
            (None, None) => {}
        }
    }
}

fn all_converged(rows: &[BenchRow]) -> bool {
    rows.iter().all(|r| r.converged && r.error.is_none())
}

fn run(cli: Cli) -> Result<bool> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let s = Settings {
        tol: file.tol.unwrap_or(cli.tol),
        seed: file.seed.unwrap_or(cli.seed),
        out: file.out.clone().unwrap_or(cli.out),
        file,
    };
    std::fs::create_dir_all(&s.out).with_context(|| format!("creating {}", s.out.display()))?;

    match cli.command {
        Command::Gen(p) => {
            let inst = p.instance(s.seed)?;
            let sys = inst.system()?;
            let prefix = format!("{}_n{}_m{}", inst.problem, inst.n, inst.m);
            sys.export(&s.out, &prefix)?;
            let manifest = config::ProblemManifest::new(&inst);
            std::fs::write(s.path(&format!("{prefix}_problem.toml")), toml::to_string(&manifest)?)?;
            println!("wrote {} (dimension {})", s.out.join(&prefix).display(), sys.dim());
            Ok(true)
        }
        Command::Solve(a) => {
            let inst = a.problem.instance(s.seed)?;
            let sys = inst.system()?;
            let params = match a.alpha {
                Some(alpha) => Some(SplitParams::new(alpha, a.beta.unwrap_or(alpha), a.omega)?),
                None => None,
            };
            let start = std::time::Instant::now();
            let rep = run_method(&sys, a.method, params, &s.solver()?)?;
            let row = BenchRow {
                method: a.method,
                problem: inst.problem,
                n: inst.n,
                m: inst.m,
                tau: inst.tau,
                seed: inst.seed,
                alpha: params.map(|p| p.alpha),
                beta: params.map(|p| p.beta),
                omega: params.map(|p| p.omega),
                iterations: Some(rep.iterations),
                final_res: Some(rep.final_residual()),
                wall_time_s: start.elapsed().as_secs_f64(),
                converged: rep.converged,
                error: None,
            };
            let rows = [row];
            report_rows(&rows);
            write_rows(&s.path("solve.csv"), &rows)?;
            Ok(rep.converged)
        }
        Command::Traverse(a) => {
            let sizes = a.sizes.resolve(a.setup.problem)?;
            let mut grid = SearchGrid::new(a.family, a.strategy);
            if let Some(st) = s.file.strategy.as_deref() {
                grid.strategy = st.parse()?;
            }
            let ds = build_training_set(a.setup.setup(s.seed), grid, &sizes, &s.solver()?)?;
            for r in &ds.records {
                println!(
                    "size {:<5} IT={:<4} alpha={:.2} beta={:.2} omega={:.2}",
                    r.size,
                    r.iterations.unwrap_or(0),
                    r.alpha,
                    r.beta,
                    r.omega
                );
            }
            let m = ds.save(&s.out, &a.name, None)?;
            println!("wrote {}", m.display());
            Ok(true)
        }
        Command::Train(a) => {
            let (ds, _) = ParamDataset::load(&a.dataset)?;
            let lib = parse_library(a.library.as_deref().or(s.file.library.as_deref()), ds.problem.kind)?;
            let (model, restarts) = fit_model(&ds, &lib, &s.train_options())?;
            for (i, r) in restarts.iter().enumerate() {
                println!("restart {i}: L {:.4} -> {:.4} in {} steps", r.initial_lml, r.final_lml, r.iterations);
            }
            let model_path = s.path(&a.model);
            model.save(&model_path)?;
            let stem = a.dataset.file_stem().and_then(|x| x.to_str()).unwrap_or("dataset");
            ds.save(&s.out, stem, Some(Path::new(&a.model)))?;
            println!("wrote {}", model_path.display());
            Ok(true)
        }
        Command::Predict(a) => {
            let model = MtgpModel::load(&a.model)?;
            let sizes = a.sizes.resolve(a.problem)?;
            let grid = SearchGrid::default();
            let recs = predict_records(&model, &sizes, &grid, Provenance::Predicted)?;
            let xs: Vec<f64> = sizes.iter().map(|&x| x as f64).collect();
            let preds = model.predict_many(&xs)?;
            write_prediction_csv(
                BufWriter::new(File::create(s.path(&format!("{}_curve.csv", a.name)))?),
                &model.task_names,
                &preds,
            )?;
            write_records(BufWriter::new(File::create(s.path(&format!("{}.csv", a.name)))?), &recs)?;
            println!("predicted {} sizes without traversal", sizes.len());
            Ok(true)
        }
        Command::Retrain(a) => {
            let (ds, _) = ParamDataset::load(&a.dataset)?;
            let model = MtgpModel::load(&a.model)?;
            let sizes = a.sizes.resolve(ds.problem.kind)?;
            let mode = if a.traverse { RetrainMode::Traversed } else { RetrainMode::Predicted };
            let (new_ds, new_model) = retrain(&model, &ds, &sizes, mode, &s.train_options(), &s.solver()?)?;
            let model_name = format!("{}_model.json", a.name);
            new_model.save(&s.path(&model_name))?;
            new_ds.save(&s.out, &a.name, Some(Path::new(&model_name)))?;
            println!("{} records, model {}", new_ds.records.len(), s.path(&model_name).display());
            Ok(true)
        }
        Command::Bench(a) => {
            let mut spec = BenchSpec::table(&a.table, &a.n0, &a.seeds)?;
            spec.solver = s.solver()?;
            if let Some(list) = &a.methods {
                spec.methods = list
                    .split(',')
                    .map(str::trim)
                    .filter(|x| !x.is_empty())
                    .map(str::parse)
                    .collect::<Result<_, _>>()?;
            }
            if let Some(p) = &a.mskp_model {
                spec.mskp = ParamSource::Model(p.clone());
            }
            if let Some(p) = &a.mskp_params {
                let v = parse_floats(p, 3)?;
                spec.mskp = ParamSource::Fixed(SplitParams::new(v[0], v[1], v[2])?);
            }
            if let Some(p) = &a.gkps_params {
                let v = parse_floats(p, 2)?;
                spec.gkps = ParamSource::Fixed(SplitParams::gkps(v[0], v[1])?);
            }
            if let Some(al) = a.kps_alpha {
                spec.kps = ParamSource::Fixed(SplitParams::kps(al)?);
            }
            if let Some(st) = s.file.strategy.as_deref() {
                let st: SearchStrategy = st.parse()?;
                for src in [&mut spec.gkps, &mut spec.mskp] {
                    if matches!(src, ParamSource::Traversed(_)) {
                        *src = ParamSource::Traversed(st);
                    }
                }
            }
            let rows = run_bench(&spec)?;
            report_rows(&rows);
            let path = s.path(&format!("bench_{}.csv", a.table));
            write_rows(&path, &rows)?;
            info!("wrote {}", path.display());
            Ok(all_converged(&rows))
        }
        Command::EigExport(a) => {
            let inst = a.problem.instance(s.seed)?;
            let mut sys = inst.system()?;
            if a.reduced {
                sys = sys.without_initial_node()?;
            }
            let params = match a.tag {
                SpectrumTag::None => None,
                tag => {
                    let alpha = a.alpha.context("--alpha is required with a preconditioner tag")?;
                    Some(match tag {
                        SpectrumTag::Kps => SplitParams::kps(alpha)?,
                        SpectrumTag::Gkps => SplitParams::gkps(alpha, a.beta.unwrap_or(alpha))?,
                        _ => SplitParams::new(alpha, a.beta.unwrap_or(alpha), a.omega)?,
                    })
                }
            };
            let eig = spectral::structured_spectrum(&sys, params)?;
            let path = s.path(&format!("eig_{}_{}_n{}_m{}.csv", a.tag.name(), inst.problem, inst.n, inst.m));
            spectral::write_eigenvalue_csv(BufWriter::new(File::create(&path)?), &eig, a.tag)?;
            println!("wrote {} eigenvalues to {}", eig.len(), path.display());
            Ok(true)
        }
        Command::Bound(a) => {
            let inst = a.problem.instance(s.seed)?;
            let full = inst.system()?;
            let sys = if a.full { full } else { full.without_initial_node()? };
            let p = SplitParams::new(a.alpha, a.beta, a.omega)?;
            let h = spectral::hypotheses(&sys)?;
            println!("min Re sigma(M^-1 K) = {:.6e}", h.min_re_mk);
            match h.min_re_ba {
                Some(v) => println!("min Re sigma(B^-1 A) = {v:.6e}"),
                None => println!("B is singular; the bound is undefined on this system"),
            }
            println!("stated beta region: beta <= {:.6e} ({})", h.beta_max(sys.tau()), h.in_stated_region(&p, sys.tau()));
            println!("contraction region: {}", h.in_contraction_region(&p, sys.tau()));
            if h.min_re_ba.is_some() {
                println!("bound = {:.6e}", spectral::theoretical_bound(&sys, p)?);
            }
            match spectral::iteration_matrix_radius(&sys, p) {
                Ok(r) => println!("rho(T) = {:.6e}", r.spectral_radius),
                Err(e) => println!("rho(T) not computed: {e}"),
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("not every run converged");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
