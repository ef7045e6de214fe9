//! Multitask Gaussian-process regression over a scalar input with a
//! learned nonnegative combination of library kernels.
//!
//! Task `l` uses `k_l = Σ_ξ c_lξ k_ξ`. The joint covariance of the stacked
//! targets (task-major, `y = [y₁; …; y_M]`) is
//!
//! ```text
//! Σ = Σ_ξ (Kᵗ ∘ s_ξ s_ξᵀ) ⊗ K_ξ + D ⊗ Iₙ,     (s_ξ)_l = √c_lξ
//! ```
//!
//! which is positive semidefinite term by term, has diagonal blocks
//! `Kᵗ_ll k_l`, and equals `Kᵗ ⊗ Kˣ + D ⊗ Iₙ` when all tasks share weights.

pub mod kernel;
pub mod lbfgs;

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use kernel::{unit_eval, unit_grad, BaseKernel, KernelHyper, KernelKind};
use lbfgs::{minimize, LbfgsOptions};

/// Relative diagonal jitter added before factorizing `Σ`.
pub const JITTER: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtgpModel {
    pub task_names: Vec<String>,
    /// Training inputs in original units.
    pub inputs: Vec<f64>,
    /// `targets[l][i]`: task `l` at input `i`, original units.
    pub targets: Vec<Vec<f64>>,
    /// Inputs are mapped to `(x - input_shift) / input_scale`.
    pub input_shift: f64,
    pub input_scale: f64,
    /// Per-task constant subtracted before fitting (zero unless centered).
    pub target_offset: Vec<f64>,
    pub library: Vec<KernelKind>,
    /// `weights[l][ξ] = c_lξ ≥ 0`.
    pub weights: Vec<Vec<f64>>,
    /// Kernel hyperparameters in normalized input units.
    pub hyper: KernelHyper,
    /// Lower-triangular `L` with `Kᵗ = L Lᵀ`.
    pub task_factor: Vec<Vec<f64>>,
    /// Noise variances `σ_l²`.
    pub noise: Vec<f64>,
    /// Digest of the training data.
    pub digest: String,
}

/// One posterior query result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub x: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl MtgpModel {
    /// Builds a model from explicit parameters; `hyper` is in normalized units.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        task_names: Vec<String>,
        inputs: Vec<f64>,
        targets: Vec<Vec<f64>>,
        library: Vec<KernelKind>,
        weights: Vec<Vec<f64>>,
        hyper: KernelHyper,
        task_factor: Vec<Vec<f64>>,
        noise: Vec<f64>,
    ) -> Result<Self> {
        let (shift, scale) = normalization(&inputs);
        let m = targets.len();
        let model = MtgpModel {
            task_names,
            digest: digest(&inputs, &targets),
            target_offset: vec![0.0; m],
            inputs,
            targets,
            input_shift: shift,
            input_scale: scale,
            library,
            weights,
            hyper,
            task_factor,
            noise,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.tasks();
        let n = self.inputs.len();
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if m == 0 || n == 0 {
            return bad("model needs at least one task and one training point");
        }
        if self.task_names.len() != m || self.targets.iter().any(|t| t.len() != n) || self.target_offset.len() != m {
            return bad("task names, offsets and targets must agree with the task and point counts");
        }
        if self.library.is_empty() || self.weights.len() != m || self.weights.iter().any(|w| w.len() != self.library.len()) {
            return bad("weights must be tasks x library elements");
        }
        if self.weights.iter().flatten().any(|&c| !(c >= 0.0) || !c.is_finite()) {
            return bad("kernel weights must be finite and nonnegative");
        }
        if self.task_factor.len() != m || self.task_factor.iter().enumerate().any(|(i, r)| r.len() != m || r[i + 1..].iter().any(|&v| v != 0.0)) {
            return bad("task factor must be lower triangular of order tasks");
        }
        if self.noise.len() != m || self.noise.iter().any(|&s| !(s > 0.0)) {
            return bad("noise variances must be positive");
        }
        if !(self.input_scale > 0.0) {
            return bad("input scale must be positive");
        }
        self.hyper.validate()
    }

    pub fn tasks(&self) -> usize {
        self.targets.len()
    }

    pub fn task_covariance(&self) -> DMatrix<f64> {
        let l = factor_matrix(&self.task_factor);
        &l * l.transpose()
    }

    /// Hyperparameters expressed in the original input units. The periodic
    /// kernel reads `ι` as a dimensionless width, so there the converted
    /// lengthscale applies to the Gaussian kernel only.
    pub fn hyper_original_units(&self) -> KernelHyper {
        KernelHyper {
            offset: self.hyper.offset * self.input_scale + self.input_shift,
            lengthscale: self.hyper.lengthscale * self.input_scale,
            period: self.hyper.period * self.input_scale,
        }
    }

    fn normalized(&self, x: f64) -> f64 {
        (x - self.input_shift) / self.input_scale
    }

    fn normalized_inputs(&self) -> Vec<f64> {
        self.inputs.iter().map(|&x| self.normalized(x)).collect()
    }

    fn stacked_targets(&self) -> DVector<f64> {
        let n = self.inputs.len();
        DVector::from_fn(self.tasks() * n, |k, _| self.targets[k / n][k % n] - self.target_offset[k / n])
    }

    /// `Kᵗ ∘ s_ξ s_ξᵀ` for every library element.
    fn task_blocks(&self) -> Vec<DMatrix<f64>> {
        let kt = self.task_covariance();
        let m = self.tasks();
        (0..self.library.len())
            .map(|xi| DMatrix::from_fn(m, m, |a, b| kt[(a, b)] * (self.weights[a][xi] * self.weights[b][xi]).sqrt()))
            .collect()
    }

    /// `Σ` without jitter.
    pub fn covariance(&self) -> DMatrix<f64> {
        let x = self.normalized_inputs();
        let grams: Vec<DMatrix<f64>> = self.library.iter().map(|&k| gram(k, &self.hyper, &x, &x)).collect();
        assemble_sigma(&self.task_blocks(), &grams, &self.noise, x.len())
    }

    fn factorize(&self) -> Result<Cholesky<f64, Dyn>> {
        let mut s = self.covariance();
        add_jitter(&mut s);
        Cholesky::new(s).ok_or(Error::NotPositiveDefinite)
    }

    /// Log density of the stacked targets under `N(0, Σ)`.
    pub fn log_marginal_likelihood(&self) -> Result<f64> {
        let chol = self.factorize()?;
        let y = self.stacked_targets();
        Ok(lml_from_cholesky(&chol, &y))
    }

    /// Posterior mean and variance of task `task` at `x`.
    pub fn predict(&self, x: f64, task: usize) -> Result<(f64, f64)> {
        if task >= self.tasks() {
            return Err(Error::InvalidArgument(format!("task {task} out of range")));
        }
        let p = self.predict_many(&[x])?;
        Ok((p[0].mean[task], p[0].variance[task]))
    }

    /// Posterior for every task at each of `xs`, sharing one factorization.
    pub fn predict_many(&self, xs: &[f64]) -> Result<Vec<Prediction>> {
        let chol = self.factorize()?;
        let alpha = chol.solve(&self.stacked_targets());
        let xtrain = self.normalized_inputs();
        let n = xtrain.len();
        let m = self.tasks();
        let blocks = self.task_blocks();
        let kt = self.task_covariance();
        let mut out = Vec::with_capacity(xs.len());
        for &xo in xs {
            let xs_n = self.normalized(xo);
            let cross: Vec<Vec<f64>> = self.library.iter().map(|&k| xtrain.iter().map(|&xi| unit_eval(k, &self.hyper, xs_n, xi)).collect()).collect();
            let mut mean = Vec::with_capacity(m);
            let mut variance = Vec::with_capacity(m);
            for l in 0..m {
                let kstar = DVector::from_fn(m * n, |k, _| {
                    let (b, i) = (k / n, k % n);
                    blocks.iter().zip(&cross).map(|(g, c)| g[(l, b)] * c[i]).sum::<f64>()
                });
                let prior: f64 = kt[(l, l)]
                    * self.library.iter().zip(&self.weights[l]).map(|(&k, c)| c * unit_eval(k, &self.hyper, xs_n, xs_n)).sum::<f64>();
                let v = chol.solve(&kstar);
                let mut var = prior - kstar.dot(&v);
                if var < 0.0 {
                    if var < -1e-10 {
                        log::warn!("negative posterior variance {var:e} clamped to zero");
                    }
                    var = 0.0;
                }
                mean.push(kstar.dot(&alpha) + self.target_offset[l]);
                variance.push(var);
            }
            out.push(Prediction { x: xo, mean, variance });
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let w = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let r = std::io::BufReader::new(std::fs::File::open(path)?);
        let m: MtgpModel = serde_json::from_reader(r)?;
        m.validate()?;
        Ok(m)
    }
}

/// Writes `x, mean_<task>…, var_<task>…` rows.
pub fn write_prediction_csv<W: Write>(w: W, task_names: &[String], preds: &[Prediction]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["x".to_string()];
    header.extend(task_names.iter().map(|t| format!("mean_{t}")));
    header.extend(task_names.iter().map(|t| format!("var_{t}")));
    wr.write_record(&header)?;
    for p in preds {
        let mut row = vec![format!("{}", p.x)];
        row.extend(p.mean.iter().map(|v| format!("{v:e}")));
        row.extend(p.variance.iter().map(|v| format!("{v:e}")));
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

fn normalization(inputs: &[f64]) -> (f64, f64) {
    let lo = inputs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = inputs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !(hi > lo) {
        (if lo.is_finite() { lo } else { 0.0 }, 1.0)
    } else {
        (lo, hi - lo)
    }
}

/// FNV-1a over the bit patterns of inputs and targets.
fn digest(inputs: &[f64], targets: &[Vec<f64>]) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for v in inputs.iter().chain(targets.iter().flatten()) {
        for byte in v.to_bits().to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    format!("{h:016x}")
}

fn factor_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let m = rows.len();
    DMatrix::from_fn(m, m, |i, j| if j <= i { rows[i][j] } else { 0.0 })
}

fn gram(k: KernelKind, h: &KernelHyper, x: &[f64], xp: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(x.len(), xp.len(), |i, j| unit_eval(k, h, x[i], xp[j]))
}

fn assemble_sigma(blocks: &[DMatrix<f64>], grams: &[DMatrix<f64>], noise: &[f64], n: usize) -> DMatrix<f64> {
    let m = noise.len();
    let mut s = DMatrix::zeros(m * n, m * n);
    for (g, k) in blocks.iter().zip(grams) {
        s += g.kronecker(k);
    }
    for (l, &sig) in noise.iter().enumerate() {
        for i in 0..n {
            s[(l * n + i, l * n + i)] += sig;
        }
    }
    s
}

fn add_jitter(s: &mut DMatrix<f64>) -> f64 {
    let d = s.nrows();
    let j = JITTER * s.trace() / d as f64;
    for i in 0..d {
        s[(i, i)] += j;
    }
    j
}

fn lml_from_cholesky(chol: &Cholesky<f64, Dyn>, y: &DVector<f64>) -> f64 {
    let alpha = chol.solve(y);
    let logdet: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    -0.5 * y.dot(&alpha) - 0.5 * logdet - 0.5 * y.len() as f64 * (2.0 * PI).ln()
}

/// Which kernel hyperparameters a library exercises.
#[derive(Debug, Clone, Copy)]
struct ActiveHyper {
    offset: bool,
    lengthscale: bool,
    period: bool,
}

impl ActiveHyper {
    fn of(library: &[KernelKind]) -> Self {
        let uses = |b| library.iter().any(|k| k.uses(b));
        ActiveHyper {
            offset: uses(BaseKernel::Linear),
            lengthscale: uses(BaseKernel::Gaussian) || uses(BaseKernel::Periodic),
            period: uses(BaseKernel::Periodic),
        }
    }
}

/// Unconstrained parameter vector:
/// `[log c (M·N), L lower triangle row-major with log diagonal, c?, log ι?, log p?, log σ² (M)]`.
struct Layout {
    m: usize,
    nk: usize,
    active: ActiveHyper,
}

impl Layout {
    fn new(model: &MtgpModel) -> Self {
        Layout {
            m: model.tasks(),
            nk: model.library.len(),
            active: ActiveHyper::of(&model.library),
        }
    }

    fn factor_len(&self) -> usize {
        self.m * (self.m + 1) / 2
    }

    fn hyper_len(&self) -> usize {
        self.active.offset as usize + self.active.lengthscale as usize + self.active.period as usize
    }

    fn len(&self) -> usize {
        self.m * self.nk + self.factor_len() + self.hyper_len() + self.m
    }

    fn pack(&self, model: &MtgpModel) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        for row in &model.weights {
            v.extend(row.iter().map(|c| c.max(1e-300).ln()));
        }
        for i in 0..self.m {
            for j in 0..=i {
                let x = model.task_factor[i][j];
                v.push(if i == j { x.abs().max(1e-300).ln() } else { x });
            }
        }
        if self.active.offset {
            v.push(model.hyper.offset);
        }
        if self.active.lengthscale {
            v.push(model.hyper.lengthscale.ln());
        }
        if self.active.period {
            v.push(model.hyper.period.ln());
        }
        v.extend(model.noise.iter().map(|s| s.ln()));
        v
    }

    fn unpack(&self, v: &[f64], model: &mut MtgpModel) {
        let mut k = 0;
        for l in 0..self.m {
            for xi in 0..self.nk {
                model.weights[l][xi] = v[k].exp();
                k += 1;
            }
        }
        for i in 0..self.m {
            for j in 0..=i {
                model.task_factor[i][j] = if i == j { v[k].exp() } else { v[k] };
                k += 1;
            }
        }
        if self.active.offset {
            model.hyper.offset = v[k];
            k += 1;
        }
        if self.active.lengthscale {
            model.hyper.lengthscale = v[k].exp();
            k += 1;
        }
        if self.active.period {
            model.hyper.period = v[k].exp();
            k += 1;
        }
        for l in 0..self.m {
            model.noise[l] = v[k].exp();
            k += 1;
        }
    }
}

/// Log marginal likelihood and its gradient with respect to the packed
/// parameter vector, via `∂L/∂θ = ½ tr((ααᵀ - Σ⁻¹) ∂Σ/∂θ)`.
fn lml_and_gradient(model: &MtgpModel, layout: &Layout) -> Option<(f64, Vec<f64>)> {
    let x = model.normalized_inputs();
    let n = x.len();
    let m = model.tasks();
    let nk = model.library.len();
    let dim = m * n;
    let grams: Vec<DMatrix<f64>> = model.library.iter().map(|&k| gram(k, &model.hyper, &x, &x)).collect();
    let dgrams: Vec<[DMatrix<f64>; 3]> = model
        .library
        .iter()
        .map(|&k| {
            let g: Vec<[f64; 3]> = (0..n * n).map(|idx| unit_grad(k, &model.hyper, x[idx % n], x[idx / n])).collect();
            [0, 1, 2].map(|h| DMatrix::from_fn(n, n, |i, j| g[j * n + i][h]))
        })
        .collect();
    let blocks = model.task_blocks();
    let mut sigma = assemble_sigma(&blocks, &grams, &model.noise, n);
    add_jitter(&mut sigma);
    let chol = Cholesky::new(sigma)?;
    let y = model.stacked_targets();
    let lml = lml_from_cholesky(&chol, &y);
    let alpha = chol.solve(&y);
    let w = &alpha * alpha.transpose() - chol.inverse();
    let tr_w = w.trace();
    let jitter_coeff = JITTER / dim as f64;

    // ⟨W_ab, Y⟩ for each task pair
    let block_inner = |y: &DMatrix<f64>| -> DMatrix<f64> {
        DMatrix::from_fn(m, m, |a, b| {
            let wb = w.view((a * n, b * n), (n, n));
            wb.component_mul(y).sum()
        })
    };
    let z: Vec<DMatrix<f64>> = grams.iter().map(&block_inner).collect();
    let zh: Vec<[DMatrix<f64>; 3]> = dgrams.iter().map(|d| [0, 1, 2].map(|h| block_inner(&d[h]))).collect();
    let tr_gram: Vec<f64> = grams.iter().map(|g| g.trace()).collect();

    // gradient contribution of ∂Σ = Σ_ξ X_ξ ⊗ K_ξ
    let grad_of = |xs: &[DMatrix<f64>]| -> f64 {
        let inner: f64 = xs.iter().zip(&z).map(|(xm, zm)| xm.component_mul(zm).sum()).sum();
        let tr: f64 = xs.iter().zip(&tr_gram).map(|(xm, t)| xm.trace() * t).sum();
        0.5 * inner + 0.5 * tr_w * jitter_coeff * tr
    };

    let mut grad = Vec::with_capacity(layout.len());
    for l in 0..m {
        for xi in 0..nk {
            let g = &blocks[xi];
            let mut dx = DMatrix::zeros(m, m);
            for b in 0..m {
                dx[(l, b)] += 0.5 * g[(l, b)];
                dx[(b, l)] += 0.5 * g[(b, l)];
            }
            let mut xs = vec![DMatrix::zeros(m, m); nk];
            xs[xi] = dx;
            grad.push(grad_of(&xs));
        }
    }
    let lmat = factor_matrix(&model.task_factor);
    for i in 0..m {
        for j in 0..=i {
            let mut e = DMatrix::zeros(m, m);
            e[(i, j)] = if i == j { lmat[(i, i)] } else { 1.0 };
            let dkt = &e * lmat.transpose() + &lmat * e.transpose();
            let xs: Vec<DMatrix<f64>> = (0..nk)
                .map(|xi| DMatrix::from_fn(m, m, |a, b| dkt[(a, b)] * (model.weights[a][xi] * model.weights[b][xi]).sqrt()))
                .collect();
            grad.push(grad_of(&xs));
        }
    }
    let hyper_grad = |h: usize| -> f64 {
        let inner: f64 = blocks.iter().zip(&zh).map(|(g, zz)| g.component_mul(&zz[h]).sum()).sum();
        let tr: f64 = blocks.iter().zip(&dgrams).map(|(g, d)| g.trace() * d[h].trace()).sum();
        0.5 * inner + 0.5 * tr_w * jitter_coeff * tr
    };
    if layout.active.offset {
        grad.push(hyper_grad(0));
    }
    if layout.active.lengthscale {
        grad.push(hyper_grad(1));
    }
    if layout.active.period {
        grad.push(hyper_grad(2));
    }
    for l in 0..m {
        let s = model.noise[l];
        let tr_block: f64 = (0..n).map(|i| w[(l * n + i, l * n + i)]).sum();
        grad.push(0.5 * s * tr_block + 0.5 * tr_w * jitter_coeff * s * n as f64);
    }
    Some((lml, grad))
}

/// Analytic gradient of the log marginal likelihood in the packed
/// unconstrained coordinates, with those coordinates.
pub fn packed_gradient(model: &MtgpModel) -> Result<(Vec<f64>, f64, Vec<f64>)> {
    let layout = Layout::new(model);
    let theta = layout.pack(model);
    let (l, g) = lml_and_gradient(model, &layout).ok_or(Error::NotPositiveDefinite)?;
    Ok((theta, l, g))
}

/// Log marginal likelihood at packed coordinates `theta`.
pub fn packed_lml(model: &MtgpModel, theta: &[f64]) -> Result<f64> {
    let layout = Layout::new(model);
    let mut m = model.clone();
    layout.unpack(theta, &mut m);
    m.log_marginal_likelihood()
}

/// Random restart point scaled to the per-task target variances.
fn randomize(start: &mut MtgpModel, variances: &[f64], rng: &mut ChaCha8Rng) {
    for l in 0..start.tasks() {
        let scale = variances[l].max(1e-12);
        for c in start.weights[l].iter_mut() {
            *c = scale * (rng.gen_range(-1.0f64..1.0)).exp();
        }
        start.noise[l] = scale * 10f64.powf(rng.gen_range(-4.0..-1.0));
        for j in 0..l {
            start.task_factor[l][j] = 0.1 * rng.gen_range(-1.0..1.0);
        }
    }
    start.hyper = KernelHyper {
        offset: rng.gen_range(-0.5..0.5),
        lengthscale: rng.gen_range(0.1f64..1.0),
        period: rng.gen_range(0.05f64..0.5),
    };
}

/// `warm`'s parameters carried over to `base`'s input normalization. The
/// linear and Gaussian elements are reproduced exactly in original units.
/// Periodic elements are approximate, since the shared `ι` also acts as
/// the dimensionless width of the periodic kernel.
fn rescaled(warm: &MtgpModel, base: &MtgpModel) -> MtgpModel {
    let orig = warm.hyper_original_units();
    let s = base.input_scale;
    let ratio2 = (s / warm.input_scale).powi(2);
    let mut out = base.clone();
    out.hyper = KernelHyper {
        offset: (orig.offset - base.input_shift) / s,
        lengthscale: orig.lengthscale / s,
        period: orig.period / s,
    };
    for (l, row) in out.weights.iter_mut().enumerate() {
        for (xi, c) in row.iter_mut().enumerate() {
            // each linear factor scales with the square of the input unit
            let linear = warm.library[xi].bases().iter().filter(|&&b| b == kernel::BaseKernel::Linear).count();
            let f = ratio2.powi(linear as i32);
            *c = warm.weights[l][xi] * f;
        }
    }
    out.task_factor = warm.task_factor.clone();
    out.noise = warm.noise.clone();
    out
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub restarts: usize,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub seed: u64,
    /// Subtract each task's mean before fitting.
    pub center_targets: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            restarts: 5,
            max_iterations: 200,
            gradient_tolerance: 1e-6,
            seed: 0,
            center_targets: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestartOutcome {
    pub initial_lml: f64,
    pub final_lml: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Fits weights, task covariance, kernel hyperparameters and noise by
/// maximizing the log marginal likelihood from several random starts.
pub fn train(
    task_names: Vec<String>,
    inputs: &[f64],
    targets: &[Vec<f64>],
    library: &[KernelKind],
    opts: &TrainOptions,
) -> Result<(MtgpModel, Vec<RestartOutcome>)> {
    train_from(task_names, inputs, targets, library, opts, None)
}

/// Like [`train`], but the first restart starts from `warm` (the same
/// kernels in original input units) when its tasks and library match.
pub fn train_from(
    task_names: Vec<String>,
    inputs: &[f64],
    targets: &[Vec<f64>],
    library: &[KernelKind],
    opts: &TrainOptions,
    warm: Option<&MtgpModel>,
) -> Result<(MtgpModel, Vec<RestartOutcome>)> {
    if inputs.len() < 2 {
        return Err(Error::InvalidArgument("training needs at least two points".into()));
    }
    if targets.is_empty() || opts.restarts == 0 {
        return Err(Error::InvalidArgument("training needs a task and a restart".into()));
    }
    let m = targets.len();
    let nk = library.len();
    let offsets: Vec<f64> = if opts.center_targets {
        targets.iter().map(|t| t.iter().sum::<f64>() / t.len() as f64).collect()
    } else {
        vec![0.0; m]
    };
    let variances: Vec<f64> = targets
        .iter()
        .zip(&offsets)
        .map(|(t, o)| t.iter().map(|v| (v - o).powi(2)).sum::<f64>() / t.len() as f64)
        .collect();
    let mut base = MtgpModel::new(
        task_names,
        inputs.to_vec(),
        targets.to_vec(),
        library.to_vec(),
        vec![vec![1.0; nk]; m],
        KernelHyper::default(),
        (0..m).map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect(),
        vec![1.0; m],
    )?;
    base.target_offset = offsets;
    let warm_start = warm.filter(|w| w.tasks() == m && w.library == library).map(|w| rescaled(w, &base));
    let layout = Layout::new(&base);
    let lbfgs_opts = LbfgsOptions {
        max_iterations: opts.max_iterations,
        gradient_tolerance: opts.gradient_tolerance,
        ..Default::default()
    };

    let runs: Vec<Option<(Vec<f64>, RestartOutcome)>> = (0..opts.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(r as u64));
            let mut start = base.clone();
            if let (0, Some(w)) = (r, &warm_start) {
                start = w.clone();
            } else {
                randomize(&mut start, &variances, &mut rng);
            }
            let theta0 = layout.pack(&start);
            let objective = |theta: &[f64]| {
                let mut mdl = start.clone();
                layout.unpack(theta, &mut mdl);
                lml_and_gradient(&mdl, &layout).map(|(l, g)| (-l, g.into_iter().map(|v| -v).collect()))
            };
            let res = minimize(objective, theta0, &lbfgs_opts)?;
            Some((
                res.x,
                RestartOutcome {
                    initial_lml: -res.initial_value,
                    final_lml: -res.value,
                    iterations: res.iterations,
                    converged: res.converged,
                },
            ))
        })
        .collect();

    let outcomes: Vec<RestartOutcome> = runs.iter().flatten().map(|(_, o)| *o).collect();
    let best = runs
        .into_iter()
        .flatten()
        .filter(|(_, o)| o.final_lml.is_finite())
        .max_by(|a, b| a.1.final_lml.total_cmp(&b.1.final_lml));
    let Some((theta, _)) = best else {
        return Err(Error::TrainingFailed {
            restarts: opts.restarts,
            diagnostics: format!("{} of {} restarts produced a finite likelihood", outcomes.len(), opts.restarts),
        });
    };
    layout.unpack(&theta, &mut base);
    base.validate()?;
    Ok((base, outcomes))
}
