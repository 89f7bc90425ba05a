//! Multi-task GP with separable covariance `C ⊗ C_T + nugget·I`.
//!
//! Stacked response vectors use observation-major order: entry `i·G + g`
//! holds task `g` of observation `i`, which is the ordering under which the
//! training covariance is `kron(C, C_T)`.

use std::f64::consts::LN_10;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::dataset::{NormalizationSpec, Sources};
use crate::error::{Error, Result};
use crate::hyperopt::{self, BoxProblem, OptResult, OptimizerConfig};
use crate::kernels::{self, Hyperparams, TaskCov};
use crate::sogp::{clamp_variance, factorize, half_log_det, PredictiveDistribution};

/// Name recorded in serialized models for the stacking order.
pub const VEC_ORDERING: &str = "observation-major";

fn task_matrix(hp: &Hyperparams) -> Result<TaskCov> {
    let l = hp
        .task_factor
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("multi-task hyperparameters need a task factor".into()))?;
    kernels::task_cov(l)
}

fn check(x: &DMatrix<f64>, y: &DMatrix<f64>, hp: &Hyperparams) -> Result<usize> {
    let g = hp.task_factor.as_ref().map_or(0, |l| l.nrows());
    if g == 0 {
        return Err(Error::InvalidArgument("multi-task hyperparameters need a task factor".into()));
    }
    if y.nrows() != x.nrows() || y.ncols() != g {
        return Err(Error::DimensionMismatch {
            expected: x.nrows() * g,
            got: y.len(),
        });
    }
    if hp.beta.len() != g {
        return Err(Error::InvalidArgument(format!("need {g} task means, got {}", hp.beta.len())));
    }
    Ok(g)
}

/// Observation-major stacking of an n×G response matrix.
pub fn stack(y: &DMatrix<f64>) -> DVector<f64> {
    let (n, g) = y.shape();
    DVector::from_fn(n * g, |k, _| y[(k / g, k % g)])
}

fn residual(y: &DMatrix<f64>, beta: &[f64]) -> DVector<f64> {
    let g = beta.len();
    let mut r = stack(y);
    for (k, v) in r.iter_mut().enumerate() {
        *v -= beta[k % g];
    }
    r
}

/// `kron(K, C_T) + nugget·I` where K excludes the nugget.
pub fn assemble_cmt(x: &DMatrix<f64>, sources: Option<&[usize]>, hp: &Hyperparams) -> Result<DMatrix<f64>> {
    let ct = task_matrix(hp)?;
    let k = kernels::kernel_matrix(x, sources, hp)?;
    let mut c = kernels::kron(&k, &ct.matrix);
    for i in 0..c.nrows() {
        c[(i, i)] += hp.nugget;
    }
    Ok(c)
}

pub fn nll_mt(hp: &Hyperparams, x: &DMatrix<f64>, y: &DMatrix<f64>, sources: Option<&[usize]>) -> Result<f64> {
    check(x, y, hp)?;
    let chol = factorize(assemble_cmt(x, sources, hp)?, hp)?;
    let r = residual(y, &hp.beta);
    let alpha = chol.solve(&r);
    Ok(half_log_det(&chol) + 0.5 * r.dot(&alpha))
}

/// Gradient of the multi-task NLL with respect to the raw parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MtGradient {
    pub omega: Vec<f64>,
    pub log10_sigma2: f64,
    pub beta: Vec<f64>,
    pub log10_nugget: f64,
    pub z: Option<f64>,
    /// ∂NLL/∂L_ab for every entry of the task factor (upper part zero).
    pub task_factor: DMatrix<f64>,
}

pub fn nll_mt_with_grad(
    hp: &Hyperparams,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    sources: Option<&[usize]>,
) -> Result<(f64, MtGradient)> {
    let g = check(x, y, hp)?;
    let ct = task_matrix(hp)?.matrix;
    let l = hp.task_factor.as_ref().expect("checked");
    let k = kernels::kernel_matrix(x, sources, hp)?;
    let mut c = kernels::kron(&k, &ct);
    for i in 0..c.nrows() {
        c[(i, i)] += hp.nugget;
    }
    let chol = factorize(c, hp)?;
    let r = residual(y, &hp.beta);
    let alpha = chol.solve(&r);
    let value = half_log_det(&chol) + 0.5 * r.dot(&alpha);

    let mut w = chol.inverse();
    w -= &alpha * alpha.transpose();

    let n = x.nrows();
    // Contract W against C_T (for kernel parameters) and against K (for
    // task parameters).
    let mut m = DMatrix::zeros(n, n);
    let mut nt = DMatrix::zeros(g, g);
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for a in 0..g {
                for b in 0..g {
                    let wv = w[(i * g + a, j * g + b)];
                    s += wv * ct[(a, b)];
                    nt[(a, b)] += wv * k[(i, j)];
                }
            }
            m[(i, j)] = s;
        }
    }

    let mut omega = vec![0.0; hp.omega.len()];
    let mut sig = 0.0;
    let mut zg = 0.0;
    let z = hp.z.unwrap_or(0.0);
    for i in 0..n {
        sig += 0.5 * m[(i, i)] * k[(i, i)];
        for j in 0..i {
            let mk = m[(i, j)] * k[(i, j)];
            sig += mk;
            for (d, om) in hp.omega.iter().enumerate() {
                let diff = x[(i, d)] - x[(j, d)];
                omega[d] -= mk * LN_10 * 10f64.powf(*om) * diff * diff;
            }
            if let (Some(src), Some(_)) = (sources, hp.z) {
                if src[i] != src[j] {
                    zg -= mk * 2.0 * z;
                }
            }
        }
    }
    let mut beta = vec![0.0; g];
    for (idx, a) in alpha.iter().enumerate() {
        beta[idx % g] -= a;
    }
    let mut tf = &nt * l;
    for a in 0..g {
        for b in a + 1..g {
            tf[(a, b)] = 0.0;
        }
    }
    Ok((
        value,
        MtGradient {
            omega,
            log10_sigma2: LN_10 * sig,
            beta,
            log10_nugget: 0.5 * w.diagonal().sum() * hp.nugget * LN_10,
            z: hp.z.map(|_| zg),
            task_factor: tf,
        },
    ))
}

/// Optimizer layout: `[ω…, log10 σ², β_1…β_G, log10 nugget, z?, task…]`
/// where the task block lists the strictly lower entries of L_T row by row
/// followed by log10 of diagonal entries 1..G. `L_T[0][0]` is pinned to 1
/// because σ² already carries the overall scale.
pub(crate) struct Layout {
    dim: usize,
    tasks: usize,
    fused: bool,
}

impl Layout {
    fn task_offset(&self) -> usize {
        self.dim + 1 + self.tasks + 1 + usize::from(self.fused)
    }

    fn lower_entries(&self) -> Vec<(usize, usize)> {
        (0..self.tasks).flat_map(|a| (0..a).map(move |b| (a, b))).collect()
    }

    pub(crate) fn pack(&self, hp: &Hyperparams) -> Vec<f64> {
        let mut v = hp.omega.clone();
        v.push(hp.sigma2.log10());
        v.extend(&hp.beta);
        v.push(hp.nugget.log10());
        v.extend(hp.z);
        let l = hp.task_factor.as_ref().expect("task factor");
        for (a, b) in self.lower_entries() {
            v.push(l[(a, b)]);
        }
        for a in 1..self.tasks {
            v.push(l[(a, a)].log10());
        }
        v
    }

    pub(crate) fn unpack(&self, v: &[f64]) -> Hyperparams {
        let d = self.dim;
        let g = self.tasks;
        let mut l = DMatrix::zeros(g, g);
        l[(0, 0)] = 1.0;
        let mut k = self.task_offset();
        for (a, b) in self.lower_entries() {
            l[(a, b)] = v[k];
            k += 1;
        }
        for a in 1..g {
            l[(a, a)] = 10f64.powf(v[k]);
            k += 1;
        }
        Hyperparams {
            omega: v[..d].to_vec(),
            sigma2: 10f64.powf(v[d]),
            beta: v[d + 1..d + 1 + g].to_vec(),
            nugget: 10f64.powf(v[d + 1 + g]),
            z: self.fused.then(|| v[d + 2 + g]),
            task_factor: Some(l),
        }
    }

    pub(crate) fn gradient(&self, hp: &Hyperparams, grad: &MtGradient) -> Vec<f64> {
        let mut v = grad.omega.clone();
        v.push(grad.log10_sigma2);
        v.extend(&grad.beta);
        v.push(grad.log10_nugget);
        v.extend(grad.z);
        for (a, b) in self.lower_entries() {
            v.push(grad.task_factor[(a, b)]);
        }
        let l = hp.task_factor.as_ref().expect("task factor");
        for a in 1..self.tasks {
            v.push(grad.task_factor[(a, a)] * l[(a, a)] * LN_10);
        }
        v
    }

    fn problem(&self, cfg: &OptimizerConfig) -> BoxProblem {
        let b = &cfg.bounds;
        let mut lower = vec![b.omega.0; self.dim];
        let mut upper = vec![b.omega.1; self.dim];
        lower.push(b.log10_sigma2.0);
        upper.push(b.log10_sigma2.1);
        lower.extend(std::iter::repeat_n(b.beta.0, self.tasks));
        upper.extend(std::iter::repeat_n(b.beta.1, self.tasks));
        lower.push(b.log10_nugget.0);
        upper.push(b.log10_nugget.1);
        if self.fused {
            lower.push(b.z.0);
            upper.push(b.z.1);
        }
        let n_off = self.lower_entries().len();
        lower.extend(std::iter::repeat_n(b.task_offdiag.0, n_off));
        upper.extend(std::iter::repeat_n(b.task_offdiag.1, n_off));
        lower.extend(std::iter::repeat_n(b.log10_task_diag.0, self.tasks - 1));
        upper.extend(std::iter::repeat_n(b.log10_task_diag.1, self.tasks - 1));

        let mut init = Hyperparams::initial(self.dim, self.fused);
        init.beta = vec![0.0; self.tasks];
        init.task_factor = Some(DMatrix::identity(self.tasks, self.tasks));
        BoxProblem {
            lower,
            upper,
            init: self.pack(&init),
        }
    }
}

/// Joint posterior over all tasks at one input.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTaskPrediction {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
}

impl MultiTaskPrediction {
    pub fn marginals(&self) -> Vec<PredictiveDistribution> {
        self.mean
            .iter()
            .enumerate()
            .map(|(g, &mean)| PredictiveDistribution {
                mean,
                variance: self.cov[(g, g)],
            })
            .collect()
    }
}

/// Fitted multi-task model. Immutable once built.
#[derive(Debug, Clone)]
pub struct MultiTaskModel {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    sources: Option<Sources>,
    hp: Hyperparams,
    task_cov: TaskCov,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    norm: NormalizationSpec,
}

impl MultiTaskModel {
    /// Factorizes `C_MT` for fixed hyperparameters, retrying once with ten
    /// times the nugget.
    pub fn new(
        x: DMatrix<f64>,
        y: DMatrix<f64>,
        sources: Option<Sources>,
        mut hp: Hyperparams,
        norm: NormalizationSpec,
    ) -> Result<Self> {
        hp.validate()?;
        let g = check(&x, &y, &hp)?;
        if norm.n_features() != x.ncols() || norm.responses.len() != g {
            return Err(Error::DimensionMismatch {
                expected: g,
                got: norm.responses.len(),
            });
        }
        if hp.z.is_some() && sources.is_none() {
            return Err(Error::InvalidArgument("fused hyperparameters need source labels".into()));
        }
        if let Some(s) = &sources {
            kernels::check_source_count(s.labels.len())?;
        }
        let src = sources.as_ref().map(|s| s.index.as_slice());
        let chol = match Cholesky::new(assemble_cmt(&x, src, &hp)?) {
            Some(c) => c,
            None => {
                hp.nugget = (hp.nugget * 10.0).max(1e-8);
                factorize(assemble_cmt(&x, src, &hp)?, &hp)?
            }
        };
        let alpha = chol.solve(&residual(&y, &hp.beta));
        let task_cov = task_matrix(&hp)?;
        Ok(Self {
            x,
            y,
            sources,
            hp,
            task_cov,
            chol,
            alpha,
            norm,
        })
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hp
    }

    pub fn task_cov(&self) -> &TaskCov {
        &self.task_cov
    }

    /// Normalized off-diagonal of C_T between tasks 0 and 1.
    pub fn task_correlation(&self) -> f64 {
        self.task_cov.correlation(0, 1)
    }

    pub fn n_tasks(&self) -> usize {
        self.task_cov.matrix.nrows()
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn targets(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn sources(&self) -> Option<&Sources> {
        self.sources.as_ref()
    }

    pub fn normalization(&self) -> &NormalizationSpec {
        &self.norm
    }

    pub fn is_fused(&self) -> bool {
        self.hp.z.is_some()
    }

    pub fn nll(&self) -> f64 {
        half_log_det(&self.chol) + 0.5 * residual(&self.y, &self.hp.beta).dot(&self.alpha)
    }

    fn resolve_source(&self, source: Option<&str>) -> Result<Option<usize>> {
        if !self.is_fused() {
            return Ok(None);
        }
        let sources = self.sources.as_ref().expect("fused model carries sources");
        match source {
            Some(label) => sources.lookup(label).map(Some),
            None => Err(Error::InvalidArgument(
                "fused model needs a source label for prediction".into(),
            )),
        }
    }

    /// Joint posterior in model (standardized) space.
    pub fn predict_standardized(&self, xstar: &[f64], source: Option<&str>) -> Result<MultiTaskPrediction> {
        let s = self.resolve_source(source)?;
        let src = self.sources.as_ref().map(|s| s.index.as_slice());
        let k = kernels::cross_cov(&self.x, src, xstar, s, &self.hp)?;
        let ct = &self.task_cov.matrix;
        let g = ct.nrows();
        // Bᵀ = k ⊗ C_T, an nG × G block column.
        let bt = kernels::kron(&DMatrix::from_column_slice(k.len(), 1, k.as_slice()), ct);
        let mean: Vec<f64> = (0..g)
            .map(|t| self.hp.beta[t] + bt.column(t).dot(&self.alpha))
            .collect();
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&bt)
            .expect("Cholesky factor has positive diagonal");
        let mut cov = ct * self.hp.sigma2 - v.transpose() * &v;
        for t in 0..g {
            cov[(t, t)] = clamp_variance(cov[(t, t)] + self.hp.nugget)?;
        }
        let sym = (&cov + cov.transpose()) * 0.5;
        Ok(MultiTaskPrediction { mean, cov: sym })
    }

    /// Joint posterior at a normalized input, in response units.
    pub fn predict(&self, xstar: &[f64], source: Option<&str>) -> Result<MultiTaskPrediction> {
        let p = self.predict_standardized(xstar, source)?;
        let g = p.mean.len();
        let std: Vec<f64> = self.norm.responses.iter().map(|r| r.std).collect();
        Ok(MultiTaskPrediction {
            mean: (0..g).map(|t| self.norm.destandardize(t, p.mean[t])).collect(),
            cov: DMatrix::from_fn(g, g, |a, b| p.cov[(a, b)] * std[a] * std[b]),
        })
    }

    pub fn predict_raw(&self, raw: &[f64], source: Option<&str>) -> Result<MultiTaskPrediction> {
        self.predict(&self.norm.scale_input(raw), source)
    }
}

/// Jointly fits ω, σ², per-task β, nugget, z (when fused) and the task
/// factor. Requires exactly two fully observed tasks.
pub fn fit_mt(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    sources: Option<&Sources>,
    cfg: &OptimizerConfig,
) -> Result<MultiTaskModel> {
    let norm = NormalizationSpec::identity(x.ncols(), y.ncols());
    fit_mt_normalized(x, y, sources, norm, cfg).map(|(m, _)| m)
}

pub fn fit_mt_normalized(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    sources: Option<&Sources>,
    norm: NormalizationSpec,
    cfg: &OptimizerConfig,
) -> Result<(MultiTaskModel, OptResult)> {
    cfg.validate()?;
    if y.ncols() != 2 {
        return Err(Error::Unsupported(format!("multi-task fit needs 2 tasks, got {}", y.ncols())));
    }
    if x.nrows() < 2 || y.nrows() != x.nrows() {
        return Err(Error::InvalidData(format!(
            "multi-task fit needs n >= 2 matching rows (x: {}, y: {})",
            x.nrows(),
            y.nrows()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("task responses must be fully observed".into()));
    }
    if let Some(s) = sources {
        kernels::check_source_count(s.labels.len())?;
    }
    let layout = Layout {
        dim: x.ncols(),
        tasks: y.ncols(),
        fused: sources.is_some(),
    };
    let src = sources.map(|s| s.index.as_slice());
    let problem = layout.problem(cfg);
    let objective = |v: &[f64]| {
        let hp = layout.unpack(v);
        nll_mt_with_grad(&hp, x, y, src)
            .ok()
            .map(|(f, g)| (f, layout.gradient(&hp, &g)))
    };
    let result = hyperopt::minimize(objective, &problem, cfg)?;
    let hp = layout.unpack(&result.best_params);
    let model = MultiTaskModel::new(x.clone(), y.clone(), sources.cloned(), hp, norm)?;
    Ok((model, result))
}
