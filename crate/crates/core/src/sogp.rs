//! Single-output Gaussian process with constant mean: marginal-likelihood
//! objective and gradient, multi-start fitting and posterior prediction.

use std::f64::consts::LN_10;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::dataset::{NormalizationSpec, Sources};
use crate::error::{Error, Result};
use crate::hyperopt::{self, BoxProblem, OptResult, OptimizerConfig};
use crate::kernels::{self, Hyperparams};

/// Negative predictive variances down to this value are treated as
/// round-off and clamped to zero.
pub const VARIANCE_ROUNDOFF: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    pub mean: f64,
    pub variance: f64,
}

impl PredictiveDistribution {
    pub fn std(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Gradient of the NLL in optimizer coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub omega: Vec<f64>,
    pub log10_sigma2: f64,
    pub beta: f64,
    pub log10_nugget: f64,
    pub z: Option<f64>,
}

impl Gradient {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.omega.clone();
        v.extend([self.log10_sigma2, self.beta, self.log10_nugget]);
        v.extend(self.z);
        v
    }
}

pub(crate) fn factorize(c: DMatrix<f64>, hp: &Hyperparams) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(c).ok_or_else(|| Error::Cholesky {
        hyperparams: hp.summary(),
    })
}

fn check_inputs(x: &DMatrix<f64>, y: &DVector<f64>, hp: &Hyperparams) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    if hp.beta.len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "single-output model needs one beta, got {}",
            hp.beta.len()
        )));
    }
    Ok(())
}

/// `½ log|C| + ½ (y − β)ᵀ C⁻¹ (y − β)`.
pub fn nll(hp: &Hyperparams, x: &DMatrix<f64>, y: &DVector<f64>, sources: Option<&[usize]>) -> Result<f64> {
    check_inputs(x, y, hp)?;
    let chol = factorize(kernels::cov_matrix(x, sources, hp)?, hp)?;
    let resid = y.add_scalar(-hp.beta[0]);
    let alpha = chol.solve(&resid);
    Ok(half_log_det(&chol) + 0.5 * resid.dot(&alpha))
}

pub(crate) fn half_log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum()
}

pub fn nll_grad(hp: &Hyperparams, x: &DMatrix<f64>, y: &DVector<f64>, sources: Option<&[usize]>) -> Result<Gradient> {
    nll_with_grad(hp, x, y, sources).map(|(_, g)| g)
}

/// NLL and its gradient via `½ tr((C⁻¹ − ααᵀ) ∂C)`.
pub fn nll_with_grad(
    hp: &Hyperparams,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    sources: Option<&[usize]>,
) -> Result<(f64, Gradient)> {
    check_inputs(x, y, hp)?;
    let k = kernels::kernel_matrix(x, sources, hp)?;
    let mut c = k.clone();
    for i in 0..c.nrows() {
        c[(i, i)] += hp.nugget;
    }
    let chol = factorize(c, hp)?;
    let resid = y.add_scalar(-hp.beta[0]);
    let alpha = chol.solve(&resid);
    let value = half_log_det(&chol) + 0.5 * resid.dot(&alpha);

    let mut w = chol.inverse();
    w -= &alpha * alpha.transpose();

    let n = x.nrows();
    let mut omega = vec![0.0; hp.omega.len()];
    let mut sig = 0.0;
    let mut zg = 0.0;
    let z = hp.z.unwrap_or(0.0);
    for i in 0..n {
        sig += 0.5 * w[(i, i)] * k[(i, i)];
        for j in 0..i {
            // Off-diagonal entries appear twice in the symmetric trace.
            let wk = w[(i, j)] * k[(i, j)];
            sig += wk;
            for (d, om) in hp.omega.iter().enumerate() {
                let diff = x[(i, d)] - x[(j, d)];
                omega[d] -= wk * LN_10 * 10f64.powf(*om) * diff * diff;
            }
            if let (Some(src), Some(_)) = (sources, hp.z) {
                if src[i] != src[j] {
                    zg -= wk * 2.0 * z;
                }
            }
        }
    }
    let trace_w: f64 = w.diagonal().sum();
    let grad = Gradient {
        omega,
        log10_sigma2: LN_10 * sig,
        beta: -alpha.sum(),
        log10_nugget: 0.5 * trace_w * hp.nugget * LN_10,
        z: hp.z.map(|_| zg),
    };
    Ok((value, grad))
}

/// Packs hyperparameters as `[ω…, log10 σ², β, log10 nugget, z?]`.
pub(crate) fn pack(hp: &Hyperparams) -> Vec<f64> {
    let mut v = hp.omega.clone();
    v.extend([hp.sigma2.log10(), hp.beta[0], hp.nugget.log10()]);
    v.extend(hp.z);
    v
}

pub(crate) fn unpack(v: &[f64], dim: usize, fused: bool) -> Hyperparams {
    Hyperparams {
        omega: v[..dim].to_vec(),
        sigma2: 10f64.powf(v[dim]),
        beta: vec![v[dim + 1]],
        nugget: 10f64.powf(v[dim + 2]),
        z: fused.then(|| v[dim + 3]),
        task_factor: None,
    }
}

pub(crate) fn problem(dim: usize, fused: bool, cfg: &OptimizerConfig) -> BoxProblem {
    let b = &cfg.bounds;
    let mut lower = vec![b.omega.0; dim];
    let mut upper = vec![b.omega.1; dim];
    lower.extend([b.log10_sigma2.0, b.beta.0, b.log10_nugget.0]);
    upper.extend([b.log10_sigma2.1, b.beta.1, b.log10_nugget.1]);
    if fused {
        lower.push(b.z.0);
        upper.push(b.z.1);
    }
    let mut init = Hyperparams::initial(dim, fused);
    init.nugget = 1e-4;
    BoxProblem {
        lower,
        upper,
        init: pack(&init),
    }
}

/// Fitted single-output model. Immutable once built.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    x: DMatrix<f64>,
    y: DVector<f64>,
    sources: Option<Sources>,
    hp: Hyperparams,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    norm: NormalizationSpec,
}

impl TrainedModel {
    /// Factorizes the covariance for fixed hyperparameters. A failed
    /// factorization is retried once with ten times the nugget.
    pub fn new(
        x: DMatrix<f64>,
        y: DVector<f64>,
        sources: Option<Sources>,
        mut hp: Hyperparams,
        norm: NormalizationSpec,
    ) -> Result<Self> {
        hp.validate()?;
        check_inputs(&x, &y, &hp)?;
        if norm.n_features() != x.ncols() || norm.responses.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: x.ncols(),
                got: norm.n_features(),
            });
        }
        let src = sources.as_ref().map(|s| s.index.as_slice());
        if hp.z.is_some() && sources.is_none() {
            return Err(Error::InvalidArgument("fused hyperparameters need source labels".into()));
        }
        if let Some(s) = &sources {
            kernels::check_source_count(s.labels.len())?;
        }
        let chol = match Cholesky::new(kernels::cov_matrix(&x, src, &hp)?) {
            Some(c) => c,
            None => {
                hp.nugget = (hp.nugget * 10.0).max(1e-8);
                factorize(kernels::cov_matrix(&x, src, &hp)?, &hp)?
            }
        };
        let alpha = chol.solve(&y.add_scalar(-hp.beta[0]));
        Ok(Self {
            x,
            y,
            sources,
            hp,
            chol,
            alpha,
            norm,
        })
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hp
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn sources(&self) -> Option<&Sources> {
        self.sources.as_ref()
    }

    pub fn normalization(&self) -> &NormalizationSpec {
        &self.norm
    }

    pub fn cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    pub fn is_fused(&self) -> bool {
        self.hp.z.is_some()
    }

    pub fn nll(&self) -> f64 {
        half_log_det(&self.chol) + 0.5 * self.y.add_scalar(-self.hp.beta[0]).dot(&self.alpha)
    }

    pub(crate) fn resolve_source(&self, source: Option<&str>) -> Result<Option<usize>> {
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

    /// Posterior in model (standardized) space.
    pub fn predict_standardized(&self, xstar: &[f64], source: Option<&str>) -> Result<PredictiveDistribution> {
        let s = self.resolve_source(source)?;
        let src = self.sources.as_ref().map(|s| s.index.as_slice());
        let k = kernels::cross_cov(&self.x, src, xstar, s, &self.hp)?;
        let mean = self.hp.beta[0] + k.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&k)
            .expect("Cholesky factor has positive diagonal");
        let variance = clamp_variance(self.hp.sigma2 + self.hp.nugget - v.norm_squared())?;
        Ok(PredictiveDistribution { mean, variance })
    }

    /// Posterior at a normalized input, in response units.
    pub fn predict(&self, xstar: &[f64], source: Option<&str>) -> Result<PredictiveDistribution> {
        let p = self.predict_standardized(xstar, source)?;
        Ok(PredictiveDistribution {
            mean: self.norm.destandardize(0, p.mean),
            variance: self.norm.destandardize_var(0, p.variance),
        })
    }

    /// Posterior at a raw-unit input.
    pub fn predict_raw(&self, raw: &[f64], source: Option<&str>) -> Result<PredictiveDistribution> {
        self.predict(&self.norm.scale_input(raw), source)
    }
}

pub(crate) fn clamp_variance(v: f64) -> Result<f64> {
    if v >= 0.0 {
        Ok(v)
    } else if v >= -VARIANCE_ROUNDOFF {
        Ok(0.0)
    } else {
        Err(Error::NegativeVariance(v))
    }
}

/// Fits by multi-start NLL minimization in model space. Predictions are
/// reported through the identity normalization; use [`fit_normalized`] to
/// attach a dataset's transforms.
pub fn fit(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    sources: Option<&Sources>,
    cfg: &OptimizerConfig,
) -> Result<TrainedModel> {
    let norm = NormalizationSpec::identity(x.ncols(), 1);
    fit_normalized(x, y, sources, norm, cfg).map(|(m, _)| m)
}

pub fn fit_normalized(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    sources: Option<&Sources>,
    norm: NormalizationSpec,
    cfg: &OptimizerConfig,
) -> Result<(TrainedModel, OptResult)> {
    cfg.validate()?;
    if x.nrows() < 2 {
        return Err(Error::InvalidData(format!("fit needs at least 2 rows, got {}", x.nrows())));
    }
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    if let Some(s) = sources {
        kernels::check_source_count(s.labels.len())?;
        if s.index.len() != x.nrows() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                got: s.index.len(),
            });
        }
    }
    let dim = x.ncols();
    let fused = sources.is_some();
    let src = sources.map(|s| s.index.as_slice());
    let problem = problem(dim, fused, cfg);
    let objective = |v: &[f64]| {
        let hp = unpack(v, dim, fused);
        nll_with_grad(&hp, x, y, src).ok().map(|(f, g)| (f, g.to_vec()))
    };
    let result = hyperopt::minimize(objective, &problem, cfg)?;
    let hp = unpack(&result.best_params, dim, fused);
    let model = TrainedModel::new(x.clone(), y.clone(), sources.cloned(), hp, norm)?;
    Ok((model, result))
}
