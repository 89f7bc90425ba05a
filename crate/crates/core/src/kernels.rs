//! Gaussian correlation over continuous inputs, a one-parameter latent
//! embedding for the material source, task covariance and Kronecker
//! assembly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel and mean hyperparameters.
///
/// `omega` holds log10 inverse squared lengthscales on normalized inputs.
/// `beta` holds one constant mean per task. `z` is present only for fused
/// models; `task_factor` only for multi-task models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub omega: Vec<f64>,
    pub sigma2: f64,
    pub beta: Vec<f64>,
    pub nugget: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_matrix_rows")]
    pub task_factor: Option<DMatrix<f64>>,
}

impl Hyperparams {
    /// Canonical starting point: ω = 0, σ² = 1, β = 0, nugget = 1e-4,
    /// z = 1 when fused.
    pub fn initial(dim: usize, fused: bool) -> Self {
        Self {
            omega: vec![0.0; dim],
            sigma2: 1.0,
            beta: vec![0.0],
            nugget: 1e-4,
            z: fused.then_some(1.0),
            task_factor: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        if !(self.nugget >= 0.0 && self.nugget.is_finite()) {
            return Err(Error::InvalidArgument(format!("nugget must be >= 0, got {}", self.nugget)));
        }
        if self.omega.iter().chain(&self.beta).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite omega or beta".into()));
        }
        if let Some(z) = self.z {
            if !z.is_finite() {
                return Err(Error::InvalidArgument("non-finite z".into()));
            }
        }
        if let Some(l) = &self.task_factor {
            task_cov(l)?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        serde_json::to_string(self).unwrap_or_else(|_| format!("{self:?}"))
    }
}

/// Gaussian correlation `exp(-Σ 10^ω_i (x_i - x2_i)²)`.
pub fn rbf_corr(x: &[f64], x2: &[f64], omega: &[f64]) -> Result<f64> {
    if x.len() != x2.len() || x.len() != omega.len() {
        return Err(Error::DimensionMismatch {
            expected: omega.len(),
            got: if x.len() != omega.len() { x.len() } else { x2.len() },
        });
    }
    Ok(rbf_unchecked(x.iter().copied(), x2.iter().copied(), omega))
}

pub(crate) fn rbf_unchecked(
    x: impl Iterator<Item = f64>,
    x2: impl Iterator<Item = f64>,
    omega: &[f64],
) -> f64 {
    let s: f64 = x
        .zip(x2)
        .zip(omega)
        .map(|((a, b), w)| 10f64.powf(*w) * (a - b) * (a - b))
        .sum();
    (-s).exp()
}

/// Latent coordinate of a source index: the first source sits at 0, the
/// second at `z`.
pub(crate) fn latent(source: usize, z: f64) -> f64 {
    if source == 0 {
        0.0
    } else {
        z
    }
}

pub(crate) fn source_corr_index(a: usize, b: usize, z: f64) -> f64 {
    let d = latent(a, z) - latent(b, z);
    (-d * d).exp()
}

/// Correlation between two material labels under the one-parameter
/// embedding.
pub fn source_corr(labels: &[String], s: &str, s2: &str, z: f64) -> Result<f64> {
    check_source_count(labels.len())?;
    let find = |name: &str| {
        labels
            .iter()
            .position(|l| l == name)
            .ok_or_else(|| Error::UnknownSource(name.to_string()))
    };
    Ok(source_corr_index(find(s)?, find(s2)?, z))
}

pub(crate) fn check_source_count(n: usize) -> Result<()> {
    if n > 2 {
        return Err(Error::Unsupported(format!(
            "{n} sources; the latent embedding supports at most 2"
        )));
    }
    Ok(())
}

/// Noise-free covariance σ²·r·(source correlation).
pub fn kernel_matrix(x: &DMatrix<f64>, sources: Option<&[usize]>, hp: &Hyperparams) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    if x.ncols() != hp.omega.len() {
        return Err(Error::DimensionMismatch {
            expected: hp.omega.len(),
            got: x.ncols(),
        });
    }
    if let Some(s) = sources {
        if s.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: s.len() });
        }
    }
    let scale: Vec<f64> = hp.omega.iter().map(|w| 10f64.powf(*w)).collect();
    let z = hp.z.unwrap_or(0.0);
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = hp.sigma2;
        for j in 0..i {
            let mut s = 0.0;
            for (c, w) in scale.iter().enumerate() {
                let d = x[(i, c)] - x[(j, c)];
                s += w * d * d;
            }
            let mut v = hp.sigma2 * (-s).exp();
            if let (Some(src), Some(_)) = (sources, hp.z) {
                v *= source_corr_index(src[i], src[j], z);
            }
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite covariance entry".into()));
    }
    Ok(k)
}

/// Training covariance: kernel matrix plus nugget on the diagonal.
pub fn cov_matrix(x: &DMatrix<f64>, sources: Option<&[usize]>, hp: &Hyperparams) -> Result<DMatrix<f64>> {
    let mut c = kernel_matrix(x, sources, hp)?;
    for i in 0..c.nrows() {
        c[(i, i)] += hp.nugget;
    }
    Ok(c)
}

/// Covariance between one query point and every training row.
pub fn cross_cov(
    x: &DMatrix<f64>,
    sources: Option<&[usize]>,
    xstar: &[f64],
    source_star: Option<usize>,
    hp: &Hyperparams,
) -> Result<DVector<f64>> {
    if xstar.len() != x.ncols() {
        return Err(Error::DimensionMismatch {
            expected: x.ncols(),
            got: xstar.len(),
        });
    }
    let n = x.nrows();
    let mut k = DVector::zeros(n);
    for i in 0..n {
        let mut v = hp.sigma2 * rbf_unchecked(x.row(i).iter().copied(), xstar.iter().copied(), &hp.omega);
        if let (Some(src), Some(ss), Some(z)) = (sources, source_star, hp.z) {
            v *= source_corr_index(src[i], ss, z);
        }
        k[i] = v;
    }
    Ok(k)
}

/// G×G task covariance C_T = L·Lᵀ.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskCov {
    pub matrix: DMatrix<f64>,
}

impl TaskCov {
    /// Off-diagonal entry scaled to a correlation.
    pub fn correlation(&self, a: usize, b: usize) -> f64 {
        let m = &self.matrix;
        m[(a, b)] / (m[(a, a)] * m[(b, b)]).sqrt()
    }
}

pub fn task_cov(factor: &DMatrix<f64>) -> Result<TaskCov> {
    if !factor.is_square() {
        return Err(Error::InvalidArgument("task factor must be square".into()));
    }
    for i in 0..factor.nrows() {
        if !(factor[(i, i)] > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "task factor diagonal entry {i} must be positive, got {}",
                factor[(i, i)]
            )));
        }
        for j in i + 1..factor.ncols() {
            if factor[(i, j)] != 0.0 {
                return Err(Error::InvalidArgument("task factor must be lower-triangular".into()));
            }
        }
    }
    Ok(TaskCov {
        matrix: factor * factor.transpose(),
    })
}

/// Kronecker product; block (i, j) of the result is `a[(i, j)] * b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = a.shape();
    let (p, q) = b.shape();
    let mut out = DMatrix::zeros(m * p, n * q);
    for i in 0..m {
        for j in 0..n {
            let aij = a[(i, j)];
            out.view_mut((i * p, j * q), (p, q)).copy_from(&(b * aij));
        }
    }
    out
}

pub(crate) mod opt_matrix_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref()
            .map(super::to_rows)
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
        let rows: Option<Vec<Vec<f64>>> = Option::deserialize(d)?;
        rows.map(|r| super::from_rows(&r).map_err(serde::de::Error::custom))
            .transpose()
    }
}

pub(crate) fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn from_rows(rows: &[Vec<f64>]) -> std::result::Result<DMatrix<f64>, String> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err("ragged matrix rows".into());
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}
