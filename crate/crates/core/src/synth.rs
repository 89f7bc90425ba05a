//! Seeded synthetic process-property data for benchmarks and tests.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::{Dataset, ProcessPoint, Record, Validation, SR_LEVELS};
use crate::error::Result;
use crate::kernels::{self, Hyperparams};

/// One draw from a zero-mean GP with Gaussian kernel at the rows of `x`.
pub fn gp_draw<R: Rng>(x: &DMatrix<f64>, omega: &[f64], sigma2: f64, rng: &mut R) -> DVector<f64> {
    let hp = Hyperparams {
        omega: omega.to_vec(),
        sigma2,
        beta: vec![0.0],
        nugget: 1e-8 * sigma2,
        z: None,
        task_factor: None,
    };
    let c = kernels::cov_matrix(x, None, &hp).expect("finite kernel");
    let l = c.cholesky().expect("jittered kernel is positive definite").l();
    let e = DVector::from_fn(x.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
    l * e
}

/// Process settings drawn uniformly over the LPBF design box, with sr
/// split evenly between the two levels.
pub fn design_points<R: Rng>(n: usize, material: &str, rng: &mut R) -> Vec<ProcessPoint> {
    let v = Validation::default();
    let mut u = |(lo, hi): (f64, f64)| lo + (hi - lo) * rng.random::<f64>();
    (0..n)
        .map(|i| ProcessPoint {
            p: u(v.p),
            v: u(v.v),
            l: u(v.l),
            h: u(v.h),
            sr: SR_LEVELS[i % 2],
            material: material.to_string(),
        })
        .collect()
}

/// Design-box coordinates of process points, each in [0, 1].
pub fn unit_coordinates(points: &[ProcessPoint]) -> DMatrix<f64> {
    let v = Validation::default();
    let boxes = [v.p, v.v, v.l, v.h, (SR_LEVELS[0], SR_LEVELS[1])];
    DMatrix::from_fn(points.len(), 5, |i, j| {
        let (lo, hi) = boxes[j];
        (points[i].features()[j] - lo) / (hi - lo)
    })
}

/// Two materials whose response functions have cross-source correlation
/// `rho`: `f_B = rho·f_A + sqrt(1 - rho²)·g` with `f_A`, `g` independent
/// GP draws over the five process inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoSourceConfig {
    pub n_per_source: usize,
    pub rho: f64,
    pub omega: Vec<f64>,
    pub noise_std: f64,
    pub seed: u64,
    pub labels: [String; 2],
}

impl Default for TwoSourceConfig {
    fn default() -> Self {
        Self {
            n_per_source: 40,
            rho: 0.0,
            omega: vec![0.3; 5],
            noise_std: 0.05,
            seed: 0,
            labels: ["A".to_string(), "B".to_string()],
        }
    }
}

/// Builds the two-source dataset. `phi` carries the correlated functions
/// (offset to stay positive); `hv` carries an independent pair scaled to
/// hardness units.
pub fn two_source_dataset(cfg: &TwoSourceConfig) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_per_source;
    let mut points = design_points(n, &cfg.labels[0], &mut rng);
    points.extend(design_points(n, &cfg.labels[1], &mut rng));
    let x = unit_coordinates(&points);

    let fa = gp_draw(&x, &cfg.omega, 1.0, &mut rng);
    let g = gp_draw(&x, &cfg.omega, 1.0, &mut rng);
    let ha = gp_draw(&x, &cfg.omega, 1.0, &mut rng);
    let hb = gp_draw(&x, &cfg.omega, 1.0, &mut rng);
    let mix = (1.0 - cfg.rho * cfg.rho).max(0.0).sqrt();

    let records = points
        .into_iter()
        .enumerate()
        .map(|(i, point)| {
            let second = i >= n;
            let f = if second { cfg.rho * fa[i] + mix * g[i] } else { fa[i] };
            let h = if second { hb[i] } else { ha[i] };
            let e1: f64 = rng.sample(StandardNormal);
            let e2: f64 = rng.sample(StandardNormal);
            Record {
                sample_id: format!("{}", i % n + 1),
                point,
                phi: 10.0 + 2.0 * (f + cfg.noise_std * e1),
                hv: 300.0 + 20.0 * (h + cfg.noise_std * e2),
            }
        })
        .collect();
    Dataset::from_records(records, &Validation::disabled())
}
