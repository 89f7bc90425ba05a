//! Multi-start, box-constrained quasi-Newton minimization.
//!
//! Each restart runs a projected BFGS iteration: variables sitting on a
//! bound with the gradient pointing outward are frozen, the inverse-Hessian
//! step is taken over the remaining variables, and a backtracking Armijo
//! search along the projected path accepts only non-increasing objective
//! values. Restart 0 starts from the problem's canonical point; the rest
//! are drawn uniformly inside the box from a per-restart seeded stream, so
//! the outcome does not depend on execution order.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Box limits for each hyperparameter family, in optimizer coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperBounds {
    pub omega: (f64, f64),
    pub log10_sigma2: (f64, f64),
    pub beta: (f64, f64),
    pub log10_nugget: (f64, f64),
    pub z: (f64, f64),
    /// Off-diagonal entries of the task factor.
    pub task_offdiag: (f64, f64),
    /// log10 of the free task-factor diagonal entries.
    pub log10_task_diag: (f64, f64),
}

impl Default for HyperBounds {
    fn default() -> Self {
        Self {
            omega: (-4.0, 3.0),
            log10_sigma2: (-4.0, 4.0),
            beta: (-10.0, 10.0),
            log10_nugget: (-8.0, 2.0),
            z: (0.0, 10.0),
            task_offdiag: (-10.0, 10.0),
            log10_task_diag: (-3.0, 2.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub n_restarts: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub seed: u64,
    pub bounds: HyperBounds,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            n_restarts: 8,
            max_iters: 500,
            grad_tol: 1e-6,
            seed: 0,
            bounds: HyperBounds::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_restarts == 0 {
            return Err(Error::InvalidArgument("n_restarts must be >= 1".into()));
        }
        let b = &self.bounds;
        for (name, (lo, hi)) in [
            ("omega", b.omega),
            ("log10_sigma2", b.log10_sigma2),
            ("beta", b.beta),
            ("log10_nugget", b.log10_nugget),
            ("z", b.z),
            ("task_offdiag", b.task_offdiag),
            ("log10_task_diag", b.log10_task_diag),
        ] {
            if !(lo < hi) {
                return Err(Error::InvalidArgument(format!("bound {name}: lower {lo} >= upper {hi}")));
            }
        }
        Ok(())
    }
}

/// A box-constrained problem: bounds plus the canonical starting point.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxProblem {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub init: Vec<f64>,
}

impl BoxProblem {
    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    fn clamp(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect()
    }

    /// Gradient with components that point out of the box at an active
    /// bound set to zero.
    pub fn projected_gradient(&self, x: &[f64], g: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(g)
            .zip(self.lower.iter().zip(&self.upper))
            .map(|((&xi, &gi), (&lo, &hi))| {
                if (xi <= lo && gi > 0.0) || (xi >= hi && gi < 0.0) {
                    0.0
                } else {
                    gi
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestartStatus {
    /// Projected gradient norm fell below `grad_tol`.
    Converged,
    /// Iteration budget exhausted.
    MaxIters,
    /// Line search could not decrease the objective further.
    Stalled,
    /// Objective not evaluable at the starting point; restart skipped.
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartTrace {
    pub index: usize,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub status: RestartStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub best_params: Vec<f64>,
    pub best_value: f64,
    pub best_restart: usize,
    pub trace: Vec<RestartTrace>,
}

impl OptResult {
    pub fn best(&self) -> &RestartTrace {
        &self.trace[self.best_restart]
    }
}

/// Starting points used by each restart.
pub fn restart_starts(problem: &BoxProblem, cfg: &OptimizerConfig) -> Vec<Vec<f64>> {
    (0..cfg.n_restarts)
        .map(|r| {
            if r == 0 {
                let mut x = problem.init.clone();
                problem.clamp(&mut x);
                x
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(r as u64);
                problem.sample(&mut rng)
            }
        })
        .collect()
}

/// Minimizes `f` over the box. `f` returns `None` where the objective is
/// not defined (e.g. a covariance that fails to factorize).
pub fn minimize<F>(f: F, problem: &BoxProblem, cfg: &OptimizerConfig) -> Result<OptResult>
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)> + Sync,
{
    if cfg.n_restarts == 0 {
        return Err(Error::InvalidArgument("n_restarts must be >= 1".into()));
    }
    let n = problem.dim();
    if problem.upper.len() != n || problem.init.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: problem.init.len(),
        });
    }
    if problem.lower.iter().zip(&problem.upper).any(|(lo, hi)| !(lo < hi)) {
        return Err(Error::InvalidArgument("every bound needs lower < upper".into()));
    }

    let starts = restart_starts(problem, cfg);
    let trace: Vec<RestartTrace> = par::map(starts.into_iter().enumerate().collect(), |(index, start)| {
        run_restart(&f, problem, cfg, index, start)
    });

    let mut best: Option<usize> = None;
    for t in &trace {
        if t.status == RestartStatus::Infeasible {
            continue;
        }
        match best {
            Some(b) if trace[b].value <= t.value => {}
            _ => best = Some(t.index),
        }
    }
    let best_restart =
        best.ok_or_else(|| Error::Optimization(format!("all {} restarts failed", cfg.n_restarts)))?;
    Ok(OptResult {
        best_params: trace[best_restart].end.clone(),
        best_value: trace[best_restart].value,
        best_restart,
        trace,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 50;

fn run_restart<F>(f: &F, problem: &BoxProblem, cfg: &OptimizerConfig, index: usize, start: Vec<f64>) -> RestartTrace
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = problem.dim();
    let mut x = start.clone();
    problem.clamp(&mut x);

    let (mut fx, mut g) = match f(&x) {
        Some((v, g)) if v.is_finite() && g.iter().all(|d| d.is_finite()) => (v, g),
        _ => {
            return RestartTrace {
                index,
                start,
                end: x,
                value: f64::INFINITY,
                grad_norm: f64::NAN,
                iterations: 0,
                status: RestartStatus::Infeasible,
            }
        }
    };

    let mut h = DMatrix::<f64>::identity(n, n);
    let mut status = RestartStatus::MaxIters;
    let mut iterations = 0;
    let mut fresh_h = true;

    while iterations < cfg.max_iters {
        let pg = problem.projected_gradient(&x, &g);
        if norm(&pg) <= cfg.grad_tol {
            status = RestartStatus::Converged;
            break;
        }

        let free: Vec<bool> = pg.iter().map(|&v| v != 0.0).collect();
        let mut d = vec![0.0; n];
        for i in 0..n {
            if !free[i] {
                continue;
            }
            d[i] = -(0..n).filter(|&j| free[j]).map(|j| h[(i, j)] * g[j]).sum::<f64>();
        }
        if dot(&d, &pg) >= 0.0 {
            h = DMatrix::identity(n, n);
            fresh_h = true;
            d = pg.iter().map(|v| -v).collect();
        }

        let mut t = if fresh_h { (1.0 / norm(&d)).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + t * di).collect();
            problem.clamp(&mut trial);
            let step: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            if norm(&step) == 0.0 {
                break;
            }
            if let Some((ft, gt)) = f(&trial) {
                let decrease = dot(&g, &step);
                let ok = ft.is_finite()
                    && gt.iter().all(|v| v.is_finite())
                    && if decrease < 0.0 {
                        ft <= fx + ARMIJO_C1 * decrease
                    } else {
                        ft < fx
                    };
                if ok {
                    accepted = Some((trial, ft, gt, step));
                    break;
                }
            }
            t *= 0.5;
        }

        iterations += 1;
        let Some((xn, fnew, gn, s)) = accepted else {
            if fresh_h {
                status = RestartStatus::Stalled;
                break;
            }
            h = DMatrix::identity(n, n);
            fresh_h = true;
            continue;
        };

        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if fresh_h {
                // Scale the identity before the first update.
                h *= sy / dot(&y, &y);
            }
            let sv = DVector::from_column_slice(&s);
            let yv = DVector::from_column_slice(&y);
            let rho = 1.0 / sy;
            let hy = &h * &yv;
            let yhy = yv.dot(&hy);
            h += (&sv * sv.transpose()) * (rho * rho * yhy + rho)
                - (&hy * sv.transpose() + &sv * hy.transpose()) * rho;
            fresh_h = false;
        }

        let small_step = s
            .iter()
            .zip(problem.lower.iter().zip(&problem.upper))
            .all(|(si, (lo, hi))| si.abs() <= 1e-13 * (hi - lo));
        x = xn;
        fx = fnew;
        g = gn;
        if small_step {
            status = RestartStatus::Stalled;
            break;
        }
    }

    let grad_norm = norm(&problem.projected_gradient(&x, &g));
    if status == RestartStatus::MaxIters && grad_norm <= cfg.grad_tol {
        status = RestartStatus::Converged;
    }
    RestartTrace {
        index,
        start,
        end: x,
        value: fx,
        grad_norm,
        iterations,
        status,
    }
}
