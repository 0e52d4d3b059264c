//! Comparison regressors: ordinary least squares and ε-insensitive
//! support-vector regression with an RBF kernel.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{clamp_prediction, Scaler};

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("need at least {need} training points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("expected {expected} inputs, got {got}")]
    InputWidth { expected: usize, got: usize },
}

/// Ridge added to the Gram matrix when it is singular or nearly so.
pub const OLS_RIDGE: f64 = 1e-8;
const OLS_CONDITION_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    /// Coefficients on standardized inputs.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub scaler: Scaler,
    pub ridge_fallback: bool,
}

impl LinearModel {
    /// Coefficients expressed on the raw input scale.
    pub fn raw_coefficients(&self) -> Vec<f64> {
        self.coefficients.iter().zip(&self.scaler.std).map(|(c, s)| c / s).collect()
    }

    pub fn forward_batch(&self, x: &DMatrix<f64>) -> Result<DVector<f64>, BaselineError> {
        check_width(x, self.coefficients.len())?;
        let beta = DVector::from_column_slice(&self.coefficients);
        Ok((self.scaler.transform(x) * beta).add_scalar(self.intercept))
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>, BaselineError> {
        Ok(self.forward_batch(x)?.map(clamp_prediction))
    }
}

fn check_width(x: &DMatrix<f64>, expected: usize) -> Result<(), BaselineError> {
    if x.ncols() != expected {
        return Err(BaselineError::InputWidth { expected, got: x.ncols() });
    }
    Ok(())
}

/// Least squares on standardized inputs via the normal equations. The
/// intercept is the target mean since standardized columns are centred.
pub fn fit_ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<LinearModel, BaselineError> {
    if x.nrows() < 2 {
        return Err(BaselineError::TooFewPoints { need: 2, got: x.nrows() });
    }
    let scaler = Scaler::fit(x);
    let xs = scaler.transform(x);
    let y_mean = y.mean();
    let yc = y.add_scalar(-y_mean);
    let gram = xs.tr_mul(&xs);
    let rhs = xs.tr_mul(&yc);

    let well_conditioned = gram.clone().cholesky().filter(|c| {
        let d = c.l_dirty().diagonal().map(|v| v * v);
        d.min() > OLS_CONDITION_FLOOR * d.max()
    });
    let (beta, ridge_fallback) = match well_conditioned {
        Some(c) => (c.solve(&rhs), false),
        None => {
            let mut g = gram;
            for i in 0..g.nrows() {
                g[(i, i)] += OLS_RIDGE;
            }
            let c = g.cholesky().expect("ridge-regularized Gram matrix is positive definite");
            (c.solve(&rhs), true)
        }
    };
    Ok(LinearModel {
        coefficients: beta.as_slice().to_vec(),
        intercept: y_mean,
        scaler,
        ridge_fallback,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvrConfig {
    pub c: f64,
    pub epsilon: f64,
    /// RBF width `γ_k` in `exp(−γ_k‖a−b‖²)`.
    pub gamma: f64,
    pub tolerance: f64,
}

impl Default for SvrConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            epsilon: 0.005,
            gamma: 1.0 / 24.0,
            tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    /// Support vectors on the standardized scale.
    pub support_vectors: Vec<Vec<f64>>,
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
    pub c: f64,
    pub epsilon: f64,
    pub scaler: Scaler,
    /// False when the update cap was hit first; the model is the best found.
    pub converged: bool,
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

impl SvrModel {
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> Result<DVector<f64>, BaselineError> {
        check_width(x, self.scaler.mean.len())?;
        let xs = self.scaler.transform(x);
        Ok(DVector::from_iterator(
            xs.nrows(),
            xs.row_iter().map(|r| {
                let r: Vec<f64> = r.iter().copied().collect();
                self.support_vectors
                    .iter()
                    .zip(&self.dual_coefs)
                    .map(|(sv, c)| c * rbf(sv, &r, self.gamma))
                    .sum::<f64>()
                    + self.bias
            }),
        ))
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>, BaselineError> {
        Ok(self.forward_batch(x)?.map(clamp_prediction))
    }
}

/// Diagnostics of one SVR fit.
#[derive(Debug, Clone)]
pub struct SvrFit {
    pub model: SvrModel,
    pub updates: usize,
    /// Dual objective (maximization form) after each pair update.
    pub dual_objective: Vec<f64>,
}

const TAU: f64 = 1e-12;

/// Pairwise dual solver over the 2n-variable ε-SVR problem
///
/// ```text
/// min ½ aᵀQa + pᵀa   s.t.  sᵀa = 0,  0 ≤ a ≤ C
/// ```
///
/// with signs `s = (+1…, −1…)`, `p = (ε − y, ε + y)` and
/// `Q_ij = s_i s_j K(x_i, x_j)`. Working pairs are the maximal violating pair
/// with second-order selection of the partner.
struct SmoSolver<'a> {
    n: usize,
    kernel: &'a DMatrix<f64>,
    c: f64,
    alpha: Vec<f64>,
    grad: Vec<f64>,
    p: Vec<f64>,
}

impl SmoSolver<'_> {
    fn sign(&self, t: usize) -> f64 {
        if t < self.n {
            1.0
        } else {
            -1.0
        }
    }

    fn q(&self, a: usize, b: usize) -> f64 {
        self.sign(a) * self.sign(b) * self.kernel[(a % self.n, b % self.n)]
    }

    fn in_up(&self, t: usize) -> bool {
        (self.sign(t) > 0.0 && self.alpha[t] < self.c) || (self.sign(t) < 0.0 && self.alpha[t] > 0.0)
    }

    fn in_low(&self, t: usize) -> bool {
        (self.sign(t) > 0.0 && self.alpha[t] > 0.0) || (self.sign(t) < 0.0 && self.alpha[t] < self.c)
    }

    /// Minimization-form objective `½ aᵀQa + pᵀa`.
    fn objective(&self) -> f64 {
        self.alpha
            .iter()
            .zip(self.grad.iter().zip(&self.p))
            .map(|(a, (g, p))| 0.5 * a * (g + p))
            .sum()
    }

    /// Returns the working pair, or `None` once the KKT gap is below `tol`.
    fn select(&self, tol: f64) -> Option<(usize, usize)> {
        let l = 2 * self.n;
        let mut g_max = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in (0..l).filter(|&t| self.in_up(t)) {
            let v = -self.sign(t) * self.grad[t];
            if v > g_max {
                g_max = v;
                i = t;
            }
        }
        if i == usize::MAX {
            return None;
        }
        let mut g_min = f64::INFINITY;
        let mut best = f64::INFINITY;
        let mut j = usize::MAX;
        for t in (0..l).filter(|&t| self.in_low(t)) {
            let v = -self.sign(t) * self.grad[t];
            g_min = g_min.min(v);
            let b = g_max - v;
            if b > 0.0 {
                let a = (self.q(i, i) + self.q(t, t) - 2.0 * self.sign(i) * self.sign(t) * self.q(i, t)).max(TAU);
                let score = -(b * b) / a;
                if score <= best {
                    best = score;
                    j = t;
                }
            }
        }
        if g_max - g_min < tol || j == usize::MAX {
            return None;
        }
        Some((i, j))
    }

    fn update(&mut self, i: usize, j: usize) {
        let c = self.c;
        let (old_i, old_j) = (self.alpha[i], self.alpha[j]);
        let q_ij = self.q(i, j);
        if self.sign(i) != self.sign(j) {
            let quad = (self.q(i, i) + self.q(j, j) + 2.0 * q_ij).max(TAU);
            let delta = (-self.grad[i] - self.grad[j]) / quad;
            let diff = old_i - old_j;
            let (mut ai, mut aj) = (old_i + delta, old_j + delta);
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
            self.alpha[i] = ai;
            self.alpha[j] = aj;
        } else {
            let quad = (self.q(i, i) + self.q(j, j) - 2.0 * q_ij).max(TAU);
            let delta = (self.grad[i] - self.grad[j]) / quad;
            let sum = old_i + old_j;
            let (mut ai, mut aj) = (old_i - delta, old_j + delta);
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
            self.alpha[i] = ai;
            self.alpha[j] = aj;
        }
        let (di, dj) = (self.alpha[i] - old_i, self.alpha[j] - old_j);
        for t in 0..2 * self.n {
            self.grad[t] += self.q(t, i) * di + self.q(t, j) * dj;
        }
    }

    /// Offset `ρ` of the decision function `Σ coef·K − ρ`.
    fn rho(&self) -> f64 {
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut free_sum, mut n_free) = (0.0, 0usize);
        for t in 0..2 * self.n {
            let yg = self.sign(t) * self.grad[t];
            let y_pos = self.sign(t) > 0.0;
            if self.alpha[t] >= self.c {
                if y_pos {
                    lb = lb.max(yg);
                } else {
                    ub = ub.min(yg);
                }
            } else if self.alpha[t] <= 0.0 {
                if y_pos {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                n_free += 1;
                free_sum += yg;
            }
        }
        if n_free > 0 {
            free_sum / n_free as f64
        } else {
            (ub + lb) / 2.0
        }
    }
}

/// Fits ε-SVR. Stops at KKT gap `cfg.tolerance` or after `10·n²` pair updates,
/// in which case the model is returned with `converged = false`.
pub fn fit_svr(x: &DMatrix<f64>, y: &DVector<f64>, cfg: &SvrConfig) -> Result<SvrFit, BaselineError> {
    let n = x.nrows();
    if n < 2 {
        return Err(BaselineError::TooFewPoints { need: 2, got: n });
    }
    let scaler = Scaler::fit(x);
    let xs = scaler.transform(x);
    let rows: Vec<Vec<f64>> = xs.row_iter().map(|r| r.iter().copied().collect()).collect();
    let kernel = DMatrix::from_fn(n, n, |a, b| rbf(&rows[a], &rows[b], cfg.gamma));

    let p: Vec<f64> = (0..2 * n)
        .map(|t| if t < n { cfg.epsilon - y[t] } else { cfg.epsilon + y[t - n] })
        .collect();
    let mut solver = SmoSolver {
        n,
        kernel: &kernel,
        c: cfg.c,
        alpha: vec![0.0; 2 * n],
        grad: p.clone(),
        p,
    };

    let cap = 10 * n * n;
    let mut updates = 0;
    let mut dual_objective = vec![-solver.objective()];
    let converged = loop {
        let Some((i, j)) = solver.select(cfg.tolerance) else {
            break true;
        };
        if updates >= cap {
            break false;
        }
        solver.update(i, j);
        updates += 1;
        dual_objective.push(-solver.objective());
    };

    let coefs: Vec<f64> = (0..n).map(|t| solver.alpha[t] - solver.alpha[t + n]).collect();
    let (support_vectors, dual_coefs): (Vec<_>, Vec<_>) = coefs
        .iter()
        .enumerate()
        .filter(|(_, c)| **c != 0.0)
        .map(|(t, c)| (rows[t].clone(), *c))
        .unzip();
    let bias = if dual_coefs.is_empty() { y.mean() } else { -solver.rho() };

    Ok(SvrFit {
        model: SvrModel {
            support_vectors,
            dual_coefs,
            bias,
            gamma: cfg.gamma,
            c: cfg.c,
            epsilon: cfg.epsilon,
            scaler,
            converged,
        },
        updates,
        dual_objective,
    })
}
