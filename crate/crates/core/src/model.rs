//! Single-hidden-layer network trained by Levenberg-Marquardt with Bayesian
//! regularization.
//!
//! The objective is `F = β·E_D + α·E_W` with `E_D = Σ eᵢ²` over prediction
//! errors and `E_W = Σ θⱼ²` over all weights. Each LM step solves
//!
//! ```text
//! (β·JᵀJ + (α + μ)·I) Δθ = −(β·Jᵀe + α·θ)
//! ```
//!
//! and after every accepted step the evidence update re-estimates α and β
//! from the effective number of parameters `γ = N − 2α·tr(H⁻¹)`, with the
//! Gauss-Newton Hessian `H = 2β·JᵀJ + 2α·I`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Physical range predictions are clamped to.
pub const PREDICTION_RANGE: (f64, f64) = (0.0, 0.5);
pub const MU_MAX: f64 = 1e10;
pub const MU_MIN: f64 = 1e-20;
pub const GAMMA_MIN: f64 = 1e-6;
pub const BETA_MIN: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("input scaler has not been fitted")]
    ScalerNotFitted,
    #[error("normal matrix is not positive definite")]
    SingularNormalMatrix,
    #[error("sum of squared errors is zero: the data is interpolated exactly")]
    DegenerateObjective,
    #[error("expected {expected} inputs, got {got}")]
    InputWidth { expected: usize, got: usize },
    #[error("need at least {need} training points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("non-finite value encountered during training")]
    NonFinite,
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// Per-feature z-scoring. Zero-variance features keep a unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows() as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut std = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let m = col.sum() / n;
            let s = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
            mean.push(m);
            std.push(if s > 0.0 && s.is_finite() { s } else { 1.0 });
        }
        Self { mean, std }
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col.apply(|v| *v = (*v - self.mean[j]) / self.std[j]);
        }
        out
    }

    pub fn transform_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// A least-squares problem in residual form, `e(θ) = prediction(θ) − target`.
pub trait LeastSquares {
    fn n_params(&self) -> usize;
    fn residuals(&self, theta: &DVector<f64>) -> DVector<f64>;
    /// `J[i][j] = ∂eᵢ/∂θⱼ`.
    fn jacobian(&self, theta: &DVector<f64>) -> DMatrix<f64>;
}

/// Residuals, Jacobian and the normal-equation pieces at one parameter vector.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub residuals: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub jtj: DMatrix<f64>,
    pub jte: DVector<f64>,
}

impl Linearization {
    pub fn at<P: LeastSquares + ?Sized>(problem: &P, theta: &DVector<f64>) -> Self {
        let residuals = problem.residuals(theta);
        let jacobian = problem.jacobian(theta);
        let jtj = jacobian.tr_mul(&jacobian);
        let jte = jacobian.tr_mul(&residuals);
        Self { residuals, jacobian, jtj, jte }
    }

    pub fn sse(&self) -> f64 {
        self.residuals.norm_squared()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub mu: f64,
    pub epoch: usize,
    pub e_d: f64,
    pub e_w: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub objective: f64,
}

impl TrainState {
    pub fn new(mu: f64, alpha: f64, beta: f64) -> Self {
        Self {
            mu,
            epoch: 0,
            e_d: 0.0,
            e_w: 0.0,
            gamma: 0.0,
            alpha,
            beta,
            objective: 0.0,
        }
    }

    pub fn objective_of(&self, e_d: f64, e_w: f64) -> f64 {
        self.beta * e_d + self.alpha * e_w
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub accepted: bool,
    pub objective_before: f64,
    pub objective_after: f64,
    /// The trial point; equal to the input when the step was rejected.
    pub theta: DVector<f64>,
    pub delta: DVector<f64>,
}

/// One damped Gauss-Newton step. On success `μ` shrinks tenfold (floored at
/// 1e-20), on failure it grows tenfold and `θ` is left unchanged.
pub fn lm_step<P: LeastSquares + ?Sized>(
    problem: &P,
    theta: &DVector<f64>,
    lin: &Linearization,
    state: &mut TrainState,
) -> Result<StepOutcome> {
    let n = theta.len();
    let e_w = theta.norm_squared();
    let before = state.objective_of(lin.sse(), e_w);

    let mut a = &lin.jtj * state.beta;
    for i in 0..n {
        a[(i, i)] += state.alpha + state.mu;
    }
    let rhs = -(&lin.jte * state.beta + theta * state.alpha);
    let delta = a
        .cholesky()
        .ok_or(ModelError::SingularNormalMatrix)?
        .solve(&rhs);

    let trial = theta + &delta;
    let after = state.objective_of(problem.residuals(&trial).norm_squared(), trial.norm_squared());
    let accepted = after.is_finite() && after < before;
    if accepted {
        state.mu = (state.mu * 0.1).max(MU_MIN);
    } else {
        state.mu *= 10.0;
    }
    Ok(StepOutcome {
        accepted,
        objective_before: before,
        objective_after: after,
        theta: if accepted { trial } else { theta.clone() },
        delta,
    })
}

fn trace_of_inverse(h: &DMatrix<f64>) -> f64 {
    let chol = h.clone().cholesky().or_else(|| {
        let mut jittered = h.clone();
        for i in 0..h.nrows() {
            jittered[(i, i)] += 1e-9;
        }
        jittered.cholesky()
    });
    match chol {
        Some(c) => c.inverse().trace(),
        None => f64::INFINITY,
    }
}

/// Re-estimates `γ`, `α` and `β` from the current errors and weights.
///
/// `jtj` is `JᵀJ` at the current weights, `n_params` the weight count and
/// `n` the number of training targets.
pub fn update_evidence(state: &TrainState, jtj: &DMatrix<f64>, n_params: usize, n: usize) -> Result<TrainState> {
    if state.e_d == 0.0 && (n as f64) > state.gamma {
        return Err(ModelError::DegenerateObjective);
    }
    let n_w = n_params as f64;
    let gamma = if state.alpha == 0.0 {
        n_w
    } else {
        let mut h = jtj * (2.0 * state.beta);
        for i in 0..n_params {
            h[(i, i)] += 2.0 * state.alpha;
        }
        n_w - 2.0 * state.alpha * trace_of_inverse(&h)
    };
    let gamma = if gamma.is_finite() { gamma.clamp(GAMMA_MIN, n_w) } else { GAMMA_MIN };
    let mut next = *state;
    next.gamma = gamma;
    if state.e_w > 0.0 {
        next.alpha = gamma / (2.0 * state.e_w);
    }
    next.beta = ((n as f64 - gamma) / (2.0 * state.e_d)).max(BETA_MIN);
    next.objective = next.objective_of(next.e_d, next.e_w);
    Ok(next)
}

/// 24→H→1 network (any input width): `out = w2ᵀ·tanh(W1·x̂ + b1) + b2`.
///
/// Weights are one flat vector: `W1` row-major (`n_hidden × n_in`), then
/// `b1`, `w2`, and the output bias last.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub n_in: usize,
    pub n_hidden: usize,
    pub weights: Vec<f64>,
    pub scaler: Option<Scaler>,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
}

pub fn n_weights(n_in: usize, n_hidden: usize) -> usize {
    (n_in + 1) * n_hidden + n_hidden + 1
}

struct Layout {
    n_in: usize,
    n_hidden: usize,
}

impl Layout {
    fn w1(&self, j: usize, k: usize) -> usize {
        j * self.n_in + k
    }
    fn b1(&self, j: usize) -> usize {
        self.n_hidden * self.n_in + j
    }
    fn w2(&self, j: usize) -> usize {
        self.n_hidden * (self.n_in + 1) + j
    }
    fn b2(&self) -> usize {
        self.n_hidden * (self.n_in + 2)
    }

    fn hidden(&self, theta: &[f64], x: &[f64], j: usize) -> f64 {
        let row = &theta[self.w1(j, 0)..self.w1(j, 0) + self.n_in];
        let pre: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + theta[self.b1(j)];
        pre.tanh()
    }

    fn output(&self, theta: &[f64], x: &[f64]) -> f64 {
        (0..self.n_hidden)
            .map(|j| theta[self.w2(j)] * self.hidden(theta, x, j))
            .sum::<f64>()
            + theta[self.b2()]
    }
}

impl MlpModel {
    /// Weights uniform in (−0.5, 0.5) from a generator seeded by `seed`;
    /// `α = 0`, `β = 1`, no scaler yet.
    pub fn init(n_in: usize, n_hidden: usize, seed: u64) -> Self {
        assert!(n_hidden >= 1, "at least one hidden unit");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..n_weights(n_in, n_hidden))
            .map(|_| rng.random_range(-0.5..0.5))
            .collect();
        Self {
            n_in,
            n_hidden,
            weights,
            scaler: None,
            alpha: 0.0,
            beta: 1.0,
            seed,
        }
    }

    pub fn n_weights(&self) -> usize {
        self.weights.len()
    }

    fn layout(&self) -> Layout {
        Layout { n_in: self.n_in, n_hidden: self.n_hidden }
    }

    /// Network output for a raw (unscaled) input.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        let scaler = self.scaler.as_ref().ok_or(ModelError::ScalerNotFitted)?;
        if x.len() != self.n_in {
            return Err(ModelError::InputWidth { expected: self.n_in, got: x.len() });
        }
        Ok(self.layout().output(&self.weights, &scaler.transform_row(x)))
    }

    /// Unclamped outputs for every row of `x`.
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        let scaler = self.scaler.as_ref().ok_or(ModelError::ScalerNotFitted)?;
        if x.ncols() != self.n_in {
            return Err(ModelError::InputWidth { expected: self.n_in, got: x.ncols() });
        }
        let xs = scaler.transform(x);
        let layout = self.layout();
        let rows: Vec<f64> = xs
            .row_iter()
            .map(|r| layout.output(&self.weights, r.transpose().as_slice()))
            .collect();
        Ok(DVector::from_vec(rows))
    }

    /// Outputs clamped to [`PREDICTION_RANGE`].
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok(self.forward_batch(x)?.map(clamp_prediction))
    }

    /// `∂output/∂θ` for each row of `x`, by backpropagation.
    pub fn jacobian(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let scaler = self.scaler.as_ref().ok_or(ModelError::ScalerNotFitted)?;
        Ok(output_jacobian(&self.layout(), &self.weights, &scaler.transform(x)))
    }
}

pub fn clamp_prediction(v: f64) -> f64 {
    v.clamp(PREDICTION_RANGE.0, PREDICTION_RANGE.1)
}

fn output_jacobian(layout: &Layout, theta: &[f64], xs: &DMatrix<f64>) -> DMatrix<f64> {
    let n_w = n_weights(layout.n_in, layout.n_hidden);
    let mut jac = DMatrix::zeros(xs.nrows(), n_w);
    let mut x = vec![0.0; layout.n_in];
    for i in 0..xs.nrows() {
        for (k, v) in x.iter_mut().enumerate() {
            *v = xs[(i, k)];
        }
        for j in 0..layout.n_hidden {
            let h = layout.hidden(theta, &x, j);
            let back = theta[layout.w2(j)] * (1.0 - h * h);
            for (k, &xk) in x.iter().enumerate() {
                jac[(i, layout.w1(j, k))] = back * xk;
            }
            jac[(i, layout.b1(j))] = back;
            jac[(i, layout.w2(j))] = h;
        }
        jac[(i, layout.b2())] = 1.0;
    }
    jac
}

/// Squared-error fit of a network to standardized inputs.
struct MlpProblem<'a> {
    layout: Layout,
    xs: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
}

impl LeastSquares for MlpProblem<'_> {
    fn n_params(&self) -> usize {
        n_weights(self.layout.n_in, self.layout.n_hidden)
    }

    fn residuals(&self, theta: &DVector<f64>) -> DVector<f64> {
        let theta = theta.as_slice();
        DVector::from_iterator(
            self.xs.nrows(),
            self.xs
                .row_iter()
                .zip(self.y.iter())
                .map(|(r, y)| self.layout.output(theta, r.transpose().as_slice()) - y),
        )
    }

    fn jacobian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        output_jacobian(&self.layout, theta.as_slice(), self.xs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_hidden: usize,
    pub max_epochs: usize,
    pub mu_init: f64,
    pub min_grad: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_hidden: 10,
            max_epochs: 300,
            mu_init: 0.005,
            min_grad: 1e-10,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    MuLimit,
    SmallGradient,
    ExactFit,
}

/// One row of the training log, written after each accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// `F` under the hyperparameters in force during the step, before and after it.
    pub step_objective_before: f64,
    pub step_objective_after: f64,
    /// `F` after the evidence update.
    pub objective: f64,
    pub e_d: f64,
    pub e_w: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub stop: StopReason,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str =
        "epoch,step_objective_before,step_objective_after,objective,e_d,e_w,alpha,beta,gamma,mu";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.epoch, r.step_objective_before, r.step_objective_after, r.objective,
                r.e_d, r.e_w, r.alpha, r.beta, r.gamma, r.mu
            ));
        }
        s
    }
}

pub const MIN_TRAIN_POINTS: usize = 10;

/// Fits the scaler on `x`, then alternates LM steps and evidence updates
/// until the epoch budget is spent, `μ` exceeds its ceiling, the gradient
/// vanishes or the data is fitted exactly. Returns the final network.
pub fn train(x: &DMatrix<f64>, y: &DVector<f64>, cfg: &TrainConfig) -> Result<(MlpModel, TrainLog)> {
    if x.nrows() < MIN_TRAIN_POINTS {
        return Err(ModelError::TooFewPoints { need: MIN_TRAIN_POINTS, got: x.nrows() });
    }
    let mut model = MlpModel::init(x.ncols(), cfg.n_hidden, cfg.seed);
    let scaler = Scaler::fit(x);
    let xs = scaler.transform(x);
    let problem = MlpProblem {
        layout: model.layout(),
        xs: &xs,
        y,
    };
    let n_w = problem.n_params();
    let n = y.len();

    let mut theta = DVector::from_column_slice(&model.weights);
    let mut state = TrainState::new(cfg.mu_init, model.alpha, model.beta);
    let mut lin = Linearization::at(&problem, &theta);
    state.e_d = lin.sse();
    state.e_w = theta.norm_squared();
    state.objective = state.objective_of(state.e_d, state.e_w);

    let mut epochs = Vec::new();
    let stop = 'outer: loop {
        if state.epoch >= cfg.max_epochs {
            break StopReason::MaxEpochs;
        }
        let outcome = loop {
            let outcome = lm_step(&problem, &theta, &lin, &mut state)?;
            if outcome.accepted {
                break outcome;
            }
            if state.mu > MU_MAX {
                break 'outer StopReason::MuLimit;
            }
        };
        theta = outcome.theta;
        state.epoch += 1;
        lin = Linearization::at(&problem, &theta);
        state.e_d = lin.sse();
        state.e_w = theta.norm_squared();
        if !state.e_d.is_finite() || !state.e_w.is_finite() {
            return Err(ModelError::NonFinite);
        }
        match update_evidence(&state, &lin.jtj, n_w, n) {
            Ok(next) => state = next,
            Err(ModelError::DegenerateObjective) => break StopReason::ExactFit,
            Err(e) => return Err(e),
        }
        epochs.push(EpochRecord {
            epoch: state.epoch,
            step_objective_before: outcome.objective_before,
            step_objective_after: outcome.objective_after,
            objective: state.objective,
            e_d: state.e_d,
            e_w: state.e_w,
            alpha: state.alpha,
            beta: state.beta,
            gamma: state.gamma,
            mu: state.mu,
        });
        let grad = &lin.jte * state.beta + &theta * state.alpha;
        if grad.amax() < cfg.min_grad {
            break StopReason::SmallGradient;
        }
    };

    model.weights = theta.as_slice().to_vec();
    model.scaler = Some(scaler);
    model.alpha = state.alpha;
    model.beta = state.beta;
    Ok((model, TrainLog { epochs, stop }))
}

/// On-disk form of a trained network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpFile {
    pub n_in: usize,
    pub n_hidden: usize,
    pub hidden_activation: String,
    pub weights: Vec<f64>,
    pub scaler_mean: Vec<f64>,
    pub scaler_std: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub config_hash: String,
}

impl MlpFile {
    pub fn from_model(m: &MlpModel, config_hash: &str) -> Result<Self> {
        let scaler = m.scaler.as_ref().ok_or(ModelError::ScalerNotFitted)?;
        Ok(Self {
            n_in: m.n_in,
            n_hidden: m.n_hidden,
            hidden_activation: "tanh".into(),
            weights: m.weights.clone(),
            scaler_mean: scaler.mean.clone(),
            scaler_std: scaler.std.clone(),
            alpha: m.alpha,
            beta: m.beta,
            seed: m.seed,
            config_hash: config_hash.to_string(),
        })
    }

    pub fn into_model(self) -> std::result::Result<MlpModel, String> {
        if self.hidden_activation != "tanh" {
            return Err(format!("unsupported activation `{}`", self.hidden_activation));
        }
        if self.weights.len() != n_weights(self.n_in, self.n_hidden)
            || self.scaler_mean.len() != self.n_in
            || self.scaler_std.len() != self.n_in
        {
            return Err("weight or scaler length does not match layer sizes".into());
        }
        Ok(MlpModel {
            n_in: self.n_in,
            n_hidden: self.n_hidden,
            weights: self.weights,
            scaler: Some(Scaler { mean: self.scaler_mean, std: self.scaler_std }),
            alpha: self.alpha,
            beta: self.beta,
            seed: self.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};

    /// Scalar problem with residual `f(θ) − target`.
    struct Scalar<F: Fn(f64) -> (f64, f64)>(F);

    impl<F: Fn(f64) -> (f64, f64)> LeastSquares for Scalar<F> {
        fn n_params(&self) -> usize {
            1
        }
        fn residuals(&self, theta: &DVector<f64>) -> DVector<f64> {
            DVector::from_element(1, (self.0)(theta[0]).0)
        }
        fn jacobian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::from_element(1, 1, (self.0)(theta[0]).1)
        }
    }

    fn linear_residual() -> Scalar<impl Fn(f64) -> (f64, f64)> {
        Scalar(|t| (t - 3.0, 1.0))
    }

    #[test]
    fn undamped_step_solves_quadratic() {
        let p = linear_residual();
        let theta = DVector::from_element(1, 0.0);
        let lin = Linearization::at(&p, &theta);
        let mut st = TrainState::new(MU_MIN, 0.0, 1.0);
        let out = lm_step(&p, &theta, &lin, &mut st).unwrap();
        assert!(out.accepted);
        assert!((out.theta[0] - 3.0).abs() < 1e-12);
        assert_eq!(st.mu, MU_MIN);
    }

    #[test]
    fn heavy_damping_shrinks_step() {
        let p = linear_residual();
        let theta = DVector::from_element(1, 0.0);
        let lin = Linearization::at(&p, &theta);
        let mut st = TrainState::new(1e6, 0.0, 1.0);
        let out = lm_step(&p, &theta, &lin, &mut st).unwrap();
        assert!(out.delta[0].abs() < 1e-5);
        assert!((out.delta[0] - 3.0 / (1.0 + 1e6)).abs() < 1e-18);
    }

    #[test]
    fn uphill_step_rejected() {
        // r = θ² − 1 at θ = 0.1: the Gauss-Newton step overshoots to θ ≈ 5.
        let p = Scalar(|t| (t * t - 1.0, 2.0 * t));
        let theta = DVector::from_element(1, 0.1);
        let lin = Linearization::at(&p, &theta);
        let mut st = TrainState::new(1e-12, 0.0, 1.0);
        let out = lm_step(&p, &theta, &lin, &mut st).unwrap();
        assert!(!out.accepted);
        assert!(out.objective_after > out.objective_before);
        assert_eq!(out.theta[0], 0.1);
        assert_eq!(st.mu, 1e-11);
    }

    #[test]
    fn singular_normal_matrix_reported() {
        let p = Scalar(|t| (t, 0.0));
        let theta = DVector::from_element(1, 1.0);
        let lin = Linearization::at(&p, &theta);
        let mut st = TrainState::new(0.0, 0.0, 1.0);
        assert_eq!(lm_step(&p, &theta, &lin, &mut st).unwrap_err(), ModelError::SingularNormalMatrix);
    }

    #[test]
    fn evidence_scalar_case() {
        let st = TrainState { alpha: 1.0, beta: 1.0, e_d: 2.0, e_w: 0.5, ..TrainState::new(1.0, 1.0, 1.0) };
        let next = update_evidence(&st, &DMatrix::from_element(1, 1, 1.0), 1, 5).unwrap();
        assert!((next.gamma - 0.5).abs() < 1e-15);
        assert!((next.alpha - 0.5).abs() < 1e-15);
        assert!((next.beta - 4.5 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn evidence_with_zero_alpha_counts_every_parameter() {
        let st = TrainState { e_d: 1.0, e_w: 2.0, ..TrainState::new(1.0, 0.0, 1.0) };
        let next = update_evidence(&st, &DMatrix::identity(7, 7), 7, 40).unwrap();
        assert_eq!(next.gamma, 7.0);
        assert_eq!(next.alpha, 7.0 / 4.0);
    }

    #[test]
    fn evidence_floors_beta_and_flags_exact_fit() {
        let st = TrainState { e_d: 1.0, e_w: 2.0, ..TrainState::new(1.0, 0.0, 1.0) };
        assert_eq!(update_evidence(&st, &DMatrix::identity(30, 30), 30, 10).unwrap().beta, BETA_MIN);
        let exact = TrainState { e_d: 0.0, ..st };
        assert_eq!(update_evidence(&exact, &DMatrix::identity(3, 3), 3, 10), Err(ModelError::DegenerateObjective));
    }

    #[test]
    fn weight_counts_and_seeding() {
        assert_eq!(MlpModel::init(24, 10, 0).n_weights(), 261);
        assert_eq!(MlpModel::init(24, 1, 0).n_weights(), 27);
        assert_eq!(MlpModel::init(24, 10, 5), MlpModel::init(24, 10, 5));
        assert_ne!(MlpModel::init(24, 10, 5).weights, MlpModel::init(24, 10, 6).weights);
        assert!(MlpModel::init(24, 10, 5).weights.iter().all(|w| (-0.5..0.5).contains(w)));
    }

    fn fitted(mut m: MlpModel) -> MlpModel {
        m.scaler = Some(Scaler { mean: vec![0.0; m.n_in], std: vec![1.0; m.n_in] });
        m
    }

    #[test]
    fn forward_special_cases() {
        let mut m = MlpModel::init(24, 4, 1);
        assert_eq!(m.forward(&[0.0; 24]), Err(ModelError::ScalerNotFitted));
        m = fitted(m);
        m.weights.iter_mut().for_each(|w| *w = 0.0);
        assert_eq!(m.forward(&[3.0; 24]).unwrap(), 0.0);
        let b2 = m.weights.len() - 1;
        m.weights[b2] = 0.05;
        assert_eq!(m.forward(&[-1.0; 24]).unwrap(), 0.05);
    }

    #[test]
    fn forward_matches_hand_evaluation() {
        let mut m = fitted(MlpModel::init(3, 2, 9));
        m.scaler = Some(Scaler { mean: vec![0.5, -1.0, 2.0], std: vec![2.0, 0.5, 1.0] });
        let x = [1.0, 0.0, 3.0];
        let xs = [(1.0 - 0.5) / 2.0, (0.0 + 1.0) / 0.5, (3.0 - 2.0) / 1.0];
        let w = &m.weights;
        // W1 = w[0..6] row-major, b1 = w[6..8], w2 = w[8..10], b2 = w[10].
        let h0 = (w[0] * xs[0] + w[1] * xs[1] + w[2] * xs[2] + w[6]).tanh();
        let h1 = (w[3] * xs[0] + w[4] * xs[1] + w[5] * xs[2] + w[7]).tanh();
        let expected = w[8] * h0 + w[9] * h1 + w[10];
        assert!((m.forward(&x).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn jacobian_zero_input_row() {
        let mut m = fitted(MlpModel::init(4, 3, 2));
        let l = m.layout();
        for j in 0..3 {
            m.weights[l.b1(j)] = 0.0;
        }
        let x = DMatrix::from_row_slice(2, 4, &[0.0; 8]);
        let jac = m.jacobian(&x).unwrap();
        for j in 0..3 {
            assert_eq!(jac[(0, l.w2(j))], 0.0);
        }
        assert_eq!(jac[(0, l.b2())], 1.0);
        assert_eq!(jac.row(0), jac.row(1));
    }

    #[test]
    fn predict_clamps() {
        let mut m = fitted(MlpModel::init(2, 1, 0));
        m.weights.iter_mut().for_each(|w| *w = 0.0);
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        assert_eq!(m.predict(&x).unwrap()[0], 0.0);
        m.weights[4] = -0.01;
        assert_eq!(m.predict(&x).unwrap()[0], 0.0);
        m.weights[4] = 0.07;
        assert_eq!(m.predict(&x).unwrap()[0], 0.07);
    }

    #[test]
    fn constant_targets_fit_by_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DMatrix::from_fn(40, 5, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_element(40, 0.04);
        let cfg = TrainConfig { n_hidden: 3, max_epochs: 100, ..Default::default() };
        let (m, _) = train(&x, &y, &cfg).unwrap();
        for p in m.forward_batch(&x).unwrap().iter() {
            assert!((p - 0.04).abs() < 1e-3, "{p}");
        }
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = DMatrix::from_fn(30, 3, |_, _| rng.random_range(-2.0..2.0));
        let y = x.column(0).map(|v: f64| (v * 0.7).sin() * 0.1 + 0.05);
        let (m, _) = train(&x, &y, &TrainConfig { n_hidden: 4, max_epochs: 20, ..Default::default() }).unwrap();
        let json = serde_json::to_string(&MlpFile::from_model(&m, "abc").unwrap()).unwrap();
        let back: MlpFile = serde_json::from_str(&json).unwrap();
        assert_eq!(back.into_model().unwrap(), m);
    }

    proptest! {
        #[test]
        fn refit_scaler_removes_input_shift(shift in -50.0f64..50.0, col in 0usize..3, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = DMatrix::from_fn(12, 3, |_, _| rng.random_range(-1.0..1.0));
            let mut shifted = x.clone();
            shifted.column_mut(col).add_scalar_mut(shift);
            let mut m = MlpModel::init(3, 4, seed);
            m.scaler = Some(Scaler::fit(&x));
            let base = m.forward_batch(&x).unwrap();
            m.scaler = Some(Scaler::fit(&shifted));
            let moved = m.forward_batch(&shifted).unwrap();
            prop_assert!((base - moved).amax() < 1e-9);
        }
    }
}
