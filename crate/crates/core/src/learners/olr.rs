//! Ordinal logistic regression with the all-thresholds loss.
//!
//! For a row `x` with label `y` in `0..=7` and margin `m = w.x`, the loss sums a
//! logistic penalty at every one of the seven thresholds:
//!
//! ```text
//! L = sum_i sum_{j=1..7} softplus(-s_j(y_i) * (theta_j - w.x_i)) + alpha * |w|^2
//! s_j(y) = +1 if j > y else -1
//! ```
//!
//! The data term is summed over examples by default, which is the scale the
//! standard penalty grid (1 to 1000) is meant for. [`LossScale::Mean`] averages
//! it instead; at that scale every value of the standard grid shrinks the
//! weights to near zero on features in `[0, 1]`.
//!
//! so a prediction that lands several thresholds away from the label pays for
//! every threshold crossed. Training optimizes an unconstrained
//! reparameterization `theta_j = theta_1 + sum_{i<j} exp(delta_i)`, which keeps
//! the thresholds ordered at every iterate.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, RowView, MAX_SCORE};

pub const N_THRESHOLDS: usize = MAX_SCORE as usize;

/// How the per-example losses are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossScale {
    #[default]
    Sum,
    Mean,
}

impl std::str::FromStr for LossScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(LossScale::Sum),
            "mean" => Ok(LossScale::Mean),
            other => Err(Error::Config(format!("unknown loss scale `{other}` (expected sum or mean)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrdinalModel {
    pub weights: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub alpha: f64,
    #[serde(default)]
    pub loss_scale: LossScale,
    pub converged: bool,
    pub iterations: usize,
}

impl OrdinalModel {
    /// Zero weights and thresholds `-3, -2, ..., 3`.
    pub fn initial(n_features: usize, alpha: f64) -> Self {
        OrdinalModel {
            weights: vec![0.0; n_features],
            thresholds: (0..N_THRESHOLDS).map(|j| j as f64 - 3.0).collect(),
            alpha,
            loss_scale: LossScale::default(),
            converged: false,
            iterations: 0,
        }
    }

    pub fn n_features(&self) -> usize {
        self.weights.len()
    }

    pub fn score(&self, row: RowView<'_>) -> f64 {
        row.dot(&self.weights)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub max_iterations: usize,
    /// Stop once the Euclidean norm of the gradient falls below this.
    pub tolerance: f64,
    /// Also stop once a step lowers the loss by less than this fraction of it.
    /// An unused label pushes its threshold toward infinity, where the
    /// gradient only vanishes in the limit.
    #[serde(default = "default_f_tolerance")]
    pub f_tolerance: f64,
    /// L-BFGS history length.
    pub memory: usize,
    #[serde(default)]
    pub loss_scale: LossScale,
}

fn default_f_tolerance() -> f64 {
    1e-12
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            max_iterations: 5000,
            tolerance: 1e-8,
            f_tolerance: default_f_tolerance(),
            memory: 10,
            loss_scale: LossScale::Sum,
        }
    }
}

#[inline]
fn softplus(z: f64) -> f64 {
    // log(1 + e^z) without overflow
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn sign(j: usize, label: u8) -> f64 {
    // thresholds are 1-based in the loss: threshold j+1 > label
    if j + 1 > label as usize {
        1.0
    } else {
        -1.0
    }
}

fn check(model: &OrdinalModel, x: &FeatureMatrix, y: &[u8]) -> Result<()> {
    if model.weights.len() != x.cols() {
        return Err(Error::Contract(format!(
            "model has {} weights but matrix has {} columns",
            model.weights.len(),
            x.cols()
        )));
    }
    if model.thresholds.len() != N_THRESHOLDS {
        return Err(Error::Contract(format!(
            "expected {N_THRESHOLDS} thresholds, got {}",
            model.thresholds.len()
        )));
    }
    if y.len() != x.rows() {
        return Err(Error::Contract(format!(
            "{} labels for {} rows",
            y.len(),
            x.rows()
        )));
    }
    if x.rows() == 0 {
        return Err(Error::Contract("no examples".into()));
    }
    if let Some(bad) = y.iter().find(|&&l| l > MAX_SCORE) {
        return Err(Error::Contract(format!("label {bad} outside 0-7")));
    }
    Ok(())
}

/// Loss and, when `grad` is given, its gradient with respect to weights and
/// thresholds.
fn evaluate(
    weights: &[f64],
    thresholds: &[f64],
    (alpha, scale): (f64, LossScale),
    x: &FeatureMatrix,
    y: &[u8],
    mut grad: Option<(&mut [f64], &mut [f64])>,
) -> f64 {
    let n = match scale {
        LossScale::Sum => 1.0,
        LossScale::Mean => x.rows() as f64,
    };
    if let Some((gw, gt)) = grad.as_mut() {
        gw.fill(0.0);
        gt.fill(0.0);
    }
    let mut data_loss = 0.0;
    for (i, &label) in y.iter().enumerate() {
        let row = x.row(i);
        let margin = row.dot(weights);
        let mut d_margin = 0.0;
        for (j, &theta) in thresholds.iter().enumerate() {
            let s = sign(j, label);
            let z = s * (theta - margin);
            data_loss += softplus(-z);
            if let Some((_, gt)) = grad.as_mut() {
                // d softplus(-z)/dz = -sigmoid(-z)
                let dz = -sigmoid(-z);
                gt[j] += dz * s / n;
                d_margin -= dz * s / n;
            }
        }
        if let Some((gw, _)) = grad.as_mut() {
            for (j, v) in row.iter() {
                gw[j] += d_margin * v;
            }
        }
    }
    let norm_sq: f64 = weights.iter().map(|w| w * w).sum();
    if let Some((gw, _)) = grad.as_mut() {
        for (g, &w) in gw.iter_mut().zip(weights) {
            *g += 2.0 * alpha * w;
        }
    }
    data_loss / n + alpha * norm_sq
}

pub fn olr_loss(model: &OrdinalModel, x: &FeatureMatrix, y: &[u8]) -> Result<f64> {
    check(model, x, y)?;
    Ok(evaluate(&model.weights, &model.thresholds, (model.alpha, model.loss_scale), x, y, None))
}

/// Analytic gradient `(d/dw, d/dtheta)` of [`olr_loss`].
pub fn olr_gradient(model: &OrdinalModel, x: &FeatureMatrix, y: &[u8]) -> Result<(Vec<f64>, Vec<f64>)> {
    check(model, x, y)?;
    let mut gw = vec![0.0; model.weights.len()];
    let mut gt = vec![0.0; N_THRESHOLDS];
    evaluate(
        &model.weights,
        &model.thresholds,
        (model.alpha, model.loss_scale),
        x,
        y,
        Some((&mut gw, &mut gt)),
    );
    Ok((gw, gt))
}

/// Unconstrained parameter vector `[w, theta_1, delta_1..delta_6]`.
struct Objective<'a> {
    x: &'a FeatureMatrix,
    y: &'a [u8],
    alpha: f64,
    scale: LossScale,
    d: usize,
}

impl Objective<'_> {
    fn thresholds(&self, z: &[f64]) -> Vec<f64> {
        let mut theta = Vec::with_capacity(N_THRESHOLDS);
        let mut t = z[self.d];
        theta.push(t);
        for &delta in &z[self.d + 1..] {
            t += delta.exp();
            theta.push(t);
        }
        theta
    }

    fn value_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        let theta = self.thresholds(z);
        let mut gt = [0.0; N_THRESHOLDS];
        let (gw, rest) = grad.split_at_mut(self.d);
        let loss = evaluate(&z[..self.d], &theta, (self.alpha, self.scale), self.x, self.y, Some((gw, &mut gt)));
        // theta_j depends on theta_1 (all j) and on delta_i for j > i
        rest[0] = gt.iter().sum();
        let mut tail: f64 = gt.iter().sum();
        for i in 0..N_THRESHOLDS - 1 {
            tail -= gt[i];
            rest[i + 1] = z[self.d + 1 + i].exp() * tail;
        }
        loss
    }

    fn encode(&self, model: &OrdinalModel) -> Vec<f64> {
        let mut z = model.weights.clone();
        z.push(model.thresholds[0]);
        for w in model.thresholds.windows(2) {
            z.push((w[1] - w[0]).max(1e-12).ln());
        }
        z
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minimizes the all-thresholds loss with L-BFGS and a backtracking Armijo
/// line search, starting from [`OrdinalModel::initial`].
pub fn fit_olr(x: &FeatureMatrix, y: &[u8], alpha: f64, settings: &OptimizerSettings) -> Result<OrdinalModel> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    let start = OrdinalModel::initial(x.cols(), alpha);
    check(&start, x, y)?;
    let obj = Objective {
        x,
        y,
        alpha,
        scale: settings.loss_scale,
        d: x.cols(),
    };

    let mut z = obj.encode(&start);
    let dim = z.len();
    let mut grad = vec![0.0; dim];
    let mut loss = obj.value_grad(&z, &mut grad);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut next_grad = vec![0.0; dim];
    let mut converged = norm(&grad) <= settings.tolerance;
    let mut iterations = 0;

    while !converged && iterations < settings.max_iterations {
        iterations += 1;
        let mut dir = lbfgs_direction(&grad, &history);
        let mut slope = dot(&dir, &grad);
        if slope.is_nan() || slope >= 0.0 {
            history.clear();
            dir = grad.iter().map(|g| -g).collect();
            slope = dot(&dir, &grad);
        }
        let mut step = if history.is_empty() {
            (1.0 / norm(&grad)).min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..60 {
            let candidate: Vec<f64> = z.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            let value = obj.value_grad(&candidate, &mut next_grad);
            if value.is_finite() && value <= loss + 1e-4 * step * slope {
                accepted = Some((candidate, value));
                break;
            }
            step *= 0.5;
        }
        let Some((candidate, value)) = accepted else {
            // no decrease representable at this precision
            break;
        };

        let s: Vec<f64> = candidate.iter().zip(&z).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = next_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 * norm(&s) * norm(&yv) {
            if history.len() == settings.memory.max(1) {
                history.pop_front();
            }
            history.push_back((s, yv, 1.0 / sy));
        }
        let decrease = loss - value;
        z = candidate;
        std::mem::swap(&mut grad, &mut next_grad);
        converged = norm(&grad) <= settings.tolerance
            || decrease <= settings.f_tolerance * loss.abs().max(value.abs()).max(1.0);
        loss = value;
    }

    if !converged {
        log::debug!(
            "OLR alpha={alpha}: stopped after {iterations} iterations, |grad| = {:e}",
            norm(&grad)
        );
    }
    Ok(OrdinalModel {
        thresholds: obj.thresholds(&z),
        weights: z[..obj.d].to_vec(),
        alpha,
        loss_scale: settings.loss_scale,
        converged,
        iterations,
    })
}

fn lbfgs_direction(grad: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut coeffs = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        coeffs.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in history.iter().zip(coeffs.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Number of thresholds strictly below `w.x`.
pub fn predict_olr(model: &OrdinalModel, row: RowView<'_>) -> u8 {
    let score = model.score(row);
    model.thresholds.iter().filter(|&&t| t < score).count() as u8
}
