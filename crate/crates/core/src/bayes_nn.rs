//! Bayesian regularization of the single-hidden-layer network.
//!
//! Weights get a zero-mean Gaussian prior with precision `sigma_p` and the
//! responses a Gaussian likelihood with precision `sigma_l`. The MAP estimate
//! minimizes
//!
//! ```text
//! E(theta) = sigma_l / 2 * sum_i (f(z_i) - y_i)^2 + sigma_p / 2 * |theta|^2
//! ```
//!
//! and the fitted network is used as a plug-in predictor. Precisions can be
//! re-estimated from the fit for a few rounds, re-minimizing from the previous
//! solution each time:
//!
//! ```text
//! sigma_p <- gamma / |theta|^2        sigma_l <- (n - gamma) / RSS
//! gamma    = W - sigma_p * tr(A^-1),  A = sigma_l J'J + sigma_p I
//! ```
//!
//! where `J` is the Jacobian of the outputs with respect to the parameters and
//! `gamma` counts the parameters the data actually pin down. With `gamma = W`
//! the updates collapse the network to a constant whenever `W` approaches `n`.
//!
//! The hidden-unit count `k` carries a Geometric prior on `1..=k_max`; each `k`
//! is trained separately and scored by its log prior weight plus the log joint
//! density at its mode.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::neural_net::{canonical_rows, init_params, optimal_hidden_neurons, risk_and_grad, Mlp, TrainConfig};

/// Threshold on the norm of the gradient of `E` for declaring convergence.
pub const GRAD_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BnnHyper {
    pub sigma_p: f64,
    pub sigma_l: f64,
    pub evidence_updates: usize,
    /// Whether bias terms enter the weight penalty.
    pub penalize_biases: bool,
}

impl BnnHyper {
    pub fn new(sigma_p: f64, sigma_l: f64, evidence_updates: usize) -> Result<Self> {
        for (name, v) in [("sigma_p", sigma_p), ("sigma_l", sigma_l)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(BnnHyper {
            sigma_p,
            sigma_l,
            evidence_updates,
            penalize_biases: true,
        })
    }
}

impl Default for BnnHyper {
    fn default() -> Self {
        BnnHyper {
            sigma_p: 1.0,
            sigma_l: 1.0,
            evidence_updates: 3,
            penalize_biases: true,
        }
    }
}

fn penalty_mask(net_d: usize, k: usize, penalize_biases: bool) -> Vec<f64> {
    let probe = Mlp::zeros(net_d, k).expect("valid dims");
    let mut mask = vec![1.0; probe.params().len()];
    if !penalize_biases {
        for i in probe.bias_indices() {
            mask[i] = 0.0;
        }
    }
    mask
}

fn penalty(theta: &[f64], mask: &[f64]) -> f64 {
    theta.iter().zip(mask).map(|(t, m)| m * t * t).sum()
}

pub fn bnn_objective(net: &Mlp, train: &Dataset, hyper: &BnnHyper) -> Result<f64> {
    check_dim(net.input_dim(), train.d())?;
    let mut rss = 0.0;
    for (z, &y) in train.rows().zip(train.response()) {
        let r = net.forward(z)? - y;
        rss += r * r;
    }
    let mask = penalty_mask(net.input_dim(), net.hidden_k(), hyper.penalize_biases);
    Ok(0.5 * hyper.sigma_l * rss + 0.5 * hyper.sigma_p * penalty(net.params(), &mask))
}

/// Exact gradient of [`bnn_objective`], in the shape of the network.
pub fn bnn_objective_gradient(net: &Mlp, train: &Dataset, hyper: &BnnHyper) -> Result<Mlp> {
    check_dim(net.input_dim(), train.d())?;
    let (d, k) = (net.input_dim(), net.hidden_k());
    let mut g = vec![0.0; net.params().len()];
    risk_and_grad(net.params(), d, k, train.features_flat(), train.response(), &mut g, &mut Vec::new());
    let mask = penalty_mask(d, k, hyper.penalize_biases);
    let scale = 0.5 * hyper.sigma_l * train.n() as f64;
    for ((gi, t), m) in g.iter_mut().zip(net.params()).zip(&mask) {
        *gi = scale * *gi + hyper.sigma_p * m * t;
    }
    Mlp::from_flat(d, k, g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnnModel {
    pub net: Mlp,
    pub chosen_k: usize,
    /// Precisions in force at the returned mode (after any re-estimation).
    pub hyper: BnnHyper,
    pub objective_at_map: f64,
    pub n_train: usize,
    pub converged: bool,
    pub epochs_run: usize,
    pub grad_norm: f64,
}

impl BnnModel {
    /// Number of parameters in the weight penalty.
    pub fn penalized_params(&self) -> usize {
        penalty_mask(self.net.input_dim(), self.net.hidden_k(), self.hyper.penalize_biases)
            .iter()
            .filter(|m| **m > 0.0)
            .count()
    }

    /// Log joint density of responses and weights at the mode, given the precisions.
    pub fn log_joint(&self) -> f64 {
        let two_pi = 2.0 * std::f64::consts::PI;
        -self.objective_at_map
            + 0.5 * self.n_train as f64 * (self.hyper.sigma_l / two_pi).ln()
            + 0.5 * self.penalized_params() as f64 * (self.hyper.sigma_p / two_pi).ln()
    }

    pub fn predict(&self, z: &[f64]) -> Result<f64> {
        self.net.forward(z)
    }
}

pub fn predict_bnn(model: &BnnModel, z: &[f64]) -> Result<f64> {
    model.predict(z)
}

struct Outcome {
    converged: bool,
    epochs: usize,
    grad_norm: f64,
}

/// Minimizes `MSE + c * |theta|^2` with `c = sigma_p / (sigma_l * n)`, which is `E`
/// divided by `sigma_l * n / 2`. The data term takes a gradient step and the
/// penalty is applied in closed form, which stays stable for very large `c`.
#[allow(clippy::too_many_arguments)]
fn minimize(
    theta: &mut Vec<f64>,
    d: usize,
    k: usize,
    x: &[f64],
    y: &[f64],
    hyper: &BnnHyper,
    mask: &[f64],
    cfg: &TrainConfig,
) -> Result<Outcome> {
    let c = hyper.sigma_p / (hyper.sigma_l * y.len() as f64);
    let e_scale = 0.5 * hyper.sigma_l * y.len() as f64;
    let mut grad = vec![0.0; theta.len()];
    let mut hidden = Vec::new();
    let mut best = (f64::INFINITY, theta.clone(), f64::INFINITY);
    let mut epochs = 0;
    let mut converged = false;
    for epoch in 0..=cfg.epochs {
        let r = risk_and_grad(theta, d, k, x, y, &mut grad, &mut hidden);
        let s = r + c * penalty(theta, mask);
        if !s.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        let gn = grad
            .iter()
            .zip(theta.iter())
            .zip(mask)
            .map(|((g, t), m)| (g + 2.0 * c * m * t).powi(2))
            .sum::<f64>()
            .sqrt()
            * e_scale;
        if s < best.0 {
            best = (s, theta.clone(), gn);
        }
        epochs = epoch;
        if gn < GRAD_TOLERANCE {
            converged = true;
            best = (s, theta.clone(), gn);
            break;
        }
        if epoch == cfg.epochs {
            break;
        }
        for ((t, g), m) in theta.iter_mut().zip(&grad).zip(mask) {
            *t = (*t - cfg.learning_rate * g) / (1.0 + 2.0 * cfg.learning_rate * c * m);
        }
    }
    *theta = best.1;
    Ok(Outcome {
        converged,
        epochs,
        grad_norm: best.2,
    })
}

/// Effective number of well-determined parameters at `theta`, using the
/// Gauss-Newton approximation `sigma_l J'J` to the Hessian of the data term.
pub fn effective_parameters(net: &Mlp, train: &Dataset, hyper: &BnnHyper) -> Result<f64> {
    check_dim(net.input_dim(), train.d())?;
    let (d, k) = (net.input_dim(), net.hidden_k());
    let mask = penalty_mask(d, k, hyper.penalize_biases);
    let w = mask.len();
    let out_off = k * (d + 1);
    let mut jtj = DMatrix::<f64>::zeros(w, w);
    let mut row = vec![0.0; w];
    for z in train.rows() {
        for j in 0..k {
            let t = net.hidden_bias(j) + (0..d).map(|h| net.hidden_weight(j, h) * z[h]).sum::<f64>();
            let hj = crate::neural_net::sigmoid(t);
            let dt = net.output_weight(j) * hj * (1.0 - hj);
            row[j * (d + 1)] = dt;
            for h in 0..d {
                row[j * (d + 1) + 1 + h] = dt * z[h];
            }
            row[out_off + j] = hj;
        }
        row[out_off + k] = 1.0;
        jtj.ger(1.0, &nalgebra::DVector::from_column_slice(&row), &nalgebra::DVector::from_column_slice(&row), 1.0);
    }
    let mut a = jtj * hyper.sigma_l;
    for (i, m) in mask.iter().enumerate() {
        // Unpenalized directions get a vanishing ridge so `A` stays invertible.
        a[(i, i)] += if *m > 0.0 { hyper.sigma_p } else { 1e-10 };
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Degenerate("posterior precision is not positive definite".into()))?;
    let inv = chol.inverse();
    let w_pen = mask.iter().filter(|m| **m > 0.0).count() as f64;
    let tr: f64 = mask.iter().enumerate().filter(|(_, m)| **m > 0.0).map(|(i, _)| inv[(i, i)]).sum();
    Ok((w_pen - hyper.sigma_p * tr).clamp(0.0, w_pen))
}

pub fn train_bnn_fixed_k(train: &Dataset, k: usize, hyper: &BnnHyper, cfg: &TrainConfig) -> Result<BnnModel> {
    cfg.validate()?;
    BnnHyper::new(hyper.sigma_p, hyper.sigma_l, hyper.evidence_updates)?;
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if train.n() == 0 {
        return Err(Error::Degenerate("empty training set".into()));
    }
    let (d, n) = (train.d(), train.n());
    let (x, y) = canonical_rows(train);
    let mask = penalty_mask(d, k, hyper.penalize_biases);
    let mut h = *hyper;
    let mut theta = init_params(d, k, cfg);
    let mut out = minimize(&mut theta, d, k, &x, &y, &h, &mask, cfg)?;
    let mut total_epochs = out.epochs;
    for _ in 0..hyper.evidence_updates {
        let net = Mlp::from_flat(d, k, theta.clone())?;
        let rss = crate::neural_net::risk(&net, train)? * n as f64;
        let gamma = effective_parameters(&net, train, &h)?.min(n as f64 - 0.5);
        h.sigma_l = (n as f64 - gamma) / rss.max(1e-12 * n as f64);
        h.sigma_p = gamma.max(1e-3) / (penalty(&theta, &mask) + 1e-12);
        out = minimize(&mut theta, d, k, &x, &y, &h, &mask, cfg)?;
        total_epochs += out.epochs;
    }
    let net = Mlp::from_flat(d, k, theta)?;
    let objective_at_map = bnn_objective(&net, train, &h)?;
    Ok(BnnModel {
        net,
        chosen_k: k,
        hyper: h,
        objective_at_map,
        n_train: n,
        converged: out.converged,
        epochs_run: total_epochs,
        grad_norm: out.grad_norm,
    })
}

/// Geometric prior `P(k = i) = p (1 - p)^i`, restricted to `1..=k_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricPrior {
    pub p: f64,
    pub k_max: usize,
}

impl GeometricPrior {
    pub fn new(p: f64, k_max: usize) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::invalid(format!("p must lie in (0, 1), got {p}")));
        }
        if k_max == 0 {
            return Err(Error::invalid("k_max must be >= 1"));
        }
        Ok(GeometricPrior { p, k_max })
    }

    /// Unrestricted mass at `i >= 0`.
    pub fn pmf(&self, i: usize) -> f64 {
        self.p * (1.0 - self.p).powi(i as i32)
    }

    /// `sum_{i=0}^{k} pmf(i) = 1 - (1 - p)^(k + 1)`.
    pub fn cdf(&self, k: usize) -> f64 {
        1.0 - (1.0 - self.p).powi(k as i32 + 1)
    }

    /// Log of the renormalized weight of `k` on `1..=k_max`.
    pub fn log_weight(&self, k: usize) -> f64 {
        let mass = self.cdf(self.k_max) - self.cdf(0);
        self.pmf(k).ln() - mass.ln()
    }
}

/// Default grid bound: twice the rate-optimal hidden-unit count plus three.
pub fn default_k_max(n: usize, d_m: usize) -> usize {
    2 * optimal_hidden_neurons(n, d_m) + 3
}

/// Trains one model per `k` in `1..=k_max`, each from its own derived seed.
pub fn train_k_grid(train: &Dataset, k_max: usize, hyper: &BnnHyper, cfg: &TrainConfig) -> Result<Vec<BnnModel>> {
    if k_max == 0 {
        return Err(Error::invalid("k_max must be >= 1"));
    }
    (1..=k_max)
        .into_par_iter()
        .map(|k| {
            let cfg_k = TrainConfig {
                seed: cfg.seed.wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
                ..*cfg
            };
            train_bnn_fixed_k(train, k, hyper, &cfg_k)
        })
        .collect()
}

/// Score of a trained model under the prior: log prior weight plus log joint.
pub fn k_score(model: &BnnModel, prior: &GeometricPrior) -> f64 {
    prior.log_weight(model.chosen_k) + model.log_joint()
}

/// Highest-scoring model of the grid with `k <= prior.k_max`; ties go to smaller `k`.
pub fn choose_k<'m>(grid: &'m [BnnModel], prior: &GeometricPrior) -> Result<&'m BnnModel> {
    let mut best: Option<(&BnnModel, f64)> = None;
    for m in grid.iter().filter(|m| m.chosen_k <= prior.k_max) {
        let s = k_score(m, prior);
        let better = match best {
            None => true,
            Some((b, bs)) => s > bs || (s == bs && m.chosen_k < b.chosen_k),
        };
        if better {
            best = Some((m, s));
        }
    }
    best.map(|(m, _)| m)
        .ok_or_else(|| Error::invalid("no trained model within the prior's support"))
}

pub fn select_k_geometric(
    train: &Dataset,
    prior: &GeometricPrior,
    hyper: &BnnHyper,
    cfg: &TrainConfig,
) -> Result<BnnModel> {
    let grid = train_k_grid(train, prior.k_max, hyper, cfg)?;
    choose_k(&grid, prior).cloned()
}
