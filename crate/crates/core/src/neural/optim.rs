//! Losses and the Adam optimizer.

use serde::{Deserialize, Serialize};

use super::graph::{Graph, Tensor, Var};
use super::model::ShenetParams;
use crate::error::{Error, Result};
use crate::smoothing::{smooth_trajectory, ControlRule};
use crate::trajdata::Point;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossChoice {
    /// Mean squared displacement to the raw ground truth.
    #[default]
    Mse,
    /// Mean squared displacement to the curve-smoothed ground truth.
    Cs,
}

impl std::str::FromStr for LossChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(Self::Mse),
            "cs" => Ok(Self::Cs),
            _ => Err(Error::config(format!("unknown loss '{s}' (expected mse or cs)"))),
        }
    }
}

fn check_len(pred: &[Point], gt: &[Point]) -> Result<()> {
    if pred.len() != gt.len() || gt.is_empty() {
        return Err(Error::shape(format!("prediction has {} points, target {}", pred.len(), gt.len())));
    }
    Ok(())
}

/// `(1/T) Σ_t ‖y_t − ŷ_t‖²`
pub fn loss_tra(pred: &[Point], gt: &[Point]) -> Result<f64> {
    check_len(pred, gt)?;
    let s: f64 = pred.iter().zip(gt).map(|(p, g)| (p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sum();
    Ok(s / gt.len() as f64)
}

pub fn loss_cs(pred: &[Point], gt: &[Point], rule: ControlRule) -> Result<f64> {
    check_len(pred, gt)?;
    loss_tra(pred, &smooth_trajectory(gt, rule)?)
}

/// Regression target for a loss choice.
pub fn loss_target(gt: &[Point], choice: LossChoice, rule: ControlRule) -> Result<Vec<Point>> {
    match choice {
        LossChoice::Mse => Ok(gt.to_vec()),
        LossChoice::Cs => smooth_trajectory(gt, rule),
    }
}

/// Graph form of [`loss_tra`] against a constant target.
pub fn loss_tra_graph(g: &mut Graph, pred: Var, target: &[Point]) -> Result<Var> {
    let p = g.value(pred);
    if p.rows() != target.len() || p.cols() != 2 {
        return Err(Error::shape(format!("prediction is {}×{}, target has {} points", p.rows(), p.cols(), target.len())));
    }
    let t = g.constant(Tensor::matrix(target.len(), 2, target.iter().flat_map(|p| *p).collect()));
    let diff = g.sub(pred, t);
    let sq = g.mul(diff, diff);
    let s = g.sum(sq);
    Ok(g.scale(s, 1.0 / target.len() as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update in place. `t` is the 1-based step count.
pub fn adam_step(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], cfg: &AdamConfig, t: u64) {
    assert!(t >= 1, "adam step count starts at 1");
    assert!(params.len() == grads.len() && m.len() == grads.len() && v.len() == grads.len());
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let mh = m[i] / c1;
        let vh = v[i] / c2;
        params[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
    }
}

/// Adam state for every tensor of a [`ShenetParams`].
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(params: &ShenetParams, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self { config, m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Apply the gradients stored on each tensor; tensors without a gradient
    /// are treated as having zero gradient.
    pub fn step(&mut self, params: &mut ShenetParams) {
        self.t += 1;
        for (i, tensor) in params.tensors_mut().iter_mut().enumerate() {
            let grad = tensor.grad.take().unwrap_or_else(|| vec![0.0; tensor.len()]);
            adam_step(&mut tensor.data, &grad, &mut self.m[i], &mut self.v[i], &self.config, self.t);
        }
    }
}
