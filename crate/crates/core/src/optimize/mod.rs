//! First-order optimizers and the constrained training loops.
//!
//! A training problem is anything implementing [`Problem`]: it records, for
//! one example, a data term and the example's constraint scalars `f_i` on a
//! tape. The loops differ only in how the `f_i` enter the objective:
//! penalties, the log-barrier extension with a growing `t`, the standard
//! barrier after a phase-I search, or explicit Lagrange multipliers.

mod loss;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::barrier::BarrierSchedule;
use crate::error::{Error, Result};

pub use loss::{partial_cross_entropy, smooth_max, total_loss, LossReport};
pub use train::{
    phase1_feasible, train, train_algorithm1, train_lagrangian_dual, train_penalty, train_plain,
    train_standard_barrier, EpochRecord, LoopConfig, Method, Phase1Config,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub method: OptimizerKind,
    pub learning_rate: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            method: OptimizerKind::Adam,
            learning_rate: 5e-4,
            betas: (0.9, 0.999),
            eps: 1e-8,
            epochs: 200,
            batch_size: 1,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    /// `epochs == 0` is allowed: it trains nothing and reports the initial model.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::Config(format!("adam betas must lie in [0, 1), got ({b1}, {b2})")));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("adam eps must be positive".into()));
        }
        Ok(())
    }
}

/// Parameter update rule with its per-parameter state.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    betas: (f64, f64),
    eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(cfg: &OptimizerConfig, params: &[Tensor]) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Self {
            kind: cfg.method,
            betas: cfg.betas,
            eps: cfg.eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of `params` against `grads` with step size `lr`.
    pub fn apply(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) {
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (x, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *x -= lr * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = self.betas;
                let c1 = 1.0 - b1.powi(self.step as i32);
                let c2 = 1.0 - b2.powi(self.step as i32);
                for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
                    for (((x, &d), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = b1 * *mi + (1.0 - b1) * d;
                        *vi = b2 * *vi + (1.0 - b2) * d * d;
                        *x -= lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
                    }
                }
            }
        }
    }
}

/// Terms recorded for one example.
#[derive(Debug, Clone, Default)]
pub struct Terms {
    /// Supervised loss on the example's labeled pixels; `None` when there are none.
    pub data: Option<Var>,
    /// Canonical constraint scalars `f_i`, feasible iff `f_i <= 0`.
    pub constraints: Vec<Var>,
}

/// Scores reported after each epoch; higher is better.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Evaluation {
    pub train: Option<f64>,
    pub val: Option<f64>,
}

pub trait Problem {
    fn n_examples(&self) -> usize;

    /// Record example `index` on `tape` as a function of `params`.
    fn record(&self, tape: &mut Tape, params: &[Var], index: usize) -> Result<Terms>;

    /// Evaluate the current parameters (e.g. Dice on train and validation).
    fn evaluate(&self, _params: &[Tensor]) -> Result<Evaluation> {
        Ok(Evaluation::default())
    }
}

/// Everything a training loop mutates.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: Vec<Tensor>,
    pub optimizer: Optimizer,
    pub epoch: usize,
    pub schedule: BarrierSchedule,
    /// Per-example multipliers, used by the Lagrangian loop only.
    pub lambda: Vec<Vec<f64>>,
    pub learning_rate: f64,
    pub rng: ChaCha8Rng,
    best_val: Option<f64>,
    since_best: usize,
}

impl TrainState {
    pub fn new(params: Vec<Tensor>, cfg: &OptimizerConfig, schedule: BarrierSchedule) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            optimizer: Optimizer::new(cfg, &params),
            params,
            epoch: 0,
            schedule,
            lambda: Vec::new(),
            learning_rate: cfg.learning_rate,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            best_val: None,
            since_best: 0,
        })
    }

    /// Halve the learning rate once `patience` epochs pass without a new best
    /// validation score.
    fn observe_val(&mut self, val: Option<f64>, patience: Option<usize>) {
        let (Some(val), Some(patience)) = (val, patience) else { return };
        if self.best_val.is_none_or(|b| val > b) {
            self.best_val = Some(val);
            self.since_best = 0;
        } else {
            self.since_best += 1;
            if self.since_best >= patience {
                self.learning_rate *= 0.5;
                self.since_best = 0;
            }
        }
    }
}

#[cfg(test)]
mod tests;
