use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{smooth_max, total_loss, LossReport};
use super::{Optimizer, OptimizerConfig, Problem, TrainState};
use crate::autodiff::{Tape, Tensor, Var};
use crate::barrier::HandlerKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub optimizer: OptimizerConfig,
    pub constraint_weight: f64,
    /// Halve the learning rate after this many epochs without a better
    /// validation score. `None` keeps it fixed.
    pub plateau_patience: Option<usize>,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            constraint_weight: 1.0,
            plateau_patience: Some(20),
        }
    }
}

/// Feasibility search before standard-barrier training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Phase1Config {
    /// Required margin: every `f_i < -delta` on exit.
    pub delta: f64,
    /// Log-sum-exp sharpness of the smooth max.
    pub sharpness: f64,
    pub max_epochs: usize,
}

impl Default for Phase1Config {
    fn default() -> Self {
        Self {
            delta: 1e-3,
            sharpness: 50.0,
            max_epochs: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    /// Data term only; constraints are ignored.
    Plain,
    Penalty { handler: HandlerKind },
    /// Log-barrier extension with `t := μ t` after every epoch.
    Algorithm1,
    StandardBarrier { phase1: Phase1Config },
    LagrangianDual { dual_lr: f64 },
}

impl Method {
    /// The loop that trains with `handler`.
    pub fn for_handler(handler: HandlerKind, dual_lr: f64, phase1: Phase1Config) -> Self {
        match handler {
            HandlerKind::QuadraticPenalty | HandlerKind::ReluPenalty => Method::Penalty { handler },
            HandlerKind::LogBarrierExtension => Method::Algorithm1,
            HandlerKind::StandardLogBarrier => Method::StandardBarrier { phase1 },
            HandlerKind::LagrangianDual => Method::LagrangianDual { dual_lr },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Hardness used during this epoch.
    pub t: f64,
    pub learning_rate: f64,
    /// Means over the examples of the epoch.
    pub data_loss: f64,
    pub constraint_loss: f64,
    /// Mean of `max(0, f_i)` over every constraint scalar seen.
    pub mean_violation: f64,
    pub max_violation: f64,
    pub train_score: Option<f64>,
    pub val_score: Option<f64>,
    pub wall_ms: f64,
}

enum Objective {
    Plain,
    Handler(HandlerKind),
    Dual(f64),
}

/// Dispatch to the loop for `method`, calling `observer` after every epoch.
pub fn train(
    state: &mut TrainState,
    problem: &dyn Problem,
    cfg: &LoopConfig,
    method: Method,
    observer: &mut dyn FnMut(&EpochRecord) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    match method {
        Method::Plain => run(state, problem, cfg, Objective::Plain, false, observer),
        Method::Penalty { handler } => {
            if !matches!(handler, HandlerKind::QuadraticPenalty | HandlerKind::ReluPenalty) {
                return Err(Error::Config(format!("`{handler}` is not a penalty")));
            }
            run(state, problem, cfg, Objective::Handler(handler), handler.uses_schedule(), observer)
        }
        Method::Algorithm1 => {
            let obj = Objective::Handler(HandlerKind::LogBarrierExtension);
            run(state, problem, cfg, obj, true, observer)
        }
        Method::StandardBarrier { phase1 } => {
            let params = std::mem::take(&mut state.params);
            state.params = phase1_feasible(params, problem, &phase1, &cfg.optimizer)?;
            let obj = Objective::Handler(HandlerKind::StandardLogBarrier);
            run(state, problem, cfg, obj, true, observer)
        }
        Method::LagrangianDual { dual_lr } => {
            if !(dual_lr > 0.0 && dual_lr.is_finite()) {
                return Err(Error::Config(format!("dual_lr must be positive, got {dual_lr}")));
            }
            run(state, problem, cfg, Objective::Dual(dual_lr), false, observer)
        }
    }
}

fn quiet(_: &EpochRecord) -> Result<()> {
    Ok(())
}

/// Unconstrained minimization of the data term.
pub fn train_plain(state: &mut TrainState, problem: &dyn Problem, cfg: &LoopConfig) -> Result<Vec<EpochRecord>> {
    train(state, problem, cfg, Method::Plain, &mut quiet)
}

/// Log-barrier-extension training: one pass over the data at the current
/// `t`, then `t := μ t`. Any initialization is accepted.
pub fn train_algorithm1(state: &mut TrainState, problem: &dyn Problem, cfg: &LoopConfig) -> Result<Vec<EpochRecord>> {
    train(state, problem, cfg, Method::Algorithm1, &mut quiet)
}

/// Quadratic or ReLU penalty; only the ReLU penalty follows the schedule.
pub fn train_penalty(
    state: &mut TrainState,
    problem: &dyn Problem,
    cfg: &LoopConfig,
    handler: HandlerKind,
) -> Result<Vec<EpochRecord>> {
    train(state, problem, cfg, Method::Penalty { handler }, &mut quiet)
}

/// Phase I followed by standard log-barrier training. Fails when phase I
/// cannot find a strictly feasible start or a step leaves the domain.
pub fn train_standard_barrier(
    state: &mut TrainState,
    problem: &dyn Problem,
    cfg: &LoopConfig,
    phase1: &Phase1Config,
) -> Result<Vec<EpochRecord>> {
    train(state, problem, cfg, Method::StandardBarrier { phase1: *phase1 }, &mut quiet)
}

/// Primal steps on `E + Σ λ_i f_i` at fixed `λ`, then projected ascent
/// `λ_i := max(0, λ_i + dual_lr f_i)` once per epoch, using the `f_i`
/// observed during the epoch.
pub fn train_lagrangian_dual(
    state: &mut TrainState,
    problem: &dyn Problem,
    cfg: &LoopConfig,
    dual_lr: f64,
) -> Result<Vec<EpochRecord>> {
    train(state, problem, cfg, Method::LagrangianDual { dual_lr }, &mut quiet)
}

/// Projected dual ascent step.
pub(crate) fn dual_step(lambda: &mut [f64], f: &[f64], dual_lr: f64) {
    for (l, &fi) in lambda.iter_mut().zip(f) {
        *l = (*l + dual_lr * fi).max(0.0);
    }
}

fn leaves(tape: &mut Tape, params: &[Tensor]) -> Vec<Var> {
    params.iter().map(|p| tape.leaf(p.clone())).collect()
}

fn run(
    state: &mut TrainState,
    problem: &dyn Problem,
    cfg: &LoopConfig,
    objective: Objective,
    step_schedule: bool,
    observer: &mut dyn FnMut(&EpochRecord) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    let n = problem.n_examples();
    let batch = cfg.optimizer.batch_size.max(1);
    if matches!(objective, Objective::Dual(_)) && state.lambda.len() != n {
        state.lambda = vec![Vec::new(); n];
    }
    let mut records = Vec::with_capacity(cfg.optimizer.epochs);
    for _ in 0..cfg.optimizer.epochs {
        let start = Instant::now();
        let epoch = state.epoch + 1;
        let t = state.schedule.t();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut state.rng);

        let (mut data_sum, mut cons_sum, mut viol_sum, mut viol_max) = (0.0, 0.0, 0.0, 0.0f64);
        let mut n_scalars = 0usize;
        let mut seen_f: Vec<Option<Vec<f64>>> = vec![None; if matches!(objective, Objective::Dual(_)) { n } else { 0 }];

        for chunk in order.chunks(batch) {
            let mut tape = Tape::unchecked();
            let vars = leaves(&mut tape, &state.params);
            let mut total: Option<Var> = None;
            for &i in chunk {
                let terms = problem.record(&mut tape, &vars, i)?;
                let (loss, report) = match objective {
                    Objective::Plain => {
                        let plain = super::Terms { data: terms.data, constraints: Vec::new() };
                        let (loss, mut report) = total_loss(&mut tape, &plain, HandlerKind::QuadraticPenalty, t, 0.0)?;
                        report.f_values = terms.constraints.iter().map(|&f| tape.scalar(f)).collect::<Result<_>>()?;
                        report.violation_count = report.f_values.iter().filter(|&&f| f > 0.0).count();
                        (loss, report)
                    }
                    Objective::Handler(h) => total_loss(&mut tape, &terms, h, t, cfg.constraint_weight)?,
                    Objective::Dual(_) => {
                        let lambda = &mut state.lambda[i];
                        lambda.resize(terms.constraints.len(), 0.0);
                        let out = lagrangian(&mut tape, &terms, lambda, cfg.constraint_weight)?;
                        seen_f[i] = Some(out.1.f_values.clone());
                        out
                    }
                };
                if !report.data_term.is_finite() {
                    return Err(Error::NanLoss { term: "data term".into(), epoch });
                }
                if !report.constraint_term.is_finite() {
                    return Err(Error::NanLoss { term: "constraint term".into(), epoch });
                }
                data_sum += report.data_term;
                cons_sum += report.constraint_term;
                for &f in &report.f_values {
                    if !f.is_finite() {
                        return Err(Error::NanLoss { term: "constraint value".into(), epoch });
                    }
                    viol_sum += f.max(0.0);
                    viol_max = viol_max.max(f);
                }
                n_scalars += report.f_values.len();
                total = Some(match total {
                    None => loss,
                    Some(acc) => tape.add(acc, loss)?,
                });
            }
            let Some(total) = total else { continue };
            let grads = tape.backward(total)?;
            let grads = vars.iter().map(|&v| grads.wrt(v)).collect::<Result<Vec<_>>>()?;
            if let Some(k) = grads.iter().position(|g| !g.all_finite()) {
                return Err(Error::NanLoss { term: format!("gradient of parameter {k}"), epoch });
            }
            state.optimizer.apply(&mut state.params, &grads, state.learning_rate);
        }

        if let Objective::Dual(dual_lr) = objective {
            for (lambda, f) in state.lambda.iter_mut().zip(&seen_f) {
                if let Some(f) = f {
                    dual_step(lambda, f, dual_lr);
                }
            }
        }

        let eval = problem.evaluate(&state.params)?;
        state.epoch = epoch;
        let denom = n.max(1) as f64;
        let record = EpochRecord {
            epoch,
            t,
            learning_rate: state.learning_rate,
            data_loss: data_sum / denom,
            constraint_loss: cons_sum / denom,
            mean_violation: if n_scalars == 0 { 0.0 } else { viol_sum / n_scalars as f64 },
            max_violation: viol_max.max(0.0),
            train_score: eval.train,
            val_score: eval.val,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        state.observe_val(eval.val, cfg.plateau_patience);
        if step_schedule {
            state.schedule = state.schedule.step();
        }
        observer(&record)?;
        records.push(record);
    }
    Ok(records)
}

/// `E + weight * Σ λ_i f_i` with `λ` held constant.
fn lagrangian(tape: &mut Tape, terms: &super::Terms, lambda: &[f64], weight: f64) -> Result<(Var, LossReport)> {
    let f_values = terms.constraints.iter().map(|&f| tape.scalar(f)).collect::<Result<Vec<_>>>()?;
    let mut report = LossReport {
        violation_count: f_values.iter().filter(|&&f| f > 0.0).count(),
        f_values,
        ..LossReport::default()
    };
    if let Some(d) = terms.data {
        report.data_term = tape.scalar(d)?;
    }
    let coupling = if terms.constraints.is_empty() {
        None
    } else {
        let f = tape.concat(&terms.constraints)?;
        let l = tape.input(Tensor::vector(lambda.iter().map(|&l| l * weight).collect()));
        let prod = tape.mul(f, l)?;
        let s = tape.sum(prod)?;
        report.constraint_term = tape.scalar(s)?;
        Some(s)
    };
    let loss = match (terms.data, coupling) {
        (Some(d), Some(c)) => tape.add(d, c)?,
        (Some(d), None) => d,
        (None, Some(c)) => c,
        (None, None) => tape.constant(0.0),
    };
    Ok((loss, report))
}

/// Drive every example to `max_i f_i < -delta` by descending a smooth max of
/// its constraints. Returns the parameters unchanged when they already
/// satisfy the margin.
pub fn phase1_feasible(
    mut params: Vec<Tensor>,
    problem: &dyn Problem,
    cfg: &Phase1Config,
    opt: &OptimizerConfig,
) -> Result<Vec<Tensor>> {
    let mut optimizer = Optimizer::new(opt, &params);
    let n = problem.n_examples();
    let mut worst = f64::NEG_INFINITY;
    for iteration in 0..=cfg.max_epochs {
        worst = f64::NEG_INFINITY;
        let mut pending = Vec::new();
        for i in 0..n {
            let mut tape = Tape::unchecked();
            let vars = leaves(&mut tape, &params);
            let terms = problem.record(&mut tape, &vars, i)?;
            let m = terms
                .constraints
                .iter()
                .map(|&f| tape.scalar(f))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max);
            if m.is_nan() {
                return Err(Error::NanLoss { term: "phase I constraint value".into(), epoch: iteration });
            }
            worst = worst.max(m);
            if m >= -cfg.delta {
                pending.push(i);
            }
        }
        if pending.is_empty() {
            return Ok(params);
        }
        if iteration == cfg.max_epochs {
            break;
        }
        for i in pending {
            let mut tape = Tape::unchecked();
            let vars = leaves(&mut tape, &params);
            let terms = problem.record(&mut tape, &vars, i)?;
            let objective = smooth_max(&mut tape, &terms.constraints, cfg.sharpness)?;
            let grads = tape.backward(objective)?;
            let grads = vars.iter().map(|&v| grads.wrt(v)).collect::<Result<Vec<_>>>()?;
            if grads.iter().any(|g| !g.all_finite()) {
                return Err(Error::NanLoss { term: "phase I gradient".into(), epoch: iteration });
            }
            optimizer.apply(&mut params, &grads, opt.learning_rate);
        }
    }
    Err(Error::Phase1Failed { max_violation: worst, iterations: cfg.max_epochs })
}
