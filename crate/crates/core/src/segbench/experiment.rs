use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::Sample;
use super::dice;
use super::model::{pixel_features, predict_from_features, ModelConfig, PixelModel};
use crate::autodiff::{Tape, Tensor, Var};
use crate::barrier::{BarrierSchedule, HandlerKind};
use crate::constraints::{
    bounds_from_gt, canonicalize_all, constraint_values, BoundsConfig, ConstraintSetting, ConstraintSpec, CoordGrid,
    EvalOptions,
};
use crate::error::{Error, Result};
use crate::optimize::{train, EpochRecord, Evaluation, LoopConfig, Method, Phase1Config, Problem, Terms, TrainState};

/// Window for the stability statistic.
pub const STABILITY_WINDOW: usize = 20;
/// Satisfaction slack for size constraints, as a fraction of the true size.
pub const SIZE_SLACK: f64 = 0.05;
/// Satisfaction slack for centroid constraints, in pixels.
pub const CENTROID_SLACK: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MethodConfig {
    pub handler: HandlerKind,
    pub t0: f64,
    pub mu: f64,
    pub constraint_weight: f64,
    pub dual_lr: f64,
    pub phase1: Phase1Config,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            handler: HandlerKind::LogBarrierExtension,
            t0: 5.0,
            mu: 1.1,
            constraint_weight: 1.0,
            dual_lr: 1e-3,
            phase1: Phase1Config::default(),
        }
    }
}

impl MethodConfig {
    pub fn method(&self) -> Method {
        Method::for_handler(self.handler, self.dual_lr, self.phase1)
    }
}

/// Features, masks and per-image constraints of one split.
#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub features: Vec<Tensor>,
    pub masks: Vec<Vec<bool>>,
    pub specs: Vec<Vec<ConstraintSpec>>,
}

impl PreparedSplit {
    pub fn new(samples: &[Sample], grid: &CoordGrid, setting: ConstraintSetting, bounds: &BoundsConfig) -> Result<Self> {
        let rows = samples
            .par_iter()
            .map(|s| {
                if (s.width, s.height) != (grid.width, grid.height) {
                    return Err(Error::Shape {
                        op: "PreparedSplit",
                        detail: format!("image {} is {}x{}", s.id, s.width, s.height),
                    });
                }
                let features = pixel_features(&s.image, s.width, s.height)?;
                let specs = bounds_from_gt(&s.mask, grid, setting, bounds)?;
                Ok((features, s.mask.clone(), specs))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = Self {
            features: Vec::with_capacity(rows.len()),
            masks: Vec::with_capacity(rows.len()),
            specs: Vec::with_capacity(rows.len()),
        };
        for (f, m, s) in rows {
            out.features.push(f);
            out.masks.push(m);
            out.specs.push(s);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Mean Dice of the argmax masks; 0 for an empty split.
    pub fn mean_dice(&self, model: &PixelModel) -> Result<f64> {
        if self.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for (f, gt) in self.features.iter().zip(&self.masks) {
            let (pred, _) = predict_from_features(model, f)?;
            total += dice(&pred, gt)?;
        }
        Ok(total / self.len() as f64)
    }

    /// Fraction of images whose soft prediction meets every constraint up
    /// to the reporting slack.
    pub fn satisfaction_rate(&self, model: &PixelModel, grid: &CoordGrid) -> Result<f64> {
        if self.is_empty() {
            return Ok(1.0);
        }
        let mut ok = 0usize;
        for ((f, gt), specs) in self.features.iter().zip(&self.masks).zip(&self.specs) {
            let s = model.probabilities(f)?;
            let values = match constraint_values(specs, &s, grid, &EvalOptions::default()) {
                Ok(v) => v,
                Err(Error::DegenerateRegion { .. }) => continue,
                Err(e) => return Err(e),
            };
            let tau = gt.iter().filter(|&&m| m).count() as f64;
            let mut i = 0;
            let mut satisfied = true;
            for spec in specs {
                let slack = match spec {
                    ConstraintSpec::CentroidBox { .. } => CENTROID_SLACK,
                    _ => SIZE_SLACK * tau,
                };
                for &v in &values[i..i + spec.scalar_count()] {
                    satisfied &= v <= slack;
                }
                i += spec.scalar_count();
            }
            ok += satisfied as usize;
        }
        Ok(ok as f64 / self.len() as f64)
    }
}

/// Constraints-only training problem (no labeled pixels).
pub struct SegProblem<'a> {
    pub model: ModelConfig,
    pub grid: &'a CoordGrid,
    pub train: &'a PreparedSplit,
    pub val: &'a PreparedSplit,
}

impl SegProblem<'_> {
    fn model_of(&self, params: &[Tensor]) -> Result<PixelModel> {
        PixelModel::from_params(self.model, params.to_vec())
    }
}

impl Problem for SegProblem<'_> {
    fn n_examples(&self) -> usize {
        self.train.len()
    }

    fn record(&self, tape: &mut Tape, params: &[Var], index: usize) -> Result<Terms> {
        let x = tape.input(self.train.features[index].clone());
        let s = PixelModel::forward(&self.model, tape, params, x)?;
        let constraints = canonicalize_all(tape, &self.train.specs[index], s, self.grid, &EvalOptions::default())?;
        Ok(Terms { data: None, constraints })
    }

    fn evaluate(&self, params: &[Tensor]) -> Result<Evaluation> {
        let model = self.model_of(params)?;
        Ok(Evaluation {
            train: Some(self.train.mean_dice(&model)?),
            val: Some(self.val.mean_dice(&model)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub setting: ConstraintSetting,
    pub method: HandlerKind,
    pub epochs: usize,
    pub final_val_dice: f64,
    pub best_val_dice: f64,
    pub final_train_dice: f64,
    /// Population std-dev of validation Dice over the last epochs.
    pub stability_std: f64,
    pub satisfaction_rate: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub summary: RunSummary,
    pub records: Vec<EpochRecord>,
    pub model: PixelModel,
}

pub fn stability_std(values: &[f64], window: usize) -> f64 {
    let tail = &values[values.len().saturating_sub(window)..];
    if tail.is_empty() {
        return 0.0;
    }
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    (tail.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / tail.len() as f64).sqrt()
}

/// One training run. `loop_cfg.optimizer.seed` is replaced by `seed`, which
/// also initializes the model, and the constraint weight comes from `method`.
#[allow(clippy::too_many_arguments)]
pub fn run_seed(
    grid: &CoordGrid,
    train_split: &PreparedSplit,
    val_split: &PreparedSplit,
    setting: ConstraintSetting,
    model_cfg: ModelConfig,
    method: &MethodConfig,
    loop_cfg: &LoopConfig,
    seed: u64,
    observer: &mut dyn FnMut(&EpochRecord) -> Result<()>,
) -> Result<RunResult> {
    let mut cfg = loop_cfg.clone();
    cfg.optimizer.seed = seed;
    cfg.constraint_weight = method.constraint_weight;
    let model = PixelModel::init(model_cfg, seed)?;
    let schedule = BarrierSchedule::new(method.t0, method.mu)?;
    let mut state = TrainState::new(model.params, &cfg.optimizer, schedule)?;
    let problem = SegProblem {
        model: model_cfg,
        grid,
        train: train_split,
        val: val_split,
    };
    let records = train(&mut state, &problem, &cfg, method.method(), observer)?;
    let model = PixelModel::from_params(model_cfg, state.params)?;

    let final_eval = match records.last() {
        Some(r) => Evaluation { train: r.train_score, val: r.val_score },
        None => problem.evaluate(&model.params)?,
    };
    let val_series: Vec<f64> = records.iter().filter_map(|r| r.val_score).collect();
    let final_val = final_eval.val.unwrap_or(0.0);
    let summary = RunSummary {
        seed,
        setting,
        method: method.handler,
        epochs: records.len(),
        final_val_dice: final_val,
        best_val_dice: val_series.iter().copied().fold(final_val, f64::max),
        final_train_dice: final_eval.train.unwrap_or(0.0),
        stability_std: stability_std(&val_series, STABILITY_WINDOW),
        satisfaction_rate: val_split.satisfaction_rate(&model, grid)?,
    };
    Ok(RunResult { summary, records, model })
}

/// A cell of the comparison grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSetting {
    pub constraints: ConstraintSetting,
    pub method: HandlerKind,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub setting: ExperimentSetting,
    pub runs: Vec<RunSummary>,
    pub mean_final_val_dice: f64,
    pub mean_stability_std: f64,
}

/// Train every seed of `setting` (in parallel) on `samples`.
#[allow(clippy::too_many_arguments)]
pub fn run_experiment(
    setting: &ExperimentSetting,
    train_samples: &[Sample],
    val_samples: &[Sample],
    model_cfg: ModelConfig,
    method: &MethodConfig,
    loop_cfg: &LoopConfig,
    bounds: &BoundsConfig,
) -> Result<ExperimentResult> {
    let first = train_samples.first().ok_or_else(|| Error::Config("empty training split".into()))?;
    let grid = CoordGrid::new(first.width, first.height)?;
    let train_split = PreparedSplit::new(train_samples, &grid, setting.constraints, bounds)?;
    let val_split = PreparedSplit::new(val_samples, &grid, setting.constraints, bounds)?;
    let method = MethodConfig { handler: setting.method, ..method.clone() };
    let one = |&seed: &u64| {
        run_seed(&grid, &train_split, &val_split, setting.constraints, model_cfg, &method, loop_cfg, seed, &mut |_| Ok(()))
            .map(|r| r.summary)
    };
    // With a single worker, stay on the calling thread: allocator arenas of
    // pool threads cost noticeable system time on this allocation-heavy loop.
    let runs = if rayon::current_num_threads() > 1 {
        setting.seeds.par_iter().map(one).collect::<Result<Vec<_>>>()?
    } else {
        setting.seeds.iter().map(one).collect::<Result<Vec<_>>>()?
    };
    let n = runs.len().max(1) as f64;
    Ok(ExperimentResult {
        setting: setting.clone(),
        mean_final_val_dice: runs.iter().map(|r| r.final_val_dice).sum::<f64>() / n,
        mean_stability_std: runs.iter().map(|r| r.stability_std).sum::<f64>() / n,
        runs,
    })
}
