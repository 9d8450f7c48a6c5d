use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{grad_check, Tape, Tensor, Var};
use crate::barrier::HandlerKind;
use crate::constraints::{canonicalize, ConstraintSpec, CoordGrid};
use crate::error::Result;
use crate::optimize::{partial_cross_entropy, total_loss, Terms};
use crate::segbench::{ModelConfig, PixelModel, N_FEATURES};

/// Pass threshold for every component.
pub const GRAD_TOL: f64 = 1e-5;
const STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckResult {
    pub component: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Weighted sum `Σ w_i x_i` of scalar vars, so every input gets a distinct
/// sensitivity.
fn weighted_sum(tape: &mut Tape, xs: &[Var], weights: &[f64]) -> Result<Var> {
    let mut acc = tape.constant(0.0);
    for (&x, &w) in xs.iter().zip(weights) {
        let wx = tape.scalar_mul(x, w)?;
        acc = tape.add(acc, wx)?;
    }
    Ok(acc)
}

fn handler_component(rng: &mut ChaCha8Rng, handler: HandlerKind) -> Result<f64> {
    // Constraints f = A x + b with values spread across both barrier branches
    // (strictly negative for the standard barrier).
    let n = 5;
    let dim = 3;
    let a = uniform(rng, n * dim, -1.0, 1.0);
    let t = 2.5;
    let point = Tensor::vector(uniform(rng, dim, -0.5, 0.5));
    let offsets: Vec<f64> = (0..n)
        .map(|i| match handler {
            HandlerKind::StandardLogBarrier => -3.0 - i as f64 * 0.5,
            _ => -1.5 + 0.8 * i as f64,
        })
        .collect();
    let a_t = Tensor::matrix(dim, n, (0..dim * n).map(|k| a[(k % n) * dim + k / n]).collect())?;
    let program = |tape: &mut Tape, x: Var| -> Result<Var> {
        let sq = tape.mul(x, x)?;
        let data = tape.sum(sq)?;
        let row = tape.reshape(x, &[1, dim])?;
        let am = tape.input(a_t.clone());
        let ax = tape.matmul(row, am)?;
        let flat = tape.reshape(ax, &[n])?;
        let constraints = (0..n)
            .map(|i| {
                let fi = tape.index_select(flat, 0, &[i])?;
                let fi = tape.reshape(fi, &[])?;
                tape.add_scalar(fi, offsets[i])
            })
            .collect::<Result<Vec<_>>>()?;
        let (loss, _) = total_loss(tape, &Terms { data: Some(data), constraints }, handler, t, 0.7)?;
        Ok(loss)
    };
    grad_check(program, &point, STEP)
}

/// Softmax map of random logits on a small grid, fed through one spec.
fn constraint_component(rng: &mut ChaCha8Rng, spec: ConstraintSpec) -> Result<f64> {
    let grid = CoordGrid::new(6, 5)?;
    let logits = Tensor::matrix(grid.len(), 2, uniform(rng, grid.len() * 2, -1.0, 1.0))?;
    let weights = uniform(rng, spec.scalar_count(), 0.5, 1.5);
    grad_check(
        |tape, z| {
            let s = tape.softmax_rows(z, 5.0)?;
            let fs = canonicalize(tape, &spec, s, &grid)?;
            weighted_sum(tape, &fs, &weights)
        },
        &logits,
        STEP,
    )
}

fn cross_entropy_component(rng: &mut ChaCha8Rng) -> Result<f64> {
    let logits = Tensor::matrix(2, 2, uniform(rng, 4, -1.0, 1.0))?;
    grad_check(
        |tape, z| {
            let s = tape.softmax_rows(z, 1.0)?;
            partial_cross_entropy(tape, s, &[(0, 1), (1, 0)])
        },
        &logits,
        STEP,
    )
}

/// Extension loss of a constrained pixel model, differentiated w.r.t. the
/// output layer weights.
fn pipeline_component(rng: &mut ChaCha8Rng, seed: u64) -> Result<f64> {
    let grid = CoordGrid::new(8, 8)?;
    let model = PixelModel::init(ModelConfig::default(), seed)?;
    let features = Tensor::matrix(grid.len(), N_FEATURES, uniform(rng, grid.len() * N_FEATURES, -1.0, 1.0))?;
    let specs = [
        ConstraintSpec::SizeBox { class: 1, lower: 20.0, upper: 30.0 },
        ConstraintSpec::CentroidBox { class: 1, x_lo: 2.0, x_hi: 5.0, y_lo: 1.0, y_hi: 6.0 },
    ];
    grad_check(
        |tape, w2| {
            let x = tape.input(features.clone());
            let params = [
                tape.input(model.params[0].clone()),
                tape.input(model.params[1].clone()),
                w2,
                tape.input(model.params[3].clone()),
            ];
            let s = PixelModel::forward(&model.config, tape, &params, x)?;
            let mut constraints = Vec::new();
            for spec in &specs {
                constraints.extend(canonicalize(tape, spec, s, &grid)?);
            }
            let (loss, _) = total_loss(tape, &Terms { data: None, constraints }, HandlerKind::LogBarrierExtension, 5.0, 1.0)?;
            Ok(loss)
        },
        &model.params[2],
        STEP,
    )
}

/// Finite-difference check of every differentiable component.
pub fn grad_check_suite(seed: u64) -> Result<Vec<GradCheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut push = |component: &str, err: f64| {
        out.push(GradCheckResult {
            component: component.to_string(),
            max_rel_error: err,
            passed: err < GRAD_TOL,
        })
    };

    let point = Tensor::vector(uniform(&mut rng, 6, -2.0, 2.0));
    push(
        "quadratic_objective",
        grad_check(
            |tape, x| {
                let sq = tape.mul(x, x)?;
                tape.sum(sq)
            },
            &point,
            STEP,
        )?,
    );
    for handler in [
        HandlerKind::QuadraticPenalty,
        HandlerKind::ReluPenalty,
        HandlerKind::StandardLogBarrier,
        HandlerKind::LogBarrierExtension,
    ] {
        let err = handler_component(&mut rng, handler)?;
        push(&format!("handler/{handler}"), err);
    }
    let size = ConstraintSpec::SizeBox { class: 1, lower: 12.0, upper: 16.0 };
    push("constraint/size", constraint_component(&mut rng, size)?);
    let centroid = ConstraintSpec::CentroidBox { class: 1, x_lo: 1.5, x_hi: 3.0, y_lo: 2.5, y_hi: 3.5 };
    push("constraint/centroid", constraint_component(&mut rng, centroid)?);
    push("partial_cross_entropy", cross_entropy_component(&mut rng)?);
    push("segmentation_pipeline", pipeline_component(&mut rng, seed)?);
    Ok(out)
}
