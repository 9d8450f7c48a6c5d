use super::train::dual_step;
use super::*;
use crate::autodiff::grad_check;
use crate::barrier::{psi_ext_grad, quadratic_penalty_grad, relu_penalty_grad, HandlerKind};

/// `min θ²` subject to affine constraints `a θ + b <= 0`, replicated over
/// `copies` identical examples.
struct Line {
    constraints: Vec<(f64, f64)>,
    copies: usize,
    with_data: bool,
}

impl Line {
    fn new(constraints: Vec<(f64, f64)>) -> Self {
        Self { constraints, copies: 1, with_data: true }
    }
}

impl Problem for Line {
    fn n_examples(&self) -> usize {
        self.copies
    }

    fn record(&self, tape: &mut Tape, params: &[Var], _index: usize) -> Result<Terms> {
        let theta = params[0];
        let data = if self.with_data { Some(tape.mul(theta, theta)?) } else { None };
        let mut constraints = Vec::new();
        for &(a, b) in &self.constraints {
            let at = tape.scalar_mul(theta, a)?;
            constraints.push(tape.add_scalar(at, b)?);
        }
        Ok(Terms { data, constraints })
    }
}

fn theta0(v: f64) -> Vec<Tensor> {
    vec![Tensor::scalar(v)]
}

fn loop_cfg(method: OptimizerKind, lr: f64, epochs: usize) -> LoopConfig {
    LoopConfig {
        optimizer: OptimizerConfig {
            method,
            learning_rate: lr,
            epochs,
            ..OptimizerConfig::default()
        },
        constraint_weight: 1.0,
        plateau_patience: None,
    }
}

fn state(params: Vec<Tensor>, cfg: &LoopConfig) -> TrainState {
    TrainState::new(params, &cfg.optimizer, BarrierSchedule::new(5.0, 1.1).unwrap()).unwrap()
}

fn theta(state: &TrainState) -> f64 {
    state.params[0].data()[0]
}

// 1 - θ <= 0
const HALF_LINE: (f64, f64) = (-1.0, 1.0);

#[test]
fn partial_cross_entropy_examples() {
    let mut tape = Tape::new();
    let s = tape.leaf(Tensor::matrix(2, 2, vec![0.5, 0.5, 0.0, 1.0]).unwrap());
    let empty = partial_cross_entropy(&mut tape, s, &[]).unwrap();
    assert_eq!(tape.scalar(empty).unwrap(), 0.0);
    let certain = partial_cross_entropy(&mut tape, s, &[(1, 1)]).unwrap();
    assert_eq!(tape.scalar(certain).unwrap(), 0.0);
    let half = partial_cross_entropy(&mut tape, s, &[(0, 1)]).unwrap();
    assert!((tape.scalar(half).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    assert!(matches!(
        partial_cross_entropy(&mut tape, s, &[(0, 2)]),
        Err(Error::IndexOutOfRange { what: "label", .. })
    ));
    assert!(partial_cross_entropy(&mut tape, s, &[(2, 0)]).is_err());
}

#[test]
fn total_loss_examples() {
    let mut tape = Tape::new();
    let d = tape.constant(3.0);
    let (loss, report) = total_loss(&mut tape, &Terms { data: Some(d), constraints: vec![] }, HandlerKind::LogBarrierExtension, 1.0, 1.0).unwrap();
    assert_eq!(tape.scalar(loss).unwrap(), 3.0);
    assert_eq!(report.violation_count, 0);

    let f = tape.constant(-2.0);
    let terms = Terms { data: None, constraints: vec![f] };
    let (loss, _) = total_loss(&mut tape, &terms, HandlerKind::LogBarrierExtension, 1.0, 1.0).unwrap();
    assert!((tape.scalar(loss).unwrap() + std::f64::consts::LN_2).abs() < 1e-15);

    let (f1, f2) = (tape.constant(1.0), tape.constant(-1.0));
    let terms = Terms { data: None, constraints: vec![f1, f2] };
    let (loss, report) = total_loss(&mut tape, &terms, HandlerKind::QuadraticPenalty, 1.0, 1.0).unwrap();
    assert_eq!(tape.scalar(loss).unwrap(), 1.0);
    assert_eq!(report.violation_count, 1);
    assert_eq!(report.f_values, vec![1.0, -1.0]);

    assert!(matches!(
        total_loss(&mut tape, &terms, HandlerKind::StandardLogBarrier, 1.0, 1.0),
        Err(Error::Infeasible { index: 0, .. })
    ));
    assert!(total_loss(&mut tape, &terms, HandlerKind::LagrangianDual, 1.0, 1.0).is_err());
}

#[test]
fn total_loss_gradients_match_finite_differences() {
    for handler in [
        HandlerKind::QuadraticPenalty,
        HandlerKind::ReluPenalty,
        HandlerKind::StandardLogBarrier,
        HandlerKind::LogBarrierExtension,
    ] {
        // f1 = x0 - 3, f2 = x1 - 4 - x0 are strictly negative near the point.
        let point = Tensor::vector(vec![0.7, -0.4]);
        let err = grad_check(
            |tape, x| {
                let a = tape.index_select(x, 0, &[0])?;
                let b = tape.index_select(x, 0, &[1])?;
                let sq = tape.mul(x, x)?;
                let data = tape.sum(sq)?;
                let f1 = tape.add_scalar(a, -3.0)?;
                let d = tape.sub(b, a)?;
                let f2 = tape.add_scalar(d, -0.8)?;
                let f3 = tape.add_scalar(a, 0.1)?;
                let mut constraints = vec![f1, f2];
                if handler != HandlerKind::StandardLogBarrier {
                    constraints.push(f3);
                }
                let (loss, _) = total_loss(tape, &Terms { data: Some(data), constraints }, handler, 2.5, 0.7)?;
                Ok(loss)
            },
            &point,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{handler}: {err}");
    }
}

#[test]
fn barrier_pushes_back_while_penalties_are_flat_inside() {
    for &t in &[0.5, 5.0, 50.0] {
        for i in 1..100 {
            let f = -(i as f64) * 0.05;
            assert_eq!(quadratic_penalty_grad(f), 0.0);
            assert_eq!(relu_penalty_grad(f, t), 0.0);
            assert!(psi_ext_grad(f, t) > 0.0);
        }
    }
}

#[test]
fn adam_step_matches_hand_computation() {
    let cfg = OptimizerConfig { learning_rate: 0.1, ..OptimizerConfig::default() };
    let mut params = theta0(1.0);
    let mut opt = Optimizer::new(&cfg, &params);
    opt.apply(&mut params, &[Tensor::scalar(2.0)], 0.1);
    // First bias-corrected Adam step moves by lr * g / (|g| + eps).
    let expected = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
    assert!((params[0].data()[0] - expected).abs() < 1e-15);
}

#[test]
fn algorithm1_reaches_the_constrained_optimum() {
    // Ten steps per epoch: Adam's second moment remembers the slope-t
    // gradients of the linear branch, so each crossing overshoots by a few
    // dozen learning rates.
    let cfg = loop_cfg(OptimizerKind::Adam, 1e-3, 200);
    let mut st = state(theta0(0.0), &cfg);
    let problem = Line { constraints: vec![HALF_LINE], copies: 10, with_data: true };
    let records = train_algorithm1(&mut st, &problem, &cfg).unwrap();
    assert!((theta(&st) - 1.0).abs() < 0.05, "θ = {}", theta(&st));
    assert_eq!(records.len(), 200);
    for w in records.windows(2) {
        assert_eq!(w[1].t, w[0].t * 1.1);
        assert_eq!(w[1].epoch, w[0].epoch + 1);
    }
    assert_eq!(st.schedule.steps(), 200);
}

#[test]
fn quadratic_penalty_under_satisfies() {
    let cfg = loop_cfg(OptimizerKind::Sgd, 0.1, 300);
    let mut st = state(theta0(0.0), &cfg);
    let records = train_penalty(&mut st, &Line::new(vec![HALF_LINE]), &cfg, HandlerKind::QuadraticPenalty).unwrap();
    assert!((theta(&st) - 0.5).abs() < 1e-9, "θ = {}", theta(&st));
    assert!(records.iter().all(|r| r.t == 5.0));
    assert!(train_penalty(&mut st, &Line::new(vec![]), &cfg, HandlerKind::LogBarrierExtension).is_err());
}

#[test]
fn relu_penalty_follows_the_schedule() {
    let cfg = loop_cfg(OptimizerKind::Adam, 0.02, 20);
    let mut st = state(theta0(0.0), &cfg);
    let records = train_penalty(&mut st, &Line::new(vec![HALF_LINE]), &cfg, HandlerKind::ReluPenalty).unwrap();
    assert_eq!(records[19].t, records[18].t * 1.1);
}

#[test]
fn dual_ascent_approaches_the_kkt_point() {
    let cfg = loop_cfg(OptimizerKind::Sgd, 0.1, 3000);
    let mut st = state(theta0(0.0), &cfg);
    train_lagrangian_dual(&mut st, &Line::new(vec![HALF_LINE]), &cfg, 0.1).unwrap();
    assert!((theta(&st) - 1.0).abs() < 1e-3, "θ = {}", theta(&st));
    assert!((st.lambda[0][0] - 2.0).abs() < 1e-2, "λ = {:?}", st.lambda);
}

#[test]
fn dual_step_examples() {
    let mut l = vec![0.5];
    dual_step(&mut l, &[0.3], 0.1);
    assert!((l[0] - 0.53).abs() < 1e-15);
    let mut l = vec![0.01, 0.0];
    dual_step(&mut l, &[-1.0, -1.0], 0.1);
    assert_eq!(l, vec![0.0, 0.0]);
}

#[test]
fn satisfied_constraints_leave_dual_at_zero() {
    // θ - 10 <= 0 holds throughout.
    let cfg = loop_cfg(OptimizerKind::Adam, 0.05, 50);
    let mut dual = state(theta0(2.0), &cfg);
    train_lagrangian_dual(&mut dual, &Line::new(vec![(1.0, -10.0)]), &cfg, 0.1).unwrap();
    assert_eq!(dual.lambda[0], vec![0.0]);
    let mut plain = state(theta0(2.0), &cfg);
    train_plain(&mut plain, &Line::new(vec![]), &cfg).unwrap();
    assert_eq!(theta(&dual), theta(&plain));
}

#[test]
fn every_loop_reduces_to_adam_without_constraints() {
    let cfg = LoopConfig {
        optimizer: OptimizerConfig {
            learning_rate: 0.03,
            epochs: 40,
            batch_size: 2,
            seed: 9,
            ..OptimizerConfig::default()
        },
        constraint_weight: 1.0,
        plateau_patience: None,
    };
    let problem = Line { constraints: vec![], copies: 5, with_data: true };

    // Independent Adam on d/dθ Σ θ² over shuffled batches of the same sizes.
    let mut th = 1.5;
    let (mut m, mut v) = (0.0, 0.0);
    let mut step = 0;
    for _ in 0..40 {
        for size in [2, 2, 1] {
            step += 1;
            let g = size as f64 * 2.0 * th;
            m = 0.9 * m + (1.0 - 0.9) * g;
            v = 0.999 * v + (1.0 - 0.999) * g * g;
            let mh = m / (1.0 - 0.9f64.powi(step));
            let vh = v / (1.0 - 0.999f64.powi(step));
            th -= 0.03 * mh / (vh.sqrt() + 1e-8);
        }
    }

    let methods = [
        Method::Plain,
        Method::Algorithm1,
        Method::Penalty { handler: HandlerKind::QuadraticPenalty },
        Method::Penalty { handler: HandlerKind::ReluPenalty },
        Method::StandardBarrier { phase1: Phase1Config::default() },
        Method::LagrangianDual { dual_lr: 1e-3 },
    ];
    for method in methods {
        let mut st = state(theta0(1.5), &cfg);
        train(&mut st, &problem, &cfg, method, &mut |_| Ok(())).unwrap();
        assert_eq!(theta(&st), th, "{method:?}");
    }
}

#[test]
fn phase1_examples() {
    let cfg = OptimizerConfig { learning_rate: 0.01, ..OptimizerConfig::default() };
    let p1 = Phase1Config::default();

    let start = theta0(3.0);
    let out = phase1_feasible(start.clone(), &Line::new(vec![HALF_LINE]), &p1, &cfg).unwrap();
    assert_eq!(out, start);

    let out = phase1_feasible(theta0(0.0), &Line::new(vec![HALF_LINE]), &p1, &cfg).unwrap();
    assert!(out[0].data()[0] > 1.0 + p1.delta);

    // θ <= 0 and 1 - θ <= 0 cannot hold together.
    let contradictory = Line::new(vec![(1.0, 0.0), HALF_LINE]);
    let quick = Phase1Config { max_epochs: 200, ..p1 };
    assert!(matches!(
        phase1_feasible(theta0(0.0), &contradictory, &quick, &cfg),
        Err(Error::Phase1Failed { iterations: 200, .. })
    ));
}

#[test]
fn standard_barrier_trains_after_phase1() {
    // Short run: as t grows the barrier minimizer hugs the boundary and a
    // fixed-size step eventually crosses it.
    let cfg = loop_cfg(OptimizerKind::Adam, 1e-3, 30);
    let mut st = state(theta0(0.0), &cfg);
    let problem = Line { constraints: vec![HALF_LINE], copies: 10, with_data: true };
    train_standard_barrier(&mut st, &problem, &cfg, &Phase1Config::default()).unwrap();
    assert!(theta(&st) > 1.0 && theta(&st) < 1.1, "θ = {}", theta(&st));
}

#[test]
fn standard_barrier_rejects_infeasible_steps() {
    // SGD with a large step jumps straight across the boundary.
    let cfg = loop_cfg(OptimizerKind::Sgd, 2.0, 10);
    let mut st = state(theta0(2.0), &cfg);
    let err = train_standard_barrier(&mut st, &Line::new(vec![HALF_LINE]), &cfg, &Phase1Config::default()).unwrap_err();
    assert!(matches!(err, Error::Infeasible { .. }), "{err}");
}

#[test]
fn nan_loss_aborts_with_the_offending_term() {
    struct Bad;
    impl Problem for Bad {
        fn n_examples(&self) -> usize {
            1
        }
        fn record(&self, tape: &mut Tape, params: &[Var], _: usize) -> Result<Terms> {
            let neg = tape.scalar_mul(params[0], -1.0)?;
            let data = tape.log(neg)?;
            Ok(Terms { data: Some(data), constraints: vec![] })
        }
    }
    let cfg = loop_cfg(OptimizerKind::Sgd, 0.1, 3);
    let mut st = state(theta0(1.0), &cfg);
    let err = train_plain(&mut st, &Bad, &cfg).unwrap_err();
    assert!(matches!(err, Error::NanLoss { ref term, epoch: 1 } if term == "data term"), "{err}");
}

#[test]
fn training_is_deterministic() {
    let cfg = LoopConfig {
        optimizer: OptimizerConfig { learning_rate: 0.05, epochs: 30, seed: 4, ..OptimizerConfig::default() },
        ..LoopConfig::default()
    };
    let problem = Line { constraints: vec![HALF_LINE, (0.5, -2.0)], copies: 4, with_data: true };
    let run = || {
        let mut st = state(theta0(-1.0), &cfg);
        let recs = train_algorithm1(&mut st, &problem, &cfg).unwrap();
        (theta(&st), recs.iter().map(|r| (r.data_loss, r.constraint_loss, r.t)).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}

#[test]
fn plateau_halves_the_learning_rate() {
    let cfg = OptimizerConfig::default();
    let mut st = TrainState::new(theta0(0.0), &cfg, BarrierSchedule::new(5.0, 1.1).unwrap()).unwrap();
    st.observe_val(Some(0.5), Some(3));
    for _ in 0..3 {
        st.observe_val(Some(0.4), Some(3));
    }
    assert_eq!(st.learning_rate, cfg.learning_rate / 2.0);
    st.observe_val(Some(0.6), Some(3));
    st.observe_val(Some(0.6), Some(3));
    assert_eq!(st.learning_rate, cfg.learning_rate / 2.0);
}

#[test]
fn config_validation() {
    assert!(OptimizerConfig { learning_rate: 0.0, ..OptimizerConfig::default() }.validate().is_err());
    assert!(OptimizerConfig { batch_size: 0, ..OptimizerConfig::default() }.validate().is_err());
    let cfg = loop_cfg(OptimizerKind::Sgd, 0.1, 1);
    let mut st = state(theta0(0.0), &cfg);
    assert!(train_lagrangian_dual(&mut st, &Line::new(vec![]), &cfg, 0.0).is_err());
}

