use serde::{Deserialize, Serialize};

use super::linalg::{dot, norm, solve_spd};
use super::qp::{dual_function_qp, oracle_optimum, ConvexQp};
use crate::barrier::{implicit_dual, psi_ext, psi_ext_grad, psi_std};
use crate::error::{Error, Result};

/// Target gradient norm of the inner barrier minimization.
pub const GRAD_TOL: f64 = 1e-10;
/// Required Lagrangian stationarity at a certified primal-dual pair.
pub const STATIONARITY_TOL: f64 = 1e-8;
/// Required agreement between `E - g` and `-Σ λ_i f_i`.
pub const IDENTITY_TOL: f64 = 1e-8;

const MAX_NEWTON: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Barrier {
    Standard,
    Extension,
}

impl Barrier {
    fn value(self, z: f64, t: f64) -> Option<f64> {
        match self {
            Barrier::Standard => psi_std(z, t).ok(),
            Barrier::Extension => Some(psi_ext(z, t)),
        }
    }

    fn first(self, z: f64, t: f64) -> f64 {
        match self {
            Barrier::Standard => -1.0 / (t * z),
            Barrier::Extension => psi_ext_grad(z, t),
        }
    }

    fn second(self, z: f64, t: f64) -> f64 {
        match self {
            Barrier::Extension if z > -1.0 / (t * t) => 0.0,
            _ => 1.0 / (t * z * z),
        }
    }
}

/// `E(θ) + Σ ψ(f_i(θ))`, or `None` outside the barrier domain.
fn barrier_objective(qp: &ConvexQp, theta: &[f64], t: f64, barrier: Barrier) -> Option<f64> {
    qp.constraint_values(theta)
        .into_iter()
        .try_fold(qp.objective(theta), |acc, f| barrier.value(f, t).map(|h| acc + h))
}

fn barrier_gradient(qp: &ConvexQp, theta: &[f64], t: f64, barrier: Barrier) -> Vec<f64> {
    let f = qp.constraint_values(theta);
    let weights: Vec<f64> = f.iter().map(|&z| barrier.first(z, t)).collect();
    qp.lagrangian_gradient(theta, &weights)
}

fn barrier_hessian(qp: &ConvexQp, theta: &[f64], t: f64, barrier: Barrier) -> Vec<f64> {
    let d = qp.dim();
    let mut h = vec![0.0; d * d];
    for i in 0..d {
        h[i * d + i] = 2.0;
    }
    for (row, z) in qp.rows().iter().zip(qp.constraint_values(theta)) {
        let w = barrier.second(z, t);
        if w == 0.0 {
            continue;
        }
        for i in 0..d {
            for j in 0..d {
                h[i * d + j] += w * row[i] * row[j];
            }
        }
    }
    h
}

/// Damped Newton on the barrier objective, halving the step until it stays
/// inside the domain and decreases the objective.
pub fn minimize_barrier(qp: &ConvexQp, start: &[f64], t: f64, barrier: Barrier) -> Result<(Vec<f64>, usize)> {
    let mut theta = start.to_vec();
    let mut value = barrier_objective(qp, &theta, t, barrier)
        .ok_or_else(|| Error::Certification("start point outside the barrier domain".into()))?;
    for iter in 0..MAX_NEWTON {
        let g = barrier_gradient(qp, &theta, t, barrier);
        let gnorm = norm(&g);
        if gnorm < GRAD_TOL {
            return Ok((theta, iter));
        }
        let h = barrier_hessian(qp, &theta, t, barrier);
        let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
        let step = solve_spd(&h, &neg_g).ok_or_else(|| Error::Certification("Hessian not positive definite".into()))?;
        let slope = dot(&g, &step);

        let mut alpha = 1.0;
        let accepted = loop {
            if alpha < 1e-20 {
                break None;
            }
            let cand: Vec<f64> = theta.iter().zip(&step).map(|(x, p)| x + alpha * p).collect();
            match barrier_objective(qp, &cand, t, barrier) {
                Some(v) if v <= value + 1e-4 * alpha * slope => break Some((cand, v)),
                // objective decrease is below rounding near the optimum; fall back to the gradient norm
                Some(v) if v <= value + 1e-12 * (1.0 + value.abs()) => {
                    if norm(&barrier_gradient(qp, &cand, t, barrier)) < gnorm {
                        break Some((cand, v));
                    }
                }
                _ => {}
            }
            alpha *= 0.5;
        };
        match accepted {
            Some((cand, v)) => {
                theta = cand;
                value = v;
            }
            None => {
                return Err(Error::Certification(format!(
                    "line search stalled at gradient norm {gnorm:e} (t = {t})"
                )))
            }
        }
    }
    Err(Error::Certification(format!("no convergence in {MAX_NEWTON} Newton steps (t = {t})")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateKind {
    /// Standard log-barrier: gap equals `N/t`.
    StandardBarrier,
    /// Log-barrier extension: gap bounded by `N/t`.
    Extension,
}

/// Outcome of the ε-suboptimality check against the exact oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Suboptimality {
    Pass { excess: f64 },
    Fail { excess: f64 },
    /// The iterate is infeasible, so the bound does not apply.
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapCertificate {
    pub kind: CertificateKind,
    pub t: f64,
    pub n: usize,
    pub theta: Vec<f64>,
    pub lambda: Vec<f64>,
    /// `E(θ*)`
    pub primal: f64,
    /// `g(λ*)`
    pub dual: f64,
    /// `primal - dual`
    pub gap: f64,
    /// `N / t`
    pub bound: f64,
    pub feasible: bool,
    /// `λ*_i f_i(θ*)`
    pub per_term: Vec<f64>,
    /// `||∇_θ L(θ*, λ*)||`
    pub stationarity: f64,
    /// Constraint counts in `f <= -1/t²`, `-1/t² < f <= 0`, `f > 0`.
    pub cases: [usize; 3],
    pub newton_steps: usize,
    pub suboptimality: Option<Suboptimality>,
    pub failures: Vec<String>,
}

impl GapCertificate {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    fn build(kind: CertificateKind, qp: &ConvexQp, t: f64, theta: Vec<f64>, lambda: Vec<f64>, steps: usize) -> Result<Self> {
        let f = qp.constraint_values(&theta);
        let primal = qp.objective(&theta);
        let dual = dual_function_qp(qp, &lambda)?;
        let per_term: Vec<f64> = lambda.iter().zip(&f).map(|(l, z)| l * z).collect();
        let junction = -1.0 / (t * t);
        let mut cases = [0; 3];
        for &z in &f {
            cases[if z <= junction { 0 } else if z <= 0.0 { 1 } else { 2 }] += 1;
        }
        let n = qp.n_constraints();
        Ok(Self {
            kind,
            t,
            n,
            stationarity: norm(&qp.lagrangian_gradient(&theta, &lambda)),
            theta,
            lambda,
            primal,
            dual,
            gap: primal - dual,
            bound: n as f64 / t,
            feasible: f.iter().all(|&z| z <= 0.0),
            per_term,
            cases,
            newton_steps: steps,
            suboptimality: None,
            failures: Vec::new(),
        })
    }

    /// `|gap - (-Σ λ_i f_i)|`
    pub fn identity_residual(&self) -> f64 {
        (self.gap + self.per_term.iter().sum::<f64>()).abs()
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(what());
        }
    }
}

/// Minimize the standard-barrier objective from a strictly feasible point
/// and certify that the duality gap equals `N/t` within `tol`.
pub fn certify_prop1(qp: &ConvexQp, interior: &[f64], t: f64, tol: f64) -> Result<GapCertificate> {
    if !(t > 0.0) {
        return Err(Error::Config(format!("t must be positive, got {t}")));
    }
    let (theta, steps) = minimize_barrier(qp, interior, t, Barrier::Standard)?;
    let lambda: Vec<f64> = qp.constraint_values(&theta).iter().map(|&z| -1.0 / (t * z)).collect();
    let mut cert = GapCertificate::build(CertificateKind::StandardBarrier, qp, t, theta, lambda, steps)?;
    let (gap, bound, stat) = (cert.gap, cert.bound, cert.stationarity);
    cert.check(cert.feasible, || "barrier minimizer is not strictly feasible".into());
    cert.check((gap - bound).abs() <= tol, || format!("|gap - N/t| = {:e} > {tol:e}", (gap - bound).abs()));
    cert.check(stat < STATIONARITY_TOL, || format!("stationarity residual {stat:e}"));
    Ok(cert)
}

/// Minimize the extension objective from an arbitrary start and certify the
/// implicit-dual bounds: `λ* > 0`, `gap <= N/t + tol`,
/// `λ*_i f_i >= -1/t - tol`, and Lagrangian stationarity.
pub fn certify_prop2(qp: &ConvexQp, start: &[f64], t: f64, tol: f64) -> Result<GapCertificate> {
    if !(t > 0.0) {
        return Err(Error::Config(format!("t must be positive, got {t}")));
    }
    let (theta, steps) = minimize_barrier(qp, start, t, Barrier::Extension)?;
    let lambda: Vec<f64> = qp.constraint_values(&theta).iter().map(|&z| implicit_dual(z, t)).collect();
    let mut cert = GapCertificate::build(CertificateKind::Extension, qp, t, theta, lambda, steps)?;
    let (gap, bound, stat) = (cert.gap, cert.bound, cert.stationarity);
    cert.check(cert.lambda.iter().all(|&l| l > 0.0), || "non-positive implicit dual".into());
    cert.check(gap <= bound + tol, || format!("gap {gap:e} exceeds N/t = {bound:e}"));
    if let Some((i, &p)) = cert.per_term.iter().enumerate().find(|(_, &p)| p < -1.0 / t - tol) {
        cert.failures.push(format!("term {i}: λ f = {p:e} < -1/t"));
    }
    cert.check(stat < STATIONARITY_TOL, || format!("stationarity residual {stat:e}"));
    let id = cert.identity_residual();
    cert.check(id < IDENTITY_TOL, || format!("gap identity residual {id:e}"));
    Ok(cert)
}

/// Compare a certified iterate against the exact constrained optimum.
pub fn certify_epsilon_subopt(cert: &GapCertificate, qp: &ConvexQp, tol: f64) -> Result<Suboptimality> {
    if !cert.feasible {
        return Ok(Suboptimality::NotApplicable);
    }
    let (_, e_star) = oracle_optimum(qp)?;
    let excess = cert.primal - e_star;
    Ok(if excess <= cert.bound + tol {
        Suboptimality::Pass { excess }
    } else {
        Suboptimality::Fail { excess }
    })
}
