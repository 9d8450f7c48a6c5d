use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::linalg::{dot, solve_general};
use crate::error::{Error, Result};

/// Largest dimension / constraint count the exhaustive oracle accepts.
pub const ORACLE_MAX: usize = 8;

/// `min ||θ - c||²  s.t.  Aθ - b <= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexQp {
    center: Vec<f64>,
    /// `N` rows of length `d`.
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
}

impl ConvexQp {
    pub fn new(center: Vec<f64>, rows: Vec<Vec<f64>>, rhs: Vec<f64>) -> Result<Self> {
        let d = center.len();
        if d == 0 {
            return Err(Error::InvalidSpec("empty objective center".into()));
        }
        if rows.len() != rhs.len() || rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape {
                op: "convex_qp",
                detail: format!("{} rows, {} bounds, dimension {d}", rows.len(), rhs.len()),
            });
        }
        let all = center.iter().chain(rhs.iter()).chain(rows.iter().flatten());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "convex_qp" });
        }
        Ok(Self { center, rows, rhs })
    }

    /// Random instance with a known strictly feasible point, which is also
    /// returned. Rows of `A` are uniform on the unit sphere; each bound
    /// leaves a margin in `[0.1, 1]` around an interior point drawn from
    /// `[-1, 1]^d`. The objective center is drawn from `[-center_range, center_range]^d`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, dim: usize, n: usize, center_range: f64) -> (Self, Vec<f64>) {
        let interior: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let mut rows = Vec::with_capacity(n);
        let mut rhs = Vec::with_capacity(n);
        for _ in 0..n {
            let row = loop {
                let g: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
                let len = dot(&g, &g).sqrt();
                if len > 1e-9 {
                    break g.into_iter().map(|v| v / len).collect::<Vec<_>>();
                }
            };
            let margin = rng.random_range(0.1..=1.0);
            rhs.push(dot(&row, &interior) + margin);
            rows.push(row);
        }
        let center = (0..dim).map(|_| rng.random_range(-center_range..=center_range)).collect();
        (Self { center, rows, rhs }, interior)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn n_constraints(&self) -> usize {
        self.rows.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    /// `E(θ) = ||θ - c||²`
    pub fn objective(&self, theta: &[f64]) -> f64 {
        theta.iter().zip(&self.center).map(|(x, c)| (x - c) * (x - c)).sum()
    }

    /// `f_i(θ) = a_iᵀθ - b_i`
    pub fn constraint_values(&self, theta: &[f64]) -> Vec<f64> {
        self.rows.iter().zip(&self.rhs).map(|(a, b)| dot(a, theta) - b).collect()
    }

    /// `2(θ - c) + Aᵀλ`
    pub fn lagrangian_gradient(&self, theta: &[f64], lambda: &[f64]) -> Vec<f64> {
        let mut g: Vec<f64> = theta.iter().zip(&self.center).map(|(x, c)| 2.0 * (x - c)).collect();
        for (row, &l) in self.rows.iter().zip(lambda) {
            for (gj, aj) in g.iter_mut().zip(row) {
                *gj += l * aj;
            }
        }
        g
    }
}

/// Closed-form dual function: the Lagrangian is minimized at
/// `θ(λ) = c - Aᵀλ / 2`.
pub fn dual_function_qp(qp: &ConvexQp, lambda: &[f64]) -> Result<f64> {
    if lambda.len() != qp.n_constraints() {
        return Err(Error::Shape {
            op: "dual_function_qp",
            detail: format!("{} multipliers for {} constraints", lambda.len(), qp.n_constraints()),
        });
    }
    if let Some(&l) = lambda.iter().find(|&&l| !(l >= 0.0)) {
        return Err(Error::Domain {
            op: "dual_function_qp",
            value: l,
        });
    }
    let mut theta = qp.center.clone();
    for (row, &l) in qp.rows.iter().zip(lambda) {
        for (t, a) in theta.iter_mut().zip(row) {
            *t -= 0.5 * l * a;
        }
    }
    let f = qp.constraint_values(&theta);
    Ok(qp.objective(&theta) + dot(lambda, &f))
}

/// Exact constrained optimum by enumerating every candidate active set,
/// projecting `c` onto the corresponding affine subspace, and keeping the
/// best feasible projection.
pub fn oracle_optimum(qp: &ConvexQp) -> Result<(Vec<f64>, f64)> {
    let (d, n) = (qp.dim(), qp.n_constraints());
    if d > ORACLE_MAX || n > ORACLE_MAX {
        return Err(Error::InvalidSpec(format!("oracle supports d, N <= {ORACLE_MAX}; got d={d} N={n}")));
    }
    let feas_tol = 1e-9;
    let mut best: Option<(Vec<f64>, f64)> = None;
    for mask in 0u32..(1 << n) {
        let active: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let k = active.len();
        if k > d {
            continue;
        }
        // (A_S A_Sᵀ) μ = A_S c - b_S ; θ = c - A_Sᵀ μ
        let mut gram = vec![0.0; k * k];
        let mut rhs = vec![0.0; k];
        for (r, &i) in active.iter().enumerate() {
            for (s, &j) in active.iter().enumerate() {
                gram[r * k + s] = dot(&qp.rows[i], &qp.rows[j]);
            }
            rhs[r] = dot(&qp.rows[i], &qp.center) - qp.rhs[i];
        }
        let Some(mu) = solve_general(&gram, &rhs) else { continue };
        let mut theta = qp.center.clone();
        for (&i, m) in active.iter().zip(&mu) {
            for (t, a) in theta.iter_mut().zip(&qp.rows[i]) {
                *t -= m * a;
            }
        }
        if qp.constraint_values(&theta).iter().any(|&f| f > feas_tol) {
            continue;
        }
        let e = qp.objective(&theta);
        if best.as_ref().is_none_or(|(_, be)| e < *be) {
            best = Some((theta, e));
        }
    }
    best.ok_or_else(|| Error::Certification("oracle found no feasible candidate".into()))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn one_dim() -> ConvexQp {
        // min θ²  s.t.  1 - θ <= 0
        ConvexQp::new(vec![0.0], vec![vec![-1.0]], vec![-1.0]).unwrap()
    }

    #[test]
    fn dual_examples() {
        let qp = one_dim();
        assert_eq!(dual_function_qp(&qp, &[0.0]).unwrap(), 0.0);
        assert_eq!(dual_function_qp(&qp, &[2.0]).unwrap(), 1.0);
        assert!(dual_function_qp(&qp, &[-0.1]).is_err());
    }

    #[test]
    fn oracle_examples() {
        let interior = ConvexQp::new(vec![0.2, 0.1], vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![1.0, 1.0]).unwrap();
        let (theta, e) = oracle_optimum(&interior).unwrap();
        assert_eq!(theta, vec![0.2, 0.1]);
        assert_eq!(e, 0.0);

        let (theta, e) = oracle_optimum(&one_dim()).unwrap();
        assert_eq!(theta, vec![1.0]);
        assert_eq!(e, 1.0);

        // θ1 >= 1, θ2 >= 1
        let qp = ConvexQp::new(vec![0.0, 0.0], vec![vec![-1.0, 0.0], vec![0.0, -1.0]], vec![-1.0, -1.0]).unwrap();
        let (theta, e) = oracle_optimum(&qp).unwrap();
        assert!((theta[0] - 1.0).abs() < 1e-15 && (theta[1] - 1.0).abs() < 1e-15);
        assert!((e - 2.0).abs() < 1e-15);
    }

    #[test]
    fn random_instances_contain_their_interior_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let (qp, rho) = ConvexQp::random(&mut rng, 4, 6, 3.0);
            let f = qp.constraint_values(&rho);
            assert!(f.iter().all(|&v| (-1.0 - 1e-12..=-0.1 + 1e-12).contains(&v)));
            for row in qp.rows() {
                assert!((dot(row, row) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weak_duality_against_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..30 {
            let d = rng.random_range(1..=5);
            let n = rng.random_range(1..=8);
            let (qp, rho) = ConvexQp::random(&mut rng, d, n, 4.0);
            let (theta, e_star) = oracle_optimum(&qp).unwrap();
            assert!(qp.constraint_values(&theta).iter().all(|&f| f <= 1e-9));
            assert!(e_star <= qp.objective(&rho) + 1e-12);
            for _ in 0..20 {
                let lambda: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
                assert!(dual_function_qp(&qp, &lambda).unwrap() <= e_star + 1e-9);
            }
        }
    }

    #[test]
    fn oracle_matches_kkt_conditions() {
        // At the oracle optimum there exist μ >= 0 on active constraints with
        // 2(θ - c) + A_Sᵀμ = 0; recover μ by least squares on the active set.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let (qp, _) = ConvexQp::random(&mut rng, 3, 5, 4.0);
            let (theta, _) = oracle_optimum(&qp).unwrap();
            let f = qp.constraint_values(&theta);
            let active: Vec<usize> = (0..qp.n_constraints()).filter(|&i| f[i].abs() < 1e-9).collect();
            let k = active.len();
            let mut gram = vec![0.0; k * k];
            let mut rhs = vec![0.0; k];
            let grad_e: Vec<f64> = theta.iter().zip(qp.center()).map(|(x, c)| 2.0 * (x - c)).collect();
            for (r, &i) in active.iter().enumerate() {
                for (s, &j) in active.iter().enumerate() {
                    gram[r * k + s] = dot(&qp.rows()[i], &qp.rows()[j]);
                }
                rhs[r] = -dot(&qp.rows()[i], &grad_e);
            }
            let mu = if k == 0 { vec![] } else { solve_general(&gram, &rhs).unwrap() };
            assert!(mu.iter().all(|&m| m >= -1e-9), "{mu:?}");
            let mut lambda = vec![0.0; qp.n_constraints()];
            for (&i, &m) in active.iter().zip(&mu) {
                lambda[i] = m;
            }
            let res = qp.lagrangian_gradient(&theta, &lambda);
            assert!(res.iter().all(|r| r.abs() < 1e-8), "{res:?}");
        }
    }
}
