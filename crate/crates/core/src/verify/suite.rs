use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::certify::{certify_epsilon_subopt, certify_prop1, certify_prop2, GapCertificate, Suboptimality};
use super::qp::ConvexQp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub instances: usize,
    pub ts: Vec<f64>,
    pub seed: u64,
    pub max_dim: usize,
    pub max_constraints: usize,
    /// Objective centers are drawn from `[-center_range, center_range]^d`.
    pub center_range: f64,
    pub tol: f64,
    pub standard_barrier: bool,
    pub extension: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            instances: 50,
            ts: vec![5.0, 50.0, 500.0],
            seed: 0,
            max_dim: 5,
            max_constraints: 8,
            center_range: 4.0,
            tol: 1e-6,
            standard_barrier: true,
            extension: true,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SuiteReport {
    pub certificates: Vec<GapCertificate>,
    /// Instances whose minimization failed outright.
    pub errors: Vec<String>,
}

impl SuiteReport {
    pub fn failures(&self) -> usize {
        self.errors.len() + self.certificates.iter().filter(|c| !c.passed()).count()
    }

    /// Appendix case counts summed over extension certificates.
    pub fn case_counts(&self) -> [usize; 3] {
        self.certificates
            .iter()
            .filter(|c| c.kind == super::CertificateKind::Extension)
            .fold([0; 3], |acc, c| [acc[0] + c.cases[0], acc[1] + c.cases[1], acc[2] + c.cases[2]])
    }
}

/// The `index`-th instance of a suite: its own ChaCha stream under `seed`.
pub fn suite_instance(cfg: &SuiteConfig, index: usize) -> (ConvexQp, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let dim = rng.random_range(1..=cfg.max_dim.max(1));
    let n = rng.random_range(1..=cfg.max_constraints.max(1));
    ConvexQp::random(&mut rng, dim, n, cfg.center_range)
}

fn run_instance(cfg: &SuiteConfig, index: usize) -> Vec<Result<GapCertificate, String>> {
    let (qp, interior) = suite_instance(cfg, index);
    let mut out = Vec::new();
    for &t in &cfg.ts {
        if cfg.standard_barrier {
            out.push(certify_prop1(&qp, &interior, t, cfg.tol).map_err(|e| format!("instance {index} t={t}: {e}")));
        }
        if cfg.extension {
            let cert = certify_prop2(&qp, qp.center(), t, cfg.tol).and_then(|mut c| {
                let sub = certify_epsilon_subopt(&c, &qp, cfg.tol)?;
                if let Suboptimality::Fail { excess } = sub {
                    c.failures.push(format!("E - E* = {excess:e} exceeds N/t = {:e}", c.bound));
                }
                c.suboptimality = Some(sub);
                Ok(c)
            });
            out.push(cert.map_err(|e| format!("instance {index} t={t}: {e}")));
        }
    }
    out
}

/// Certify every instance at every `t`. Instances run in parallel; the
/// output order is deterministic.
pub fn run_suite(cfg: &SuiteConfig) -> SuiteReport {
    let results: Vec<_> = (0..cfg.instances)
        .into_par_iter()
        .flat_map_iter(|i| run_instance(cfg, i))
        .collect();
    let mut report = SuiteReport::default();
    for r in results {
        match r {
            Ok(c) => report.certificates.push(c),
            Err(e) => report.errors.push(e),
        }
    }
    report
}
