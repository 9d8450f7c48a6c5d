//! Convex ground-truth oracles and executable duality-gap certification for
//! the standard log-barrier and the log-barrier extension.

mod certify;
mod linalg;
mod qp;
mod suite;

pub use certify::{
    certify_epsilon_subopt, certify_prop1, certify_prop2, minimize_barrier, Barrier, CertificateKind, GapCertificate,
    Suboptimality, GRAD_TOL, IDENTITY_TOL, STATIONARITY_TOL,
};
pub use qp::{dual_function_qp, oracle_optimum, ConvexQp, ORACLE_MAX};
pub use suite::{run_suite, suite_instance, SuiteConfig, SuiteReport};
