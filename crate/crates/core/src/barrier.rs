//! Scalar constraint handlers: the standard log-barrier, the log-barrier
//! extension, the quadratic and `t`-parameterized ReLU penalties, and the
//! implicit dual map induced by the extension.
//!
//! Every handler acts on a canonical constraint value `z = f_i(..)`, where the
//! constraint is satisfied iff `z <= 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard log-barrier `-(1/t) log(-z)`, defined only for `z < 0`.
pub fn psi_std(z: f64, t: f64) -> Result<f64> {
    if z < 0.0 {
        Ok(-(-z).ln() / t)
    } else {
        Err(Error::Domain {
            op: "psi_std",
            value: z,
        })
    }
}

pub fn psi_std_grad(z: f64, t: f64) -> Result<f64> {
    if z < 0.0 {
        Ok(-1.0 / (t * z))
    } else {
        Err(Error::Domain {
            op: "psi_std_grad",
            value: z,
        })
    }
}

/// Log-barrier extension: the standard barrier on `z <= -1/t²`, continued
/// linearly with slope `t` beyond it. Finite everywhere.
///
/// The junction point belongs to the log branch.
pub fn psi_ext(z: f64, t: f64) -> f64 {
    let junction = -1.0 / (t * t);
    if z <= junction {
        -(-z).ln() / t
    } else {
        t * z - (1.0 / (t * t)).ln() / t + 1.0 / t
    }
}

/// Derivative of [`psi_ext`]: `-1/(t z)` on the log branch, `t` beyond it.
pub fn psi_ext_grad(z: f64, t: f64) -> f64 {
    if z <= -1.0 / (t * t) {
        -1.0 / (t * z)
    } else {
        t
    }
}

/// Implicit Lagrange multiplier associated with a constraint value `z` at
/// barrier hardness `t`.
pub fn implicit_dual(z: f64, t: f64) -> f64 {
    let junction = -1.0 / (t * t);
    match z <= junction {
        true => -1.0 / (t * z),
        false => t,
    }
}

/// `max(0, z)²`
pub fn quadratic_penalty(z: f64) -> f64 {
    let p = z.max(0.0);
    p * p
}

pub fn quadratic_penalty_grad(z: f64) -> f64 {
    2.0 * z.max(0.0)
}

/// `max(0, t z)`
pub fn relu_penalty(z: f64, t: f64) -> f64 {
    (t * z).max(0.0)
}

/// Subgradient of [`relu_penalty`]; zero at the kink.
pub fn relu_penalty_grad(z: f64, t: f64) -> f64 {
    if z > 0.0 {
        t
    } else {
        0.0
    }
}

/// Annealing state for the barrier hardness `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierSchedule {
    t0: f64,
    mu: f64,
    t: f64,
    steps: u64,
}

impl BarrierSchedule {
    pub fn new(t0: f64, mu: f64) -> Result<Self> {
        if !(t0 > 0.0 && t0.is_finite()) {
            return Err(Error::Config(format!("t0 must be positive, got {t0}")));
        }
        if !(mu > 1.0 && mu.is_finite()) {
            return Err(Error::Config(format!("mu must exceed 1, got {mu}")));
        }
        Ok(Self {
            t0,
            mu,
            t: t0,
            steps: 0,
        })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// `t := mu * t`
    #[must_use]
    pub fn step(self) -> Self {
        Self {
            t: self.t * self.mu,
            steps: self.steps + 1,
            ..self
        }
    }
}

/// The constraint-handling strategies under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandlerKind {
    QuadraticPenalty,
    ReluPenalty,
    StandardLogBarrier,
    LogBarrierExtension,
    LagrangianDual,
}

impl HandlerKind {
    pub const ALL: [HandlerKind; 5] = [
        HandlerKind::QuadraticPenalty,
        HandlerKind::ReluPenalty,
        HandlerKind::StandardLogBarrier,
        HandlerKind::LogBarrierExtension,
        HandlerKind::LagrangianDual,
    ];

    /// Whether the handler is driven by a [`BarrierSchedule`].
    pub fn uses_schedule(self) -> bool {
        matches!(
            self,
            HandlerKind::ReluPenalty
                | HandlerKind::StandardLogBarrier
                | HandlerKind::LogBarrierExtension
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            HandlerKind::QuadraticPenalty => "quadratic_penalty",
            HandlerKind::ReluPenalty => "relu_penalty",
            HandlerKind::StandardLogBarrier => "standard_log_barrier",
            HandlerKind::LogBarrierExtension => "log_barrier_extension",
            HandlerKind::LagrangianDual => "lagrangian_dual",
        }
    }

    /// Scalar penalty value at `z`. `LagrangianDual` has no scalar handler
    /// and evaluates to `z` (its multiplier is applied by the caller).
    pub fn value(self, z: f64, t: f64) -> Result<f64> {
        Ok(match self {
            HandlerKind::QuadraticPenalty => quadratic_penalty(z),
            HandlerKind::ReluPenalty => relu_penalty(z, t),
            HandlerKind::StandardLogBarrier => psi_std(z, t)?,
            HandlerKind::LogBarrierExtension => psi_ext(z, t),
            HandlerKind::LagrangianDual => z,
        })
    }

    pub fn grad(self, z: f64, t: f64) -> Result<f64> {
        Ok(match self {
            HandlerKind::QuadraticPenalty => quadratic_penalty_grad(z),
            HandlerKind::ReluPenalty => relu_penalty_grad(z, t),
            HandlerKind::StandardLogBarrier => psi_std_grad(z, t)?,
            HandlerKind::LogBarrierExtension => psi_ext_grad(z, t),
            HandlerKind::LagrangianDual => 1.0,
        })
    }
}

impl std::fmt::Display for HandlerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for HandlerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HandlerKind::ALL
            .into_iter()
            .find(|h| h.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}
