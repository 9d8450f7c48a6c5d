use serde::{Deserialize, Serialize};

use super::Terms;
use crate::autodiff::{Tape, Var};
use crate::barrier::HandlerKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub data_term: f64,
    /// Weighted sum of handler values.
    pub constraint_term: f64,
    pub f_values: Vec<f64>,
    /// `#{i : f_i > 0}`
    pub violation_count: usize,
}

/// `-Σ_{(p, k) ∈ labels} log s_p^k` for a softmax map `s` of shape `|Ω| x K`.
/// An empty label set gives an exact zero.
pub fn partial_cross_entropy(tape: &mut Tape, s: Var, labels: &[(usize, usize)]) -> Result<Var> {
    if labels.is_empty() {
        return Ok(tape.constant(0.0));
    }
    let (n, k) = tape.value(s)?.dims2().ok_or_else(|| Error::Shape {
        op: "partial_cross_entropy",
        detail: "softmax map must be rank 2".into(),
    })?;
    let mut flat_idx = Vec::with_capacity(labels.len());
    for &(p, c) in labels {
        if p >= n {
            return Err(Error::IndexOutOfRange { what: "pixel", index: p, len: n });
        }
        if c >= k {
            return Err(Error::IndexOutOfRange { what: "label", index: c, len: k });
        }
        flat_idx.push(p * k + c);
    }
    let flat = tape.reshape(s, &[n * k])?;
    let picked = tape.index_select(flat, 0, &flat_idx)?;
    let logs = tape.log(picked)?;
    let total = tape.sum(logs)?;
    tape.scalar_mul(total, -1.0)
}

/// `E + weight * Σ_i h(f_i)` for the given handler at hardness `t`.
pub fn total_loss(tape: &mut Tape, terms: &Terms, handler: HandlerKind, t: f64, weight: f64) -> Result<(Var, LossReport)> {
    if handler == HandlerKind::LagrangianDual {
        return Err(Error::Config("the Lagrangian loop assembles its own objective".into()));
    }
    let f_values = terms.constraints.iter().map(|&f| tape.scalar(f)).collect::<Result<Vec<_>>>()?;
    if handler == HandlerKind::StandardLogBarrier {
        if let Some((index, &value)) = f_values.iter().enumerate().find(|(_, &f)| !(f < 0.0)) {
            return Err(Error::Infeasible { index, value });
        }
    }
    let mut report = LossReport {
        violation_count: f_values.iter().filter(|&&f| f > 0.0).count(),
        f_values,
        ..LossReport::default()
    };
    if let Some(d) = terms.data {
        report.data_term = tape.scalar(d)?;
    }
    let penalty = if terms.constraints.is_empty() {
        None
    } else {
        let f = tape.concat(&terms.constraints)?;
        let h = tape.handler(f, handler, t)?;
        let s = tape.sum(h)?;
        let s = if weight == 1.0 { s } else { tape.scalar_mul(s, weight)? };
        report.constraint_term = tape.scalar(s)?;
        Some(s)
    };
    let loss = match (terms.data, penalty) {
        (Some(d), Some(p)) => tape.add(d, p)?,
        (Some(d), None) => d,
        (None, Some(p)) => p,
        (None, None) => tape.constant(0.0),
    };
    Ok((loss, report))
}

/// `(1/β) log Σ_i exp(β f_i)`, shifted by the max for stability.
pub fn smooth_max(tape: &mut Tape, fs: &[Var], sharpness: f64) -> Result<Var> {
    if fs.is_empty() {
        return Err(Error::InvalidSpec("smooth max of an empty set".into()));
    }
    let v = tape.concat(fs)?;
    let m = tape.value(v)?.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted = tape.add_scalar(v, -m)?;
    let scaled = tape.scalar_mul(shifted, sharpness)?;
    let e = tape.exp(scaled)?;
    let s = tape.sum(e)?;
    let l = tape.log(s)?;
    let l = tape.scalar_mul(l, 1.0 / sharpness)?;
    tape.add_scalar(l, m)
}
