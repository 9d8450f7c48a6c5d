use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Compare the tape gradient of a scalar program against central differences.
///
/// Returns `max_j |analytic_j - fd_j| / max(1, |analytic_j|)`.
pub fn grad_check<F>(mut f: F, point: &Tensor, step: f64) -> Result<f64>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone());
    let y = f(&mut tape, x)?;
    let analytic = tape.backward(y)?.wrt(x)?;

    let mut eval = |p: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.leaf(p);
        let y = f(&mut tape, x)?;
        tape.scalar(y)
    };

    let mut worst = 0.0f64;
    for j in 0..point.numel() {
        let mut plus = point.clone();
        plus.data_mut()[j] += step;
        let mut minus = point.clone();
        minus.data_mut()[j] -= step;
        let fd = (eval(plus)? - eval(minus)?) / (2.0 * step);
        let a = analytic.data()[j];
        worst = worst.max((a - fd).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}
