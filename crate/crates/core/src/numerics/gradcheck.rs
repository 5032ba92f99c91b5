//! Central-difference verification of analytic gradients.

use alloc::vec::Vec;

use super::fmath;
use super::tape::{Tape, Tensor, TensorRef};
use super::NumericsError;

/// Checks the tape's reverse-mode gradient of a scalar-valued function
/// against central finite differences.
///
/// Returns the maximum over all input coordinates of
/// `|analytic - (f(x+h) - f(x-h)) / 2h| / max(1, |analytic|)`.
///
/// Dropout inside `f` is forced to eval mode on every tape this function
/// builds, so the three evaluations of `f` see identical deterministic
/// graphs. Inputs with `requires_grad = false` are entered as constants and
/// skipped.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64, NumericsError>
where
    F: Fn(&mut Tape, &[TensorRef]) -> Result<TensorRef, NumericsError>,
{
    let analytic = analytic_grads(&f, inputs)?;

    let mut max_rel = 0.0_f64;
    for (i, input) in inputs.iter().enumerate() {
        if !input.requires_grad {
            continue;
        }
        for c in 0..input.values.len() {
            let plus = eval_perturbed(&f, inputs, i, c, h)?;
            let minus = eval_perturbed(&f, inputs, i, c, -h)?;
            let fd = (plus - minus) / (2.0 * h);
            let g = analytic[i][c];
            if !fd.is_finite() || !g.is_finite() {
                return Err(NumericsError::NonFinite {
                    context: "grad_check",
                    index: c,
                });
            }
            let rel = fmath::abs(g - fd) / f64::max(1.0, fmath::abs(g));
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

fn analytic_grads<F>(f: &F, inputs: &[Tensor]) -> Result<Vec<Vec<f64>>, NumericsError>
where
    F: Fn(&mut Tape, &[TensorRef]) -> Result<TensorRef, NumericsError>,
{
    let mut tape = Tape::new();
    tape.set_force_eval_dropout(true);
    let refs: Vec<TensorRef> = inputs
        .iter()
        .map(|t| tape.leaf_from(t))
        .collect::<Result<_, _>>()?;
    let out = f(&mut tape, &refs)?;
    if tape.shape(out) != (1, 1) {
        let (m, n) = tape.shape(out);
        return Err(NumericsError::InvalidInput {
            op: "grad_check",
            msg: alloc::format!("function output must be scalar, got {m}x{n}"),
        });
    }
    if let Some(pos) = tape.value(out).iter().position(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite { context: "grad_check forward", index: pos });
    }
    tape.backward(out)?;
    Ok(refs
        .iter()
        .zip(inputs.iter())
        .map(|(&r, t)| match tape.grad(r) {
            Some(g) => g.to_vec(),
            None => alloc::vec![0.0; t.values.len()],
        })
        .collect())
}

fn eval_perturbed<F>(
    f: &F,
    inputs: &[Tensor],
    target: usize,
    coord: usize,
    delta: f64,
) -> Result<f64, NumericsError>
where
    F: Fn(&mut Tape, &[TensorRef]) -> Result<TensorRef, NumericsError>,
{
    let mut tape = Tape::new();
    tape.set_force_eval_dropout(true);
    let refs: Vec<TensorRef> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut vals = t.values.clone();
            if i == target {
                vals[coord] += delta;
            }
            tape.leaf(t.rows, t.cols, vals, t.requires_grad)
        })
        .collect::<Result<_, _>>()?;
    let out = f(&mut tape, &refs)?;
    let v = tape.value(out)[0];
    if !v.is_finite() {
        return Err(NumericsError::NonFinite { context: "grad_check perturbation", index: coord });
    }
    Ok(v)
}
