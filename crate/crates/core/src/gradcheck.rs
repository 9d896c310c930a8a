//! Central-difference validation of tape gradients.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Largest `|analytic - numeric| / max(1, |numeric|)` over every parameter
/// entry. `build` records a scalar loss on a fresh tape given one leaf per
/// entry of `params`, and is evaluated `2 * entries + 1` times.
pub fn grad_check<F>(build: F, params: &[Matrix], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Matrix]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Numeric(format!("loss evaluated to {value}")));
        }
        Ok(value)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    if !tape.value(loss).item().is_finite() {
        return Err(Error::Numeric("non-finite loss".into()));
    }
    let grads = tape.backward(loss)?;

    let mut worst = 0.0f64;
    let mut probe = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        for k in 0..params[pi].len() {
            let original = params[pi].as_slice()[k];
            probe[pi].as_mut_slice()[k] = original + eps;
            let up = eval(&probe)?;
            probe[pi].as_mut_slice()[k] = original - eps;
            let down = eval(&probe)?;
            probe[pi].as_mut_slice()[k] = original;
            let numeric = (up - down) / (2.0 * eps);
            let err = (analytic.as_slice()[k] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
