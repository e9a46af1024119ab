//! Central finite-difference checks for tape gradients.

use super::{NumericError, Tape, Tensor, Var};

/// Step used for central differences.
pub const STEP: f64 = 1e-5;

/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-4)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

/// Perturbs every element of every input and compares the central-difference
/// slope of the scalar `build` output with the tape's gradient. Returns the
/// worst [`relative_error`].
pub fn max_relative_error<F>(inputs: &[Tensor<f64>], build: F) -> Result<f64, NumericError>
where
    F: Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var, NumericError>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64, NumericError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        Ok(tape.value(out)[0])
    };
    let params: Vec<Tensor<f64>> = inputs.iter().map(|t| t.clone().with_requires_grad(true)).collect();
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|t| tape.bind(t)).collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut worst = 0.0f64;
    let mut shifted = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[k]).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; input.len()]);
        for (i, (&x, &a)) in input.values().iter().zip(&analytic).enumerate() {
            shifted[k].values_mut()[i] = x + STEP;
            let plus = eval(&shifted)?;
            shifted[k].values_mut()[i] = x - STEP;
            let minus = eval(&shifted)?;
            shifted[k].values_mut()[i] = x;
            worst = worst.max(relative_error(a, (plus - minus) / (2.0 * STEP)));
        }
    }
    Ok(worst)
}
