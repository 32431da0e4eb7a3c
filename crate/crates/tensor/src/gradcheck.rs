//! Central finite differences, used as an independent check on the tape.

use crate::tensor::Tensor;

/// Numerical gradient of a scalar function of several tensors.
///
/// Each entry is perturbed by `±h` and `(f(x+h) − f(x−h)) / 2h` is recorded.
/// Only the forward evaluation `f` is used, never the backward pass.
pub fn central_difference(
    mut f: impl FnMut(&[Tensor]) -> f64,
    inputs: &[Tensor],
    h: f64,
) -> Vec<Tensor> {
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        let mut grad = Tensor::zeros(inputs[t].shape().to_vec());
        for i in 0..inputs[t].numel() {
            let orig = work[t].data()[i];
            work[t].data_mut()[i] = orig + h;
            let plus = f(&work);
            work[t].data_mut()[i] = orig - h;
            let minus = f(&work);
            work[t].data_mut()[i] = orig;
            grad.data_mut()[i] = (plus - minus) / (2.0 * h);
        }
        out.push(grad);
    }
    out
}

/// Largest entrywise relative error between two gradient sets.
///
/// The denominator is `max(|a|, |n|, floor)`, where `floor` keeps entries
/// whose true gradient is essentially zero from dominating through
/// floating-point cancellation in the difference quotient.
pub fn max_relative_error(analytic: &[Tensor], numeric: &[Tensor], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .flat_map(|(a, n)| a.data().iter().zip(n.data()))
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
