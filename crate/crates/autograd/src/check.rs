//! Central finite-difference gradient checking.

use crate::{ParamSet, Tensor};

/// Central-difference gradient of `f` with respect to every scalar in `params`.
pub fn finite_difference(
    params: &ParamSet,
    step: f64,
    mut f: impl FnMut(&ParamSet) -> f64,
) -> Vec<Tensor> {
    let mut work = params.clone();
    let mut out = Vec::with_capacity(params.len());
    for id in params.ids() {
        let n = params.get(id).numel();
        let mut grad = Tensor::zeros(params.get(id).shape());
        for i in 0..n {
            let orig = params.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + step;
            let plus = f(&work);
            work.get_mut(id).data_mut()[i] = orig - step;
            let minus = f(&work);
            work.get_mut(id).data_mut()[i] = orig;
            grad.data_mut()[i] = (plus - minus) / (2.0 * step);
        }
        out.push(grad);
    }
    out
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, or the absolute difference norm when both are tiny.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let diff: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na = a.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom < 1e-12 {
        diff
    } else {
        diff / denom
    }
}

/// Largest relative error across parameter groups, with the offending group name.
pub fn worst_relative_error(
    params: &ParamSet,
    analytic: &[Tensor],
    numeric: &[Tensor],
) -> (f64, String) {
    params
        .ids()
        .zip(analytic.iter().zip(numeric))
        .map(|(id, (a, n))| (relative_error(a, n), params.name(id).to_string()))
        .fold((0.0, String::new()), |acc, x| if x.0 > acc.0 { x } else { acc })
}
