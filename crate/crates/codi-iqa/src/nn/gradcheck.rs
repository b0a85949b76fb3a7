//! Central finite-difference gradient checking.
//!
//! Used by the unit tests of every layer and by the acceptance suite. The
//! numeric side only ever calls the forward pass, so it stays independent of
//! the analytic backward code it is checking.

use ndarray::{ArrayD, Dimension};

use super::{ParamId, ParamStore, Scalar};

/// Central-difference gradient of `f` w.r.t. every element of `x`.
pub fn numeric_grad<D, Func>(x: &ndarray::Array<f64, D>, f: Func, step: f64) -> ArrayD<f64>
where
    D: Dimension,
    Func: Fn(&ArrayD<f64>) -> f64,
{
    let mut work = x.to_owned().into_dyn();
    let mut grad = ArrayD::<f64>::zeros(work.raw_dim());
    let n = work.len();
    for i in 0..n {
        let orig = work.as_slice_mut().unwrap()[i];
        work.as_slice_mut().unwrap()[i] = orig + step;
        let up = f(&work);
        work.as_slice_mut().unwrap()[i] = orig - step;
        let down = f(&work);
        work.as_slice_mut().unwrap()[i] = orig;
        grad.as_slice_mut().unwrap()[i] = (up - down) / (2.0 * step);
    }
    grad
}

/// Central-difference gradient of `loss` w.r.t. one stored parameter,
/// perturbing it in place and restoring it afterwards.
pub fn numeric_grad_param<F, L>(
    store: &mut ParamStore<F>,
    id: ParamId,
    mut loss: L,
    step: f64,
) -> ArrayD<f64>
where
    F: Scalar,
    L: FnMut(&ParamStore<F>) -> f64,
{
    let n = store.data(id).len();
    let mut grad = ArrayD::<f64>::zeros(store.data(id).raw_dim());
    for i in 0..n {
        let orig = store.data(id).as_slice().unwrap()[i];
        store.data_mut(id).as_slice_mut().unwrap()[i] = orig + F::from_f64(step);
        let up = loss(store);
        store.data_mut(id).as_slice_mut().unwrap()[i] = orig - F::from_f64(step);
        let down = loss(store);
        store.data_mut(id).as_slice_mut().unwrap()[i] = orig;
        grad.as_slice_mut().unwrap()[i] = (up - down) / (2.0 * step);
    }
    grad
}

/// Max over elements of `|a - n| / max(|a|, |n|, 1e-3)`. The floor keeps
/// near-zero gradients from blowing up the ratio; below it the absolute
/// error is what matters.
pub fn max_rel_err(analytic: &ArrayD<f64>, numeric: &ArrayD<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-3))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    #[test]
    fn numeric_grad_of_quadratic() {
        let x = arr1(&[1.0, -2.0, 0.5]);
        let g = numeric_grad(&x, |v| v.iter().map(|a| a * a).sum::<f64>(), 1e-5);
        let want = arr1(&[2.0, -4.0, 1.0]).into_dyn();
        assert!(max_rel_err(&want, &g) < 1e-9);
    }
}
