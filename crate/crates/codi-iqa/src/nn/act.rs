//! Elementwise activations and their vector-Jacobian products.

use ndarray::{ArrayBase, Data, DataMut, Dimension};

use super::Scalar;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Smooth GELU (tanh form): `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
pub fn gelu_scalar<F: Scalar>(x: F) -> F {
    let c = F::from_f64(GELU_C);
    let a = F::from_f64(GELU_A);
    let half = F::from_f64(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (F::one() + u.tanh())
}

pub fn gelu_prime<F: Scalar>(x: F) -> F {
    let c = F::from_f64(GELU_C);
    let a = F::from_f64(GELU_A);
    let half = F::from_f64(0.5);
    let three = F::from_f64(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let du = c * (F::one() + three * a * x * x);
    half * (F::one() + t) + half * x * (F::one() - t * t) * du
}

pub fn sigmoid_scalar<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

pub fn gelu<F: Scalar, S: Data<Elem = F>, D: Dimension>(
    x: &ArrayBase<S, D>,
) -> ndarray::Array<F, D> {
    x.mapv(gelu_scalar)
}

/// `dx = dy * gelu'(x)`.
pub fn gelu_vjp<F: Scalar, D: Dimension>(
    x: &ndarray::Array<F, D>,
    dy: &ndarray::Array<F, D>,
) -> ndarray::Array<F, D> {
    let mut dx = dy.clone();
    ndarray::Zip::from(&mut dx).and(x).for_each(|d, &xv| {
        *d = *d * gelu_prime(xv);
    });
    dx
}

pub fn sigmoid<F: Scalar, S: Data<Elem = F>, D: Dimension>(
    x: &ArrayBase<S, D>,
) -> ndarray::Array<F, D> {
    x.mapv(sigmoid_scalar)
}

/// `dx = dy * y (1 - y)` where `y = sigmoid(x)`.
pub fn sigmoid_vjp_from_output<F: Scalar, D: Dimension>(
    y: &ndarray::Array<F, D>,
    dy: &ndarray::Array<F, D>,
) -> ndarray::Array<F, D> {
    let mut dx = dy.clone();
    ndarray::Zip::from(&mut dx).and(y).for_each(|d, &yv| {
        *d = *d * yv * (F::one() - yv);
    });
    dx
}

pub fn relu_inplace<F: Scalar, S: DataMut<Elem = F>, D: Dimension>(x: &mut ArrayBase<S, D>) {
    x.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
}

/// `dx = dy * [y > 0]`, taking the forward output (valid since relu(x) > 0
/// iff x > 0).
pub fn relu_vjp_from_output<F: Scalar, D: Dimension>(
    y: &ndarray::Array<F, D>,
    dy: &ndarray::Array<F, D>,
) -> ndarray::Array<F, D> {
    let mut dx = dy.clone();
    ndarray::Zip::from(&mut dx).and(y).for_each(|d, &yv| {
        if yv <= F::zero() {
            *d = F::zero();
        }
    });
    dx
}
