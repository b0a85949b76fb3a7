//! Fully connected layer on `[rows, features]` matrices.

use ndarray::{Array1, Array2};

use super::Scalar;

/// `y = x . w^T + b` with `w: [out, in]`.
pub fn linear<F: Scalar>(x: &Array2<F>, w: &Array2<F>, b: Option<&Array1<F>>) -> Array2<F> {
    let mut y = x.dot(&w.t());
    if let Some(bias) = b {
        for mut row in y.rows_mut() {
            row += bias;
        }
    }
    y
}

/// Returns `(dx, dw, db)`.
pub fn linear_backward<F: Scalar>(
    x: &Array2<F>,
    w: &Array2<F>,
    dy: &Array2<F>,
) -> (Array2<F>, Array2<F>, Array1<F>) {
    let dx = dy.dot(w);
    let dw = dy.t().dot(x);
    let db = dy.sum_axis(ndarray::Axis(0));
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{max_rel_err, numeric_grad};
    use crate::nn::init::{init_tensor, Init};
    use ndarray::{Ix1, Ix2};

    #[test]
    fn linear_gradients_match_numeric() {
        let x = init_tensor::<f64>(&[3, 4], Init::Uniform { lo: -1.0, hi: 1.0 }, 1, "x")
            .into_dimensionality::<Ix2>()
            .unwrap();
        let w = init_tensor::<f64>(&[2, 4], Init::Uniform { lo: -1.0, hi: 1.0 }, 2, "w")
            .into_dimensionality::<Ix2>()
            .unwrap();
        let b = init_tensor::<f64>(&[2], Init::Uniform { lo: -1.0, hi: 1.0 }, 3, "b")
            .into_dimensionality::<Ix1>()
            .unwrap();
        let dy = init_tensor::<f64>(&[3, 2], Init::Uniform { lo: -1.0, hi: 1.0 }, 4, "dy")
            .into_dimensionality::<Ix2>()
            .unwrap();

        let (dx, dw, db) = linear_backward(&x, &w, &dy);
        let num_dx = numeric_grad(
            &x,
            |v| {
                let v2 = v.view().into_dimensionality().unwrap().to_owned();
                (&linear(&v2, &w, Some(&b)) * &dy).sum()
            },
            1e-6,
        );
        assert!(max_rel_err(&dx.into_dyn(), &num_dx) < 1e-8);
        let num_dw = numeric_grad(
            &w,
            |v| {
                let v2 = v.view().into_dimensionality().unwrap().to_owned();
                (&linear(&x, &v2, Some(&b)) * &dy).sum()
            },
            1e-6,
        );
        assert!(max_rel_err(&dw.into_dyn(), &num_dw) < 1e-8);
        let num_db = numeric_grad(
            &b,
            |v| {
                let v1 = v.view().into_dimensionality().unwrap().to_owned();
                (&linear(&x, &w, Some(&v1)) * &dy).sum()
            },
            1e-6,
        );
        assert!(max_rel_err(&db.into_dyn(), &num_db) < 1e-8);
    }
}
