//! Batch normalization (2-D, per channel) and layer normalization
//! (per token) as pure functions; running-statistic updates are returned to
//! the caller instead of applied in place, so forward passes never mutate
//! parameters.

use ndarray::{Array1, Array2, Array4, ArrayView4, Axis};

use super::Scalar;

pub struct BnCache<F: Scalar> {
    pub x_hat: Array4<F>,
    pub inv_std: Array1<F>,
    /// Present when batch statistics were used (training mode).
    pub batch_stats: Option<BnStats<F>>,
}

#[derive(Clone)]
pub struct BnStats<F: Scalar> {
    pub mean: Array1<F>,
    pub var_unbiased: Array1<F>,
}

/// Normalize with batch statistics. Returns `(y, cache)`; the cache carries
/// the stats for the caller to fold into the running buffers.
pub fn bn_forward_train<F: Scalar>(
    x: &ArrayView4<'_, F>,
    gamma: &Array1<F>,
    beta: &Array1<F>,
    eps: f64,
) -> (Array4<F>, BnCache<F>) {
    let (bs, c, h, w) = x.dim();
    let n = (bs * h * w) as f64;
    let mut mean = Array1::<F>::zeros(c);
    let mut var = Array1::<F>::zeros(c);
    for ci in 0..c {
        let ch = x.index_axis(Axis(1), ci);
        let sum: F = ch.iter().copied().sum();
        let mu = sum / F::from_f64(n);
        let sq: F = ch.iter().map(|&v| (v - mu) * (v - mu)).sum();
        mean[ci] = mu;
        var[ci] = sq / F::from_f64(n);
    }
    let inv_std = var.mapv(|v| F::one() / (v + F::from_f64(eps)).sqrt());
    let mut x_hat = x.to_owned();
    for ci in 0..c {
        let mu = mean[ci];
        let is = inv_std[ci];
        x_hat
            .index_axis_mut(Axis(1), ci)
            .mapv_inplace(|v| (v - mu) * is);
    }
    let y = affine(&x_hat, gamma, beta);
    let var_unbiased = if n > 1.0 {
        var.mapv(|v| v * F::from_f64(n / (n - 1.0)))
    } else {
        var.clone()
    };
    (
        y,
        BnCache {
            x_hat,
            inv_std,
            batch_stats: Some(BnStats { mean, var_unbiased }),
        },
    )
}

/// Normalize with running statistics (evaluation / frozen mode).
pub fn bn_forward_eval<F: Scalar>(
    x: &ArrayView4<'_, F>,
    gamma: &Array1<F>,
    beta: &Array1<F>,
    r_mean: &Array1<F>,
    r_var: &Array1<F>,
    eps: f64,
) -> (Array4<F>, BnCache<F>) {
    let c = x.dim().1;
    let inv_std = r_var.mapv(|v| F::one() / (v + F::from_f64(eps)).sqrt());
    let mut x_hat = x.to_owned();
    for ci in 0..c {
        let mu = r_mean[ci];
        let is = inv_std[ci];
        x_hat
            .index_axis_mut(Axis(1), ci)
            .mapv_inplace(|v| (v - mu) * is);
    }
    let y = affine(&x_hat, gamma, beta);
    (
        y,
        BnCache {
            x_hat,
            inv_std,
            batch_stats: None,
        },
    )
}

fn affine<F: Scalar>(x_hat: &Array4<F>, gamma: &Array1<F>, beta: &Array1<F>) -> Array4<F> {
    let mut y = x_hat.clone();
    for ci in 0..gamma.len() {
        let g = gamma[ci];
        let b = beta[ci];
        y.index_axis_mut(Axis(1), ci).mapv_inplace(|v| v * g + b);
    }
    y
}

/// Backward pass. Uses the full batch-statistics Jacobian when the cache was
/// produced in training mode, the constant-statistics one otherwise.
/// Returns `(dx, dgamma, dbeta)`.
pub fn bn_backward<F: Scalar>(
    cache: &BnCache<F>,
    gamma: &Array1<F>,
    dy: &ArrayView4<'_, F>,
) -> (Array4<F>, Array1<F>, Array1<F>) {
    let (bs, c, h, w) = dy.dim();
    let n = F::from_f64((bs * h * w) as f64);
    let mut dgamma = Array1::<F>::zeros(c);
    let mut dbeta = Array1::<F>::zeros(c);
    for ci in 0..c {
        let dyc = dy.index_axis(Axis(1), ci);
        let xh = cache.x_hat.index_axis(Axis(1), ci);
        dgamma[ci] = dyc.iter().zip(xh.iter()).map(|(&d, &x)| d * x).sum();
        dbeta[ci] = dyc.iter().copied().sum();
    }
    let mut dx = dy.to_owned();
    if cache.batch_stats.is_some() {
        // dx = gamma*inv_std/n * (n*dy - sum(dy) - x_hat * sum(dy*x_hat))
        for ci in 0..c {
            let scale = gamma[ci] * cache.inv_std[ci] / n;
            let sg = dgamma[ci];
            let sb = dbeta[ci];
            let xh = cache.x_hat.index_axis(Axis(1), ci);
            let mut dxc = dx.index_axis_mut(Axis(1), ci);
            ndarray::Zip::from(&mut dxc).and(&xh).for_each(|d, &x| {
                *d = scale * (n * *d - sb - x * sg);
            });
        }
    } else {
        for ci in 0..c {
            let scale = gamma[ci] * cache.inv_std[ci];
            dx.index_axis_mut(Axis(1), ci).mapv_inplace(|v| v * scale);
        }
    }
    (dx, dgamma, dbeta)
}

pub struct LnCache<F: Scalar> {
    pub x_hat: Array2<F>,
    pub inv_std: Array1<F>,
}

/// Layer norm over the last axis of `[tokens, dim]`.
pub fn ln_forward<F: Scalar>(
    x: &Array2<F>,
    gamma: &Array1<F>,
    beta: &Array1<F>,
    eps: f64,
) -> (Array2<F>, LnCache<F>) {
    let (n, d) = x.dim();
    let df = F::from_f64(d as f64);
    let mut x_hat = x.clone();
    let mut inv_std = Array1::<F>::zeros(n);
    for i in 0..n {
        let row = x.row(i);
        let mu: F = row.iter().copied().sum::<F>() / df;
        let var: F = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<F>() / df;
        let is = F::one() / (var + F::from_f64(eps)).sqrt();
        inv_std[i] = is;
        x_hat.row_mut(i).mapv_inplace(|v| (v - mu) * is);
    }
    let mut y = x_hat.clone();
    for i in 0..n {
        let mut row = y.row_mut(i);
        ndarray::Zip::from(&mut row)
            .and(gamma)
            .and(beta)
            .for_each(|v, &g, &b| *v = *v * g + b);
    }
    (y, LnCache { x_hat, inv_std })
}

pub fn ln_backward<F: Scalar>(
    cache: &LnCache<F>,
    gamma: &Array1<F>,
    dy: &Array2<F>,
) -> (Array2<F>, Array1<F>, Array1<F>) {
    let (n, d) = dy.dim();
    let df = F::from_f64(d as f64);
    let mut dgamma = Array1::<F>::zeros(d);
    let mut dbeta = Array1::<F>::zeros(d);
    for i in 0..n {
        let dyr = dy.row(i);
        let xhr = cache.x_hat.row(i);
        for j in 0..d {
            dgamma[j] += dyr[j] * xhr[j];
            dbeta[j] += dyr[j];
        }
    }
    let mut dx = Array2::<F>::zeros((n, d));
    for i in 0..n {
        let dyr = dy.row(i);
        let xhr = cache.x_hat.row(i);
        // dx_hat = dy * gamma
        let mut sum_dxh = F::zero();
        let mut sum_dxh_xh = F::zero();
        for j in 0..d {
            let dxh = dyr[j] * gamma[j];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xhr[j];
        }
        let is = cache.inv_std[i];
        for j in 0..d {
            let dxh = dyr[j] * gamma[j];
            dx[(i, j)] = is / df * (df * dxh - sum_dxh - xhr[j] * sum_dxh_xh);
        }
    }
    (dx, dgamma, dbeta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{max_rel_err, numeric_grad};
    use crate::nn::init::{init_tensor, Init};
    use ndarray::{ArrayD, Ix1, Ix2, Ix4};

    fn randn(shape: &[usize], seed: u64, tag: &str) -> ArrayD<f64> {
        init_tensor(shape, Init::Uniform { lo: -1.0, hi: 1.0 }, seed, tag)
    }

    #[test]
    fn bn_train_normalizes_batch() {
        let x = randn(&[2, 3, 4, 4], 1, "x").into_dimensionality::<Ix4>().unwrap();
        let gamma = Array1::<f64>::ones(3);
        let beta = Array1::<f64>::zeros(3);
        let (y, cache) = bn_forward_train(&x.view(), &gamma, &beta, 1e-5);
        for ci in 0..3 {
            let ch = y.index_axis(Axis(1), ci);
            let mu: f64 = ch.iter().sum::<f64>() / ch.len() as f64;
            let var: f64 = ch.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / ch.len() as f64;
            assert!(mu.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-3);
        }
        assert!(cache.batch_stats.is_some());
    }

    #[test]
    fn bn_gradients_match_numeric() {
        let x = randn(&[2, 2, 3, 3], 2, "x").into_dimensionality::<Ix4>().unwrap();
        let gamma = randn(&[2], 3, "g").into_dimensionality::<Ix1>().unwrap();
        let beta = randn(&[2], 4, "b").into_dimensionality::<Ix1>().unwrap();
        let dy = randn(&[2, 2, 3, 3], 5, "dy").into_dimensionality::<Ix4>().unwrap();

        let (_, cache) = bn_forward_train(&x.view(), &gamma, &beta, 1e-5);
        let (dx, dgamma, dbeta) = bn_backward(&cache, &gamma, &dy.view());

        let num_dx = numeric_grad(
            &x,
            |v| {
                let v4 = v.view().into_dimensionality().unwrap();
                (&bn_forward_train(&v4, &gamma, &beta, 1e-5).0 * &dy).sum()
            },
            1e-6,
        );
        assert!(max_rel_err(&dx.into_dyn(), &num_dx) < 1e-6);

        let num_dg = numeric_grad(
            &gamma,
            |g| {
                let g1 = g.view().into_dimensionality().unwrap().to_owned();
                (&bn_forward_train(&x.view(), &g1, &beta, 1e-5).0 * &dy).sum()
            },
            1e-6,
        );
        assert!(max_rel_err(&dgamma.into_dyn(), &num_dg) < 1e-6);
        let num_db = numeric_grad(
            &beta,
            |b| {
                let b1 = b.view().into_dimensionality().unwrap().to_owned();
                (&bn_forward_train(&x.view(), &gamma, &b1, 1e-5).0 * &dy).sum()
            },
            1e-6,
        );
        assert!(max_rel_err(&dbeta.into_dyn(), &num_db) < 1e-7);
    }

    #[test]
    fn ln_gradients_match_numeric() {
        let x = randn(&[5, 4], 6, "x").into_dimensionality::<Ix2>().unwrap();
        let gamma = randn(&[4], 7, "g").into_dimensionality::<Ix1>().unwrap();
        let beta = randn(&[4], 8, "b").into_dimensionality::<Ix1>().unwrap();
        let dy = randn(&[5, 4], 9, "dy").into_dimensionality::<Ix2>().unwrap();

        let (_, cache) = ln_forward(&x, &gamma, &beta, 1e-6);
        let (dx, dgamma, dbeta) = ln_backward(&cache, &gamma, &dy);

        let num_dx = numeric_grad(
            &x,
            |v| {
                let v2 = v.view().into_dimensionality().unwrap().to_owned();
                (&ln_forward(&v2, &gamma, &beta, 1e-6).0 * &dy).sum()
            },
            1e-6,
        );
        assert!(max_rel_err(&dx.into_dyn(), &num_dx) < 1e-6);
        let num_dg = numeric_grad(
            &gamma,
            |g| {
                let g1 = g.view().into_dimensionality().unwrap().to_owned();
                (&ln_forward(&x, &g1, &beta, 1e-6).0 * &dy).sum()
            },
            1e-6,
        );
        assert!(max_rel_err(&dgamma.into_dyn(), &num_dg) < 1e-6);
        let num_db = numeric_grad(
            &beta,
            |b| {
                let b1 = b.view().into_dimensionality().unwrap().to_owned();
                (&ln_forward(&x, &gamma, &b1, 1e-6).0 * &dy).sum()
            },
            1e-6,
        );
        assert!(max_rel_err(&dbeta.into_dyn(), &num_db) < 1e-7);
    }
}
