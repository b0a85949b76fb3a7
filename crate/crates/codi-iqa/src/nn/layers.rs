//! Parameterized layers: thin structs holding [`ParamId`]s plus
//! hyperparameters. `forward` is allocation-only (inference); `forward_t`
//! additionally returns the cache needed by `backward`. Backward methods
//! accumulate parameter gradients into the store and return the input
//! gradient.

use ndarray::{Array1, Array2, Array4, ArrayD};

use super::conv::{conv2d, conv2d_db, conv2d_dw, conv2d_dx, ConvCfg};
use super::init::{init_tensor, Init};
use super::linear::{linear, linear_backward};
use super::norm::{bn_backward, bn_forward_eval, bn_forward_train, BnCache};
use super::{ParamId, ParamStore, Scalar, VarKind};

fn as1<F: Scalar>(a: &ArrayD<F>) -> Array1<F> {
    a.view().into_dimensionality().expect("1-d param").to_owned()
}

/// Batch-norm execution mode. `Train` uses batch statistics and emits
/// running-stat updates; `Eval` uses the stored running statistics (also the
/// behavior of a frozen layer).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

pub struct Conv2d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub cfg: ConvCfg,
    pub kernel: usize,
    pub c_in: usize,
    pub c_out: usize,
}

pub struct Conv2dCache<F: Scalar> {
    x: Array4<F>,
}

impl Conv2d {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        seed: u64,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        cfg: ConvCfg,
        bias: bool,
    ) -> Self {
        let fan_in = (c_in / cfg.groups) * kernel * kernel;
        let w_name = format!("{name}.weight");
        let w = store.add(
            w_name.clone(),
            VarKind::Weight,
            init_tensor(
                &[c_out, c_in / cfg.groups, kernel, kernel],
                Init::KaimingUniform { fan_in },
                seed,
                &w_name,
            ),
        );
        let b = bias.then(|| {
            let b_name = format!("{name}.bias");
            store.add(b_name, VarKind::Bias, init_tensor(&[c_out], Init::Zeros, seed, ""))
        });
        Conv2d { w, b, cfg, kernel, c_in, c_out }
    }

    fn weight<'s, F: Scalar>(&self, store: &'s ParamStore<F>) -> ndarray::ArrayView4<'s, F> {
        store.data(self.w).view().into_dimensionality().expect("conv weight 4-d")
    }

    pub fn forward<F: Scalar>(&self, store: &ParamStore<F>, x: &Array4<F>) -> Array4<F> {
        let bias = self.b.map(|id| as1(store.data(id)));
        conv2d(&x.view(), &self.weight(store), bias.as_ref(), self.cfg)
    }

    pub fn forward_t<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        x: &Array4<F>,
    ) -> (Array4<F>, Conv2dCache<F>) {
        let y = self.forward(store, x);
        (y, Conv2dCache { x: x.clone() })
    }

    pub fn backward<F: Scalar>(
        &self,
        store: &mut ParamStore<F>,
        cache: &Conv2dCache<F>,
        dy: &Array4<F>,
    ) -> Array4<F> {
        let dw = conv2d_dw(&cache.x.view(), &dy.view(), (self.kernel, self.kernel), self.cfg);
        store.grad_add(self.w, dw.view().into_dyn());
        if let Some(bid) = self.b {
            let db = conv2d_db(&dy.view());
            store.grad_add(bid, db.view().into_dyn());
        }
        let (h, w) = (cache.x.dim().2, cache.x.dim().3);
        conv2d_dx(&self.weight(store), &dy.view(), (h, w), self.cfg)
    }
}

pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub r_mean: ParamId,
    pub r_var: ParamId,
    pub eps: f64,
    pub momentum: f64,
}

pub struct BatchNorm2dCache<F: Scalar> {
    inner: BnCache<F>,
}

impl BatchNorm2d {
    pub fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, channels: usize) -> Self {
        let gamma = store.add(
            format!("{name}.scale"),
            VarKind::NormScale,
            init_tensor(&[channels], Init::Ones, 0, ""),
        );
        let beta = store.add(
            format!("{name}.shift"),
            VarKind::NormShift,
            init_tensor(&[channels], Init::Zeros, 0, ""),
        );
        let r_mean = store.add(
            format!("{name}.running_mean"),
            VarKind::NormMean,
            init_tensor(&[channels], Init::Zeros, 0, ""),
        );
        let r_var = store.add(
            format!("{name}.running_var"),
            VarKind::NormVar,
            init_tensor(&[channels], Init::Ones, 0, ""),
        );
        BatchNorm2d { gamma, beta, r_mean, r_var, eps: 1e-5, momentum: 0.1 }
    }

    pub fn forward<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        x: &Array4<F>,
        mode: BnMode,
    ) -> Array4<F> {
        self.forward_t(store, x, mode).0
    }

    pub fn forward_t<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        x: &Array4<F>,
        mode: BnMode,
    ) -> (Array4<F>, BatchNorm2dCache<F>) {
        let gamma = as1(store.data(self.gamma));
        let beta = as1(store.data(self.beta));
        let (y, inner) = match mode {
            BnMode::Train => bn_forward_train(&x.view(), &gamma, &beta, self.eps),
            BnMode::Eval => bn_forward_eval(
                &x.view(),
                &gamma,
                &beta,
                &as1(store.data(self.r_mean)),
                &as1(store.data(self.r_var)),
                self.eps,
            ),
        };
        (y, BatchNorm2dCache { inner })
    }

    pub fn backward<F: Scalar>(
        &self,
        store: &mut ParamStore<F>,
        cache: &BatchNorm2dCache<F>,
        dy: &Array4<F>,
    ) -> Array4<F> {
        let gamma = as1(store.data(self.gamma));
        let (dx, dgamma, dbeta) = bn_backward(&cache.inner, &gamma, &dy.view());
        store.grad_add(self.gamma, dgamma.view().into_dyn());
        store.grad_add(self.beta, dbeta.view().into_dyn());
        dx
    }

    /// Fold the batch statistics captured in `cache` into the running
    /// buffers. No-op for eval-mode caches.
    pub fn commit_stats<F: Scalar>(&self, store: &mut ParamStore<F>, cache: &BatchNorm2dCache<F>) {
        if let Some(stats) = &cache.inner.batch_stats {
            let m = F::from_f64(self.momentum);
            let one_m = F::one() - m;
            {
                let rm = store.data_mut(self.r_mean);
                for (slot, &b) in rm.iter_mut().zip(stats.mean.iter()) {
                    *slot = one_m * *slot + m * b;
                }
            }
            let rv = store.data_mut(self.r_var);
            for (slot, &b) in rv.iter_mut().zip(stats.var_unbiased.iter()) {
                *slot = one_m * *slot + m * b;
            }
        }
    }
}

pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub c_in: usize,
    pub c_out: usize,
}

pub struct LinearCache<F: Scalar> {
    x: Array2<F>,
}

impl Linear {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        seed: u64,
        name: &str,
        c_in: usize,
        c_out: usize,
        bias: bool,
    ) -> Self {
        let w_name = format!("{name}.weight");
        let w = store.add(
            w_name.clone(),
            VarKind::Weight,
            init_tensor(&[c_out, c_in], Init::KaimingUniform { fan_in: c_in }, seed, &w_name),
        );
        let b = bias.then(|| {
            store.add(
                format!("{name}.bias"),
                VarKind::Bias,
                init_tensor(&[c_out], Init::Zeros, seed, ""),
            )
        });
        Linear { w, b, c_in, c_out }
    }

    fn weight<F: Scalar>(&self, store: &ParamStore<F>) -> Array2<F> {
        store
            .data(self.w)
            .view()
            .into_dimensionality()
            .expect("linear weight 2-d")
            .to_owned()
    }

    pub fn forward<F: Scalar>(&self, store: &ParamStore<F>, x: &Array2<F>) -> Array2<F> {
        let bias = self.b.map(|id| as1(store.data(id)));
        linear(x, &self.weight(store), bias.as_ref())
    }

    pub fn forward_t<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        x: &Array2<F>,
    ) -> (Array2<F>, LinearCache<F>) {
        (self.forward(store, x), LinearCache { x: x.clone() })
    }

    pub fn backward<F: Scalar>(
        &self,
        store: &mut ParamStore<F>,
        cache: &LinearCache<F>,
        dy: &Array2<F>,
    ) -> Array2<F> {
        let w = self.weight(store);
        let (dx, dw, db) = linear_backward(&cache.x, &w, dy);
        store.grad_add(self.w, dw.view().into_dyn());
        if let Some(bid) = self.b {
            store.grad_add(bid, db.view().into_dyn());
        }
        dx
    }
}

pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

pub struct LayerNormCache<F: Scalar> {
    inner: super::norm::LnCache<F>,
}

impl LayerNorm {
    pub fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, dim: usize) -> Self {
        let gamma = store.add(
            format!("{name}.scale"),
            VarKind::NormScale,
            init_tensor(&[dim], Init::Ones, 0, ""),
        );
        let beta = store.add(
            format!("{name}.shift"),
            VarKind::NormShift,
            init_tensor(&[dim], Init::Zeros, 0, ""),
        );
        LayerNorm { gamma, beta, eps: 1e-6 }
    }

    pub fn forward_t<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        x: &Array2<F>,
    ) -> (Array2<F>, LayerNormCache<F>) {
        let (y, inner) = super::norm::ln_forward(
            x,
            &as1(store.data(self.gamma)),
            &as1(store.data(self.beta)),
            self.eps,
        );
        (y, LayerNormCache { inner })
    }

    pub fn forward<F: Scalar>(&self, store: &ParamStore<F>, x: &Array2<F>) -> Array2<F> {
        self.forward_t(store, x).0
    }

    pub fn backward<F: Scalar>(
        &self,
        store: &mut ParamStore<F>,
        cache: &LayerNormCache<F>,
        dy: &Array2<F>,
    ) -> Array2<F> {
        let gamma = as1(store.data(self.gamma));
        let (dx, dgamma, dbeta) = super::norm::ln_backward(&cache.inner, &gamma, dy);
        store.grad_add(self.gamma, dgamma.view().into_dyn());
        store.grad_add(self.beta, dbeta.view().into_dyn());
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{max_rel_err, numeric_grad_param};
    use crate::nn::init::{init_tensor, Init};
    use ndarray::Ix4;

    #[test]
    fn conv_layer_roundtrip_and_param_grads() {
        let mut store = ParamStore::<f64>::new();
        let conv = Conv2d::new(&mut store, 11, "t.conv", 3, 5, 3, ConvCfg::same3x3(), true);
        let x = init_tensor::<f64>(&[2, 3, 4, 4], Init::Uniform { lo: -1.0, hi: 1.0 }, 1, "x")
            .into_dimensionality::<Ix4>()
            .unwrap();
        let dy = init_tensor::<f64>(&[2, 5, 4, 4], Init::Uniform { lo: -1.0, hi: 1.0 }, 2, "dy")
            .into_dimensionality::<Ix4>()
            .unwrap();

        let (y, cache) = conv.forward_t(&store, &x);
        assert_eq!(y.dim(), (2, 5, 4, 4));
        store.zero_grads();
        let _ = conv.backward(&mut store, &cache, &dy);

        let analytic = store.grad(conv.w).mapv(|v| v);
        let numeric = numeric_grad_param(
            &mut store,
            conv.w,
            |s| (&conv.forward(s, &x) * &dy).sum(),
            1e-6,
        );
        assert!(max_rel_err(&analytic, &numeric) < 1e-6);
    }

    #[test]
    fn bn_commit_updates_running_stats() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm2d::new(&mut store, "t.bn", 2);
        let x = init_tensor::<f64>(&[4, 2, 3, 3], Init::Uniform { lo: 0.0, hi: 2.0 }, 3, "x")
            .into_dimensionality::<Ix4>()
            .unwrap();
        let before = store.data(bn.r_mean).clone();
        let (_, cache) = bn.forward_t(&store, &x, BnMode::Train);
        bn.commit_stats(&mut store, &cache);
        assert_ne!(&before, store.data(bn.r_mean));

        // Eval mode must not produce stat updates.
        let (_, cache) = bn.forward_t(&store, &x, BnMode::Eval);
        let frozen = store.data(bn.r_mean).clone();
        bn.commit_stats(&mut store, &cache);
        assert_eq!(&frozen, store.data(bn.r_mean));
    }
}
