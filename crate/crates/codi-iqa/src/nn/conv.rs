//! 2-D convolution with stride, zero padding and channel groups.
//!
//! Forward and weight gradients go through a row-blocked im2col + GEMM;
//! blocks are sized to keep the staging buffer small even for the widest
//! stage-0 feature maps. Depthwise layers (`groups == c_in`, 3x3) take a
//! direct path since per-group GEMMs degenerate to 1x9 products.

use ndarray::parallel::prelude::*;
use ndarray::{s, Array1, Array2, Array4, ArrayView4};

use super::Scalar;

/// Stride/padding/groups for a conv layer. Kernel size lives in the weight
/// tensor (`[c_out, c_in/groups, kh, kw]`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvCfg {
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvCfg {
    pub fn unit() -> Self {
        ConvCfg { stride: 1, pad: 0, groups: 1 }
    }

    pub fn same3x3() -> Self {
        ConvCfg { stride: 1, pad: 1, groups: 1 }
    }
}

pub fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Cap on the im2col staging buffer, in elements (per batch/group block).
const COL_BLOCK_ELEMS: usize = 4 << 20;

fn is_depthwise(c_in: usize, c_out: usize, groups: usize) -> bool {
    groups == c_in && c_out == c_in
}

/// `x: [b, c_in, h, w]`, `w: [c_out, c_in/groups, kh, kw]` -> `[b, c_out, oh, ow]`.
pub fn conv2d<F: Scalar>(
    x: &ArrayView4<'_, F>,
    w: &ArrayView4<'_, F>,
    b: Option<&Array1<F>>,
    cfg: ConvCfg,
) -> Array4<F> {
    let (bs, c_in, h, wd) = x.dim();
    let (c_out, c_in_g, kh, kw) = w.dim();
    assert_eq!(c_in_g * cfg.groups, c_in, "input channels vs weight/groups");
    assert_eq!(c_out % cfg.groups, 0);
    let oh = conv_out_size(h, kh, cfg.stride, cfg.pad);
    let ow = conv_out_size(wd, kw, cfg.stride, cfg.pad);
    let mut y = Array4::<F>::zeros((bs, c_out, oh, ow));

    if is_depthwise(c_in, c_out, cfg.groups) {
        depthwise_forward(x, w, &mut y, cfg, (kh, kw));
    } else {
        let ocg = c_out / cfg.groups;
        let row_block = block_rows(c_in_g * kh * kw, ow);
        let mut col = Array2::<F>::zeros((c_in_g * kh * kw, row_block * ow));
        for bi in 0..bs {
            for g in 0..cfg.groups {
                let xg = x.slice(s![bi, g * c_in_g..(g + 1) * c_in_g, .., ..]);
                let wg = w.slice(s![g * ocg..(g + 1) * ocg, .., .., ..]);
                let w_mat = wg
                    .to_shape((ocg, c_in_g * kh * kw))
                    .expect("weight reshape");
                let mut r0 = 0;
                while r0 < oh {
                    let r1 = (r0 + row_block).min(oh);
                    let cols = (r1 - r0) * ow;
                    let mut col_blk = col.slice_mut(s![.., ..cols]);
                    im2col_block(&xg, &mut col_blk, (kh, kw), cfg, r0, r1, ow);
                    let y_blk = w_mat.dot(&col_blk);
                    let mut dst = y.slice_mut(s![bi, g * ocg..(g + 1) * ocg, r0..r1, ..]);
                    dst.assign(
                        &y_blk
                            .to_shape((ocg, r1 - r0, ow))
                            .expect("gemm output reshape"),
                    );
                    r0 = r1;
                }
            }
        }
    }

    if let Some(bias) = b {
        add_bias(&mut y, bias);
    }
    y
}

pub fn add_bias<F: Scalar>(y: &mut Array4<F>, bias: &Array1<F>) {
    for (mut ch, bv) in y.axis_iter_mut(ndarray::Axis(1)).zip(bias.iter()) {
        ch.mapv_inplace(|v| v + *bv);
    }
}

fn block_rows(col_rows: usize, ow: usize) -> usize {
    (COL_BLOCK_ELEMS / (col_rows * ow).max(1)).clamp(1, 1 << 14)
}

/// Fill `col` with patches for output rows `[r0, r1)`. Rows of `col` are the
/// (channel, ky, kx) taps; columns walk the output grid row-major.
fn im2col_block<F: Scalar>(
    x: &ndarray::ArrayView3<'_, F>,
    col: &mut ndarray::ArrayViewMut2<'_, F>,
    (kh, kw): (usize, usize),
    cfg: ConvCfg,
    r0: usize,
    r1: usize,
    ow: usize,
) {
    let (_c_in_g, h, wd) = x.dim();
    let stride = cfg.stride;
    let pad = cfg.pad as isize;
    col.outer_iter_mut()
        .into_par_iter()
        .enumerate()
        .for_each(|(row_idx, mut row)| {
            let c = row_idx / (kh * kw);
            let ky = (row_idx / kw) % kh;
            let kx = row_idx % kw;
            let xc = x.index_axis(ndarray::Axis(0), c);
            let mut i = 0usize;
            for oy in r0..r1 {
                let iy = (oy * stride) as isize + ky as isize - pad;
                if iy < 0 || iy >= h as isize {
                    for _ in 0..ow {
                        row[i] = F::zero();
                        i += 1;
                    }
                    continue;
                }
                let xr = xc.index_axis(ndarray::Axis(0), iy as usize);
                for ox in 0..ow {
                    let ix = (ox * stride) as isize + kx as isize - pad;
                    row[i] = if ix < 0 || ix >= wd as isize {
                        F::zero()
                    } else {
                        xr[ix as usize]
                    };
                    i += 1;
                }
            }
        });
}

fn depthwise_forward<F: Scalar>(
    x: &ArrayView4<'_, F>,
    w: &ArrayView4<'_, F>,
    y: &mut Array4<F>,
    cfg: ConvCfg,
    (kh, kw): (usize, usize),
) {
    let (bs, _c, h, wd) = x.dim();
    let (_, _, oh, ow) = y.dim();
    let stride = cfg.stride;
    let pad = cfg.pad as isize;
    for bi in 0..bs {
        let xb = x.index_axis(ndarray::Axis(0), bi);
        let mut yb = y.index_axis_mut(ndarray::Axis(0), bi);
        yb.outer_iter_mut()
            .into_par_iter()
            .enumerate()
            .for_each(|(ci, mut yc)| {
                let xc = xb.index_axis(ndarray::Axis(0), ci);
                let wc = w.slice(s![ci, 0, .., ..]);
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = F::zero();
                        for ky in 0..kh {
                            let iy = (oy * stride) as isize + ky as isize - pad;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride) as isize + kx as isize - pad;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                acc += wc[(ky, kx)] * xc[(iy as usize, ix as usize)];
                            }
                        }
                        yc[(oy, ox)] = acc;
                    }
                }
            });
    }
}

/// Gradient w.r.t. the input. `x_hw` is the original spatial size.
pub fn conv2d_dx<F: Scalar>(
    w: &ArrayView4<'_, F>,
    dy: &ArrayView4<'_, F>,
    x_hw: (usize, usize),
    cfg: ConvCfg,
) -> Array4<F> {
    let (bs, c_out, oh, ow) = dy.dim();
    let (c_out_w, c_in_g, kh, kw) = w.dim();
    assert_eq!(c_out, c_out_w);
    let c_in = c_in_g * cfg.groups;
    let (h, wd) = x_hw;
    let ocg = c_out / cfg.groups;
    let mut dx = Array4::<F>::zeros((bs, c_in, h, wd));

    // d_col = W^T . dy, then scatter-add back through the im2col map.
    // Batches run in parallel; within one batch the scatter is sequential in
    // a fixed order, keeping accumulation deterministic.
    ndarray::Zip::from(dx.axis_iter_mut(ndarray::Axis(0)))
        .and(dy.axis_iter(ndarray::Axis(0)))
        .par_for_each(|mut dxb, dyb| {
            for g in 0..cfg.groups {
                let wg = w.slice(s![g * ocg..(g + 1) * ocg, .., .., ..]);
                let w_mat = wg.to_shape((ocg, c_in_g * kh * kw)).expect("w reshape");
                let dyg = dyb.slice(s![g * ocg..(g + 1) * ocg, .., ..]);
                let dy_mat = dyg.to_shape((ocg, oh * ow)).expect("dy reshape");
                let d_col = w_mat.t().dot(&dy_mat); // [c_in_g*kh*kw, oh*ow]
                let mut dxg = dxb.slice_mut(s![g * c_in_g..(g + 1) * c_in_g, .., ..]);
                for (row_idx, row) in d_col.axis_iter(ndarray::Axis(0)).enumerate() {
                    let c = row_idx / (kh * kw);
                    let ky = (row_idx / kw) % kh;
                    let kx = row_idx % kw;
                    let mut i = 0usize;
                    for oy in 0..oh {
                        let iy = (oy * cfg.stride) as isize + ky as isize - cfg.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            i += ow;
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * cfg.stride) as isize + kx as isize - cfg.pad as isize;
                            if ix >= 0 && ix < wd as isize {
                                dxg[(c, iy as usize, ix as usize)] += row[i];
                            }
                            i += 1;
                        }
                    }
                }
            }
        });
    dx
}

/// Gradient w.r.t. the weights.
pub fn conv2d_dw<F: Scalar>(
    x: &ArrayView4<'_, F>,
    dy: &ArrayView4<'_, F>,
    (kh, kw): (usize, usize),
    cfg: ConvCfg,
) -> Array4<F> {
    let (bs, c_in, h, _wd) = x.dim();
    let (_bs2, c_out, oh, ow) = dy.dim();
    let c_in_g = c_in / cfg.groups;
    let ocg = c_out / cfg.groups;
    let mut dw = Array4::<F>::zeros((c_out, c_in_g, kh, kw));
    let _ = h;

    let row_block = block_rows(c_in_g * kh * kw, ow);
    let mut col = Array2::<F>::zeros((c_in_g * kh * kw, row_block * ow));
    for bi in 0..bs {
        for g in 0..cfg.groups {
            let xg = x.slice(s![bi, g * c_in_g..(g + 1) * c_in_g, .., ..]);
            let dyg = dy.slice(s![bi, g * ocg..(g + 1) * ocg, .., ..]);
            let mut r0 = 0;
            while r0 < oh {
                let r1 = (r0 + row_block).min(oh);
                let cols = (r1 - r0) * ow;
                let mut col_blk = col.slice_mut(s![.., ..cols]);
                im2col_block(&xg, &mut col_blk, (kh, kw), cfg, r0, r1, ow);
                let dy_blk = dyg
                    .slice(s![.., r0..r1, ..])
                    .to_shape((ocg, cols))
                    .expect("dy reshape")
                    .to_owned();
                let dw_g = dy_blk.dot(&col_blk.t()); // [ocg, c_in_g*kh*kw]
                let mut dst = dw.slice_mut(s![g * ocg..(g + 1) * ocg, .., .., ..]);
                let dw_g4 = dw_g
                    .to_shape((ocg, c_in_g, kh, kw))
                    .expect("dw reshape");
                dst += &dw_g4;
                r0 = r1;
            }
        }
    }
    dw
}

/// Gradient w.r.t. the bias: sum of `dy` over batch and spatial axes.
pub fn conv2d_db<F: Scalar>(dy: &ArrayView4<'_, F>) -> Array1<F> {
    let (_, c_out, _, _) = dy.dim();
    let mut db = Array1::<F>::zeros(c_out);
    for (ci, slot) in db.iter_mut().enumerate() {
        *slot = dy.index_axis(ndarray::Axis(1), ci).iter().copied().sum();
    }
    db
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array4, ArrayD};

    use crate::nn::gradcheck::{max_rel_err, numeric_grad};
    use crate::nn::init::{init_tensor, Init};

    /// Direct quadruple-loop convolution, the oracle for the GEMM path.
    fn conv2d_naive(
        x: &Array4<f64>,
        w: &Array4<f64>,
        b: Option<&Array1<f64>>,
        cfg: ConvCfg,
    ) -> Array4<f64> {
        let (bs, c_in, h, wd) = x.dim();
        let (c_out, c_in_g, kh, kw) = w.dim();
        let oh = conv_out_size(h, kh, cfg.stride, cfg.pad);
        let ow = conv_out_size(wd, kw, cfg.stride, cfg.pad);
        let ocg = c_out / cfg.groups;
        let mut y = Array4::<f64>::zeros((bs, c_out, oh, ow));
        for bi in 0..bs {
            for co in 0..c_out {
                let g = co / ocg;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.map_or(0.0, |b| b[co]);
                        for cg in 0..c_in_g {
                            let ci = g * c_in_g + cg;
                            let _ = c_in;
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * cfg.stride + ky) as isize - cfg.pad as isize;
                                    let ix = (ox * cfg.stride + kx) as isize - cfg.pad as isize;
                                    if iy >= 0
                                        && iy < h as isize
                                        && ix >= 0
                                        && ix < wd as isize
                                    {
                                        acc += w[(co, cg, ky, kx)]
                                            * x[(bi, ci, iy as usize, ix as usize)];
                                    }
                                }
                            }
                        }
                        y[(bi, co, oy, ox)] = acc;
                    }
                }
            }
        }
        y
    }

    fn rand4(shape: (usize, usize, usize, usize), seed: u64, tag: &str) -> Array4<f64> {
        init_tensor::<f64>(
            &[shape.0, shape.1, shape.2, shape.3],
            Init::Uniform { lo: -1.0, hi: 1.0 },
            seed,
            tag,
        )
        .into_dimensionality()
        .unwrap()
    }

    #[test]
    fn gemm_path_matches_naive() {
        for &(cfg, cin, cout) in &[
            (ConvCfg { stride: 1, pad: 1, groups: 1 }, 3, 4),
            (ConvCfg { stride: 2, pad: 1, groups: 1 }, 4, 6),
            (ConvCfg { stride: 1, pad: 1, groups: 2 }, 4, 6),
            (ConvCfg { stride: 1, pad: 0, groups: 1 }, 2, 3),
        ] {
            let x = rand4((2, cin, 9, 7), 1, "x");
            let w = rand4((cout, cin / cfg.groups, 3, 3), 2, "w");
            let b: Array1<f64> = init_tensor::<f64>(&[cout], Init::Uniform { lo: -1.0, hi: 1.0 }, 3, "b")
                .into_dimensionality()
                .unwrap();
            let got = conv2d(&x.view(), &w.view(), Some(&b), cfg);
            let want = conv2d_naive(&x, &w, Some(&b), cfg);
            let diff = (&got - &want).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(diff < 1e-10, "cfg {cfg:?} diff {diff}");
        }
    }

    #[test]
    fn depthwise_matches_naive() {
        let cfg = ConvCfg { stride: 1, pad: 1, groups: 5 };
        let x = rand4((2, 5, 8, 6), 4, "x");
        let w = rand4((5, 1, 3, 3), 5, "w");
        let got = conv2d(&x.view(), &w.view(), None, cfg);
        let want = conv2d_naive(&x, &w, None, cfg);
        let diff = (&got - &want).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = ConvCfg { stride: 2, pad: 1, groups: 2 };
        let x = rand4((1, 4, 5, 5), 7, "x");
        let w = rand4((6, 2, 3, 3), 8, "w");
        let b: Array1<f64> = init_tensor::<f64>(&[6], Init::Uniform { lo: -0.5, hi: 0.5 }, 9, "b")
            .into_dimensionality()
            .unwrap();
        // Loss: weighted sum of outputs so every dy entry is distinct.
        let y0 = conv2d(&x.view(), &w.view(), Some(&b), cfg);
        let dy = rand4(y0.dim(), 10, "dy");

        let dx = conv2d_dx(&w.view(), &dy.view(), (5, 5), cfg);
        let dw = conv2d_dw(&x.view(), &dy.view(), (3, 3), cfg);
        let db = conv2d_db(&dy.view());

        let loss_x = |xv: &ArrayD<f64>| {
            let x4 = xv.view().into_dimensionality().unwrap();
            (&conv2d(&x4, &w.view(), Some(&b), cfg) * &dy).sum()
        };
        let num_dx = numeric_grad(&x.clone().into_dyn(), loss_x, 1e-5);
        assert!(max_rel_err(&dx.into_dyn(), &num_dx) < 1e-6);

        let loss_w = |wv: &ArrayD<f64>| {
            let w4 = wv.view().into_dimensionality().unwrap();
            (&conv2d(&x.view(), &w4, Some(&b), cfg) * &dy).sum()
        };
        let num_dw = numeric_grad(&w.clone().into_dyn(), loss_w, 1e-5);
        assert!(max_rel_err(&dw.into_dyn(), &num_dw) < 1e-6);

        let num_db = dy.sum_axis(ndarray::Axis(0)).sum_axis(ndarray::Axis(1)).sum_axis(ndarray::Axis(1));
        assert!(max_rel_err(&db.into_dyn(), &num_db.into_dyn()) < 1e-12);
    }
}
