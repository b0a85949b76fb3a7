//! Deformable 2-D convolution (offset-shifted bilinear sampling, v1: no
//! modulation mask, one offset group shared by all channels).
//!
//! Offsets are `[b, 2N, oh, ow]` with `N = kh*kw`; channel `2k` holds the
//! vertical shift and `2k+1` the horizontal shift of kernel tap
//! `k = ky*kw + kx`. Sampling uses zero padding outside the feature map:
//! a sample point at or beyond one pixel outside the border reads 0, and
//! out-of-range bilinear corners contribute 0.

use ndarray::parallel::prelude::*;
use ndarray::{s, Array1, Array2, Array4, ArrayView2, ArrayView4};

use super::conv::{add_bias, conv_out_size, ConvCfg};
use super::Scalar;

/// Resolved bilinear footprint of one sample point.
#[derive(Clone, Copy)]
struct Footprint<F> {
    inside: bool,
    y0: isize,
    x0: isize,
    ly: F,
    lx: F,
}

#[inline]
fn footprint<F: Scalar>(py: F, px: F, h: usize, w: usize) -> Footprint<F> {
    let hm = F::from_f64(h as f64);
    let wm = F::from_f64(w as f64);
    let neg_one = F::from_f64(-1.0);
    if py <= neg_one || py >= hm || px <= neg_one || px >= wm {
        return Footprint { inside: false, y0: 0, x0: 0, ly: F::zero(), lx: F::zero() };
    }
    let fy = py.floor();
    let fx = px.floor();
    Footprint {
        inside: true,
        y0: fy.to_f64() as isize,
        x0: fx.to_f64() as isize,
        ly: py - fy,
        lx: px - fx,
    }
}

#[inline]
fn corner<F: Scalar>(xc: &ArrayView2<'_, F>, iy: isize, ix: isize) -> F {
    let (h, w) = xc.dim();
    if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
        xc[(iy as usize, ix as usize)]
    } else {
        F::zero()
    }
}

#[inline]
fn sample<F: Scalar>(xc: &ArrayView2<'_, F>, fp: &Footprint<F>) -> F {
    if !fp.inside {
        return F::zero();
    }
    let v00 = corner(xc, fp.y0, fp.x0);
    let v01 = corner(xc, fp.y0, fp.x0 + 1);
    let v10 = corner(xc, fp.y0 + 1, fp.x0);
    let v11 = corner(xc, fp.y0 + 1, fp.x0 + 1);
    let one = F::one();
    (one - fp.ly) * ((one - fp.lx) * v00 + fp.lx * v01)
        + fp.ly * ((one - fp.lx) * v10 + fp.lx * v11)
}

/// `d(sample)/d(py)` and `d(sample)/d(px)`.
#[inline]
fn sample_grad<F: Scalar>(xc: &ArrayView2<'_, F>, fp: &Footprint<F>) -> (F, F) {
    if !fp.inside {
        return (F::zero(), F::zero());
    }
    let v00 = corner(xc, fp.y0, fp.x0);
    let v01 = corner(xc, fp.y0, fp.x0 + 1);
    let v10 = corner(xc, fp.y0 + 1, fp.x0);
    let v11 = corner(xc, fp.y0 + 1, fp.x0 + 1);
    let one = F::one();
    let dpy = (one - fp.lx) * (v10 - v00) + fp.lx * (v11 - v01);
    let dpx = (one - fp.ly) * (v01 - v00) + fp.ly * (v11 - v10);
    (dpy, dpx)
}

fn deform_im2col<F: Scalar>(
    xg: &ndarray::ArrayView3<'_, F>,
    offset_b: &ndarray::ArrayView3<'_, F>,
    col: &mut Array2<F>,
    (kh, kw): (usize, usize),
    cfg: ConvCfg,
    (oh, ow): (usize, usize),
) {
    let (_c, h, w) = xg.dim();
    col.outer_iter_mut()
        .into_par_iter()
        .enumerate()
        .for_each(|(row_idx, mut row)| {
            let cg = row_idx / (kh * kw);
            let k = row_idx % (kh * kw);
            let ky = k / kw;
            let kx = k % kw;
            let xc = xg.index_axis(ndarray::Axis(0), cg);
            let off_y = offset_b.index_axis(ndarray::Axis(0), 2 * k);
            let off_x = offset_b.index_axis(ndarray::Axis(0), 2 * k + 1);
            let mut i = 0usize;
            for oy in 0..oh {
                for ox in 0..ow {
                    let py = F::from_f64((oy * cfg.stride + ky) as f64 - cfg.pad as f64)
                        + off_y[(oy, ox)];
                    let px = F::from_f64((ox * cfg.stride + kx) as f64 - cfg.pad as f64)
                        + off_x[(oy, ox)];
                    let fp = footprint(py, px, h, w);
                    row[i] = sample(&xc, &fp);
                    i += 1;
                }
            }
        });
}

/// Forward pass. `x: [b, c_in, h, w]`, `offset: [b, 2*kh*kw, oh, ow]`,
/// `w: [c_out, c_in/groups, kh, kw]`.
pub fn deform_conv2d<F: Scalar>(
    x: &ArrayView4<'_, F>,
    offset: &ArrayView4<'_, F>,
    w: &ArrayView4<'_, F>,
    b: Option<&Array1<F>>,
    cfg: ConvCfg,
) -> Array4<F> {
    let (bs, c_in, h, wd) = x.dim();
    let (c_out, c_in_g, kh, kw) = w.dim();
    assert_eq!(c_in_g * cfg.groups, c_in);
    let oh = conv_out_size(h, kh, cfg.stride, cfg.pad);
    let ow = conv_out_size(wd, kw, cfg.stride, cfg.pad);
    assert_eq!(offset.dim().1, 2 * kh * kw, "offset channel count");
    assert_eq!((offset.dim().2, offset.dim().3), (oh, ow), "offset spatial size");
    let ocg = c_out / cfg.groups;

    let mut y = Array4::<F>::zeros((bs, c_out, oh, ow));
    let mut col = Array2::<F>::zeros((c_in_g * kh * kw, oh * ow));
    for bi in 0..bs {
        let offset_b = offset.index_axis(ndarray::Axis(0), bi);
        for g in 0..cfg.groups {
            let xg = x.slice(s![bi, g * c_in_g..(g + 1) * c_in_g, .., ..]);
            deform_im2col(&xg, &offset_b, &mut col, (kh, kw), cfg, (oh, ow));
            let wg = w.slice(s![g * ocg..(g + 1) * ocg, .., .., ..]);
            let w_mat = wg.to_shape((ocg, c_in_g * kh * kw)).expect("w reshape");
            let y_blk = w_mat.dot(&col);
            y.slice_mut(s![bi, g * ocg..(g + 1) * ocg, .., ..])
                .assign(&y_blk.to_shape((ocg, oh, ow)).expect("y reshape"));
        }
    }
    if let Some(bias) = b {
        add_bias(&mut y, bias);
    }
    y
}

pub struct DeformGrads<F: Scalar> {
    pub dx: Array4<F>,
    pub d_offset: Array4<F>,
    pub dw: Array4<F>,
    pub db: Array1<F>,
}

pub fn deform_conv2d_backward<F: Scalar>(
    x: &ArrayView4<'_, F>,
    offset: &ArrayView4<'_, F>,
    w: &ArrayView4<'_, F>,
    dy: &ArrayView4<'_, F>,
    cfg: ConvCfg,
) -> DeformGrads<F> {
    let (bs, c_in, h, wd) = x.dim();
    let (c_out, c_in_g, kh, kw) = w.dim();
    let (_, _, oh, ow) = dy.dim();
    let ocg = c_out / cfg.groups;
    let taps = kh * kw;

    let mut dx = Array4::<F>::zeros((bs, c_in, h, wd));
    let mut d_offset = Array4::<F>::zeros(offset.raw_dim());
    let mut dw = Array4::<F>::zeros((c_out, c_in_g, kh, kw));
    let mut db = Array1::<F>::zeros(c_out);

    for (ci, slot) in db.iter_mut().enumerate() {
        *slot = dy.index_axis(ndarray::Axis(1), ci).iter().copied().sum();
    }

    let mut col = Array2::<F>::zeros((c_in_g * taps, oh * ow));
    for bi in 0..bs {
        let offset_b = offset.index_axis(ndarray::Axis(0), bi);
        let mut d_offset_b = d_offset.index_axis_mut(ndarray::Axis(0), bi);
        for g in 0..cfg.groups {
            let xg = x.slice(s![bi, g * c_in_g..(g + 1) * c_in_g, .., ..]);
            let dyg = dy.slice(s![bi, g * ocg..(g + 1) * ocg, .., ..]);
            let dy_mat = dyg.to_shape((ocg, oh * ow)).expect("dy reshape");
            let wg = w.slice(s![g * ocg..(g + 1) * ocg, .., .., ..]);
            let w_mat = wg.to_shape((ocg, c_in_g * taps)).expect("w reshape");

            deform_im2col(&xg, &offset_b, &mut col, (kh, kw), cfg, (oh, ow));
            let dw_g = dy_mat.dot(&col.t());
            let mut dst = dw.slice_mut(s![g * ocg..(g + 1) * ocg, .., .., ..]);
            dst += &dw_g.to_shape((ocg, c_in_g, kh, kw)).expect("dw reshape");

            let d_col = w_mat.t().dot(&dy_mat); // [c_in_g*taps, oh*ow]

            // Input gradient: scatter bilinear weights. Parallel over input
            // channels; each channel's taps are walked in fixed order.
            let mut dxg = dx.slice_mut(s![bi, g * c_in_g..(g + 1) * c_in_g, .., ..]);
            dxg.outer_iter_mut()
                .into_par_iter()
                .enumerate()
                .for_each(|(cg, mut dxc)| {
                    for k in 0..taps {
                        let ky = k / kw;
                        let kx = k % kw;
                        let off_y = offset_b.index_axis(ndarray::Axis(0), 2 * k);
                        let off_x = offset_b.index_axis(ndarray::Axis(0), 2 * k + 1);
                        let drow = d_col.row(cg * taps + k);
                        let mut i = 0usize;
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let gval = drow[i];
                                i += 1;
                                if gval == F::zero() {
                                    continue;
                                }
                                let py = F::from_f64(
                                    (oy * cfg.stride + ky) as f64 - cfg.pad as f64,
                                ) + off_y[(oy, ox)];
                                let px = F::from_f64(
                                    (ox * cfg.stride + kx) as f64 - cfg.pad as f64,
                                ) + off_x[(oy, ox)];
                                let fp = footprint(py, px, h, wd);
                                if !fp.inside {
                                    continue;
                                }
                                let one = F::one();
                                let weights = [
                                    (fp.y0, fp.x0, (one - fp.ly) * (one - fp.lx)),
                                    (fp.y0, fp.x0 + 1, (one - fp.ly) * fp.lx),
                                    (fp.y0 + 1, fp.x0, fp.ly * (one - fp.lx)),
                                    (fp.y0 + 1, fp.x0 + 1, fp.ly * fp.lx),
                                ];
                                for (iy, ix, wt) in weights {
                                    if iy >= 0
                                        && (iy as usize) < h
                                        && ix >= 0
                                        && (ix as usize) < wd
                                    {
                                        dxc[(iy as usize, ix as usize)] += gval * wt;
                                    }
                                }
                            }
                        }
                    }
                });

            // Offset gradient: parallel over taps (each owns two offset
            // channels), accumulating across this group's input channels.
            let d_off_slices: Vec<_> = (0..taps)
                .map(|k| {
                    (
                        k,
                        offset_b.index_axis(ndarray::Axis(0), 2 * k).to_owned(),
                        offset_b.index_axis(ndarray::Axis(0), 2 * k + 1).to_owned(),
                    )
                })
                .collect();
            let updates: Vec<(usize, Array2<F>, Array2<F>)> = d_off_slices
                .into_par_iter()
                .map(|(k, off_y, off_x)| {
                    let ky = k / kw;
                    let kx = k % kw;
                    let mut acc_y = Array2::<F>::zeros((oh, ow));
                    let mut acc_x = Array2::<F>::zeros((oh, ow));
                    for cg in 0..c_in_g {
                        let xc = xg.index_axis(ndarray::Axis(0), cg);
                        let drow = d_col.row(cg * taps + k);
                        let mut i = 0usize;
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let gval = drow[i];
                                i += 1;
                                if gval == F::zero() {
                                    continue;
                                }
                                let py = F::from_f64(
                                    (oy * cfg.stride + ky) as f64 - cfg.pad as f64,
                                ) + off_y[(oy, ox)];
                                let px = F::from_f64(
                                    (ox * cfg.stride + kx) as f64 - cfg.pad as f64,
                                ) + off_x[(oy, ox)];
                                let fp = footprint(py, px, h, wd);
                                let (dpy, dpx) = sample_grad(&xc, &fp);
                                acc_y[(oy, ox)] += gval * dpy;
                                acc_x[(oy, ox)] += gval * dpx;
                            }
                        }
                    }
                    (k, acc_y, acc_x)
                })
                .collect();
            for (k, acc_y, acc_x) in updates {
                let mut oy_ch = d_offset_b.index_axis_mut(ndarray::Axis(0), 2 * k);
                oy_ch += &acc_y;
                let mut ox_ch = d_offset_b.index_axis_mut(ndarray::Axis(0), 2 * k + 1);
                ox_ch += &acc_x;
            }
        }
    }

    DeformGrads { dx, d_offset, dw, db }
}
