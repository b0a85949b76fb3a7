//! Max pooling and adaptive average pooling.

use ndarray::{Array4, ArrayView4};

use super::Scalar;

/// Max pool with kernel/stride/padding; returns the output and the flat
/// input index of each selected maximum for the backward pass.
pub fn maxpool2d<F: Scalar>(
    x: &ArrayView4<'_, F>,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> (Array4<F>, Array4<u32>) {
    let (bs, c, h, w) = x.dim();
    let oh = (h + 2 * pad - kernel) / stride + 1;
    let ow = (w + 2 * pad - kernel) / stride + 1;
    let mut y = Array4::<F>::zeros((bs, c, oh, ow));
    let mut arg = Array4::<u32>::zeros((bs, c, oh, ow));
    for bi in 0..bs {
        for ci in 0..c {
            let xc = x.slice(ndarray::s![bi, ci, .., ..]);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = F::neg_infinity();
                    let mut best_idx = 0u32;
                    for ky in 0..kernel {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kernel {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let v = xc[(iy as usize, ix as usize)];
                            if v > best {
                                best = v;
                                best_idx = (iy as usize * w + ix as usize) as u32;
                            }
                        }
                    }
                    y[(bi, ci, oy, ox)] = best;
                    arg[(bi, ci, oy, ox)] = best_idx;
                }
            }
        }
    }
    (y, arg)
}

pub fn maxpool2d_dx<F: Scalar>(
    dy: &ArrayView4<'_, F>,
    arg: &Array4<u32>,
    x_hw: (usize, usize),
) -> Array4<F> {
    let (bs, c, oh, ow) = dy.dim();
    let (h, w) = x_hw;
    let mut dx = Array4::<F>::zeros((bs, c, h, w));
    for bi in 0..bs {
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let idx = arg[(bi, ci, oy, ox)] as usize;
                    dx[(bi, ci, idx / w, idx % w)] += dy[(bi, ci, oy, ox)];
                }
            }
        }
    }
    dx
}

fn adaptive_bounds(i: usize, in_size: usize, out_size: usize) -> (usize, usize) {
    let start = (i * in_size) / out_size;
    let end = ((i + 1) * in_size).div_ceil(out_size);
    (start, end)
}

/// Adaptive average pooling to an exact output size (the window layout used
/// by the usual tensor libraries: `start = floor(i*H/oh)`, `end = ceil((i+1)*H/oh)`).
pub fn adaptive_avg_pool2d<F: Scalar>(x: &ArrayView4<'_, F>, out_hw: (usize, usize)) -> Array4<F> {
    let (bs, c, h, w) = x.dim();
    let (oh, ow) = out_hw;
    if (h, w) == (oh, ow) {
        return x.to_owned();
    }
    let mut y = Array4::<F>::zeros((bs, c, oh, ow));
    for bi in 0..bs {
        for ci in 0..c {
            let xc = x.slice(ndarray::s![bi, ci, .., ..]);
            for oy in 0..oh {
                let (y0, y1) = adaptive_bounds(oy, h, oh);
                for ox in 0..ow {
                    let (x0, x1) = adaptive_bounds(ox, w, ow);
                    let mut acc = F::zero();
                    for iy in y0..y1 {
                        for ix in x0..x1 {
                            acc += xc[(iy, ix)];
                        }
                    }
                    let count = F::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                    y[(bi, ci, oy, ox)] = acc / count;
                }
            }
        }
    }
    y
}

pub fn adaptive_avg_pool2d_dx<F: Scalar>(
    dy: &ArrayView4<'_, F>,
    x_hw: (usize, usize),
) -> Array4<F> {
    let (bs, c, oh, ow) = dy.dim();
    let (h, w) = x_hw;
    if (h, w) == (oh, ow) {
        return dy.to_owned();
    }
    let mut dx = Array4::<F>::zeros((bs, c, h, w));
    for bi in 0..bs {
        for ci in 0..c {
            for oy in 0..oh {
                let (y0, y1) = adaptive_bounds(oy, h, oh);
                for ox in 0..ow {
                    let (x0, x1) = adaptive_bounds(ox, w, ow);
                    let share = dy[(bi, ci, oy, ox)]
                        / F::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                    for iy in y0..y1 {
                        for ix in x0..x1 {
                            dx[(bi, ci, iy, ix)] += share;
                        }
                    }
                }
            }
        }
    }
    dx
}
