//! Bilinear image resize (edge-clamped, half-pixel centers). Used by the
//! preprocessing pipeline and heatmap export; not differentiated.

use ndarray::Array3;

use super::Scalar;

/// Resize `[c, h, w]` to `[c, out_h, out_w]`.
pub fn bilinear_resize<F: Scalar>(x: &Array3<F>, out_hw: (usize, usize)) -> Array3<F> {
    let (c, h, w) = x.dim();
    let (oh, ow) = out_hw;
    if (h, w) == (oh, ow) {
        return x.clone();
    }
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    let mut y = Array3::<F>::zeros((c, oh, ow));
    for oy in 0..oh {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ly = F::from_f64(fy - y0 as f64);
        for ox in 0..ow {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let lx = F::from_f64(fx - x0 as f64);
            for ci in 0..c {
                let v00 = x[(ci, y0, x0)];
                let v01 = x[(ci, y0, x1)];
                let v10 = x[(ci, y1, x0)];
                let v11 = x[(ci, y1, x1)];
                let top = v00 + (v01 - v00) * lx;
                let bot = v10 + (v11 - v10) * lx;
                y[(ci, oy, ox)] = top + (bot - top) * ly;
            }
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_stays_constant() {
        let x = Array3::<f64>::from_elem((3, 5, 7), 0.25);
        let y = bilinear_resize(&x, (13, 4));
        for v in y.iter() {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_when_same_size() {
        let x = Array3::from_shape_fn((1, 4, 4), |(_, i, j)| (i * 4 + j) as f64);
        assert_eq!(bilinear_resize(&x, (4, 4)), x);
    }

    #[test]
    fn upscale_preserves_linear_ramp_interior() {
        // A horizontal ramp stays a ramp under bilinear resampling.
        let x = Array3::from_shape_fn((1, 2, 8), |(_, _, j)| j as f64);
        let y = bilinear_resize(&x, (2, 16));
        for j in 2..14 {
            let expect = (j as f64 + 0.5) * 0.5 - 0.5;
            assert!((y[(0, 0, j)] - expect).abs() < 1e-9, "j={j}");
        }
    }
}
