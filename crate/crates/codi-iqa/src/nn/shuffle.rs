//! Channel shuffle: interleave channels across groups so grouped paths
//! exchange information.

use ndarray::{Array4, ArrayView4, Axis};

use super::Scalar;

/// Forward permutation. With `groups = g` and `n = c/g`, output channel
/// `j*g + i` reads input channel `i*n + j` (the view-transpose-flatten
/// construction). For `c = 4, g = 2` this maps `(0,1,2,3) -> (0,2,1,3)`.
pub fn shuffle_perm(channels: usize, groups: usize) -> Vec<usize> {
    assert_eq!(channels % groups, 0, "channels must divide into groups");
    let n = channels / groups;
    let mut perm = vec![0usize; channels];
    for (out_c, slot) in perm.iter_mut().enumerate() {
        let i = out_c % groups;
        let j = out_c / groups;
        *slot = i * n + j;
    }
    perm
}

fn apply_perm<F: Scalar>(x: &ArrayView4<'_, F>, perm: &[usize]) -> Array4<F> {
    let mut y = Array4::<F>::zeros(x.raw_dim());
    for (out_c, &in_c) in perm.iter().enumerate() {
        y.index_axis_mut(Axis(1), out_c)
            .assign(&x.index_axis(Axis(1), in_c));
    }
    y
}

pub fn channel_shuffle<F: Scalar>(x: &ArrayView4<'_, F>, groups: usize) -> Array4<F> {
    apply_perm(x, &shuffle_perm(x.dim().1, groups))
}

/// Gradient / inverse of [`channel_shuffle`].
pub fn channel_unshuffle<F: Scalar>(dy: &ArrayView4<'_, F>, groups: usize) -> Array4<F> {
    let perm = shuffle_perm(dy.dim().1, groups);
    let mut inv = vec![0usize; perm.len()];
    for (out_c, &in_c) in perm.iter().enumerate() {
        inv[in_c] = out_c;
    }
    apply_perm(dy, &inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_group_interleave_on_four_channels() {
        assert_eq!(shuffle_perm(4, 2), vec![0, 2, 1, 3]);
    }

    #[test]
    fn unshuffle_inverts_shuffle() {
        let x = Array4::from_shape_fn((1, 6, 2, 2), |(_, c, i, j)| (c * 10 + i * 2 + j) as f64);
        for groups in [2, 3] {
            let y = channel_shuffle(&x.view(), groups);
            let back = channel_unshuffle(&y.view(), groups);
            assert_eq!(x, back, "groups={groups}");
        }
    }
}
