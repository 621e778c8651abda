//! Deterministic tensor kernels and their reverse-mode gradients.
//!
//! Every kernel fixes its floating point accumulation order so that two
//! invocations on identical bytes produce identical bytes. Encoder and decoder
//! rely on this to synthesize the same image.

mod activation;
mod conv;
mod loss;
mod norm;
mod resize;

pub use activation::{relu, relu_backward, tanh_act, tanh_backward};
pub use conv::{
    conv2d, conv2d_backward, conv2d_transpose, conv2d_transpose_backward, ConvGrads, ConvParams,
};
pub use loss::{clamped_l1_loss, l1_loss, softmax_cross_entropy, LossOutput};
pub use norm::{instance_norm, instance_norm_backward, NormGrads, NormParams, DEFAULT_NORM_EPS};
pub use resize::{bilinear_resize, bilinear_resize_backward};

/// Index into a reflection-padded axis of length `n`.
///
/// Mirrors without repeating the edge sample (`dcb|abcd|cba`) and keeps
/// folding when the pad is wider than the axis, so any `n >= 1` is valid.
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

#[cfg(test)]
mod tests {
    use super::reflect;

    #[test]
    fn reflect_matches_mirror_padding() {
        let got: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
    }

    #[test]
    fn reflect_folds_on_tiny_axes() {
        assert!((-5..5).all(|i| reflect(i, 1) == 0));
        let got: Vec<usize> = (-3..5).map(|i| reflect(i, 2)).collect();
        assert_eq!(got, vec![1, 0, 1, 0, 1, 0, 1, 0]);
    }
}
