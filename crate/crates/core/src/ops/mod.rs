//! Stateless numeric kernels. Each forward has a matching backward that
//! returns gradients for every differentiable argument.

mod activation;
mod conv;
mod fc;
mod norm;
mod pool;

pub use activation::{activation, relu, relu_backward, sigmoid, sigmoid_backward, sigmoid_scalar, Activation};
pub use conv::{conv2d, conv2d_backward, conv2d_weight_grad, depthwise_conv2d, depthwise_conv2d_backward, output_extent};
pub use fc::{
    fc_horizontal, fc_horizontal_backward, fc_vertical, fc_vertical_backward, linear, linear_backward,
};
pub use norm::{
    batchnorm2d_backward, batchnorm2d_eval, batchnorm2d_train, BatchStats, BnCache, Mode, DEFAULT_EPSILON,
    DEFAULT_STAT_DECAY,
};
pub use pool::{
    avgpool2d, avgpool2d_backward, bilinear_resize, bilinear_upsample, bilinear_upsample_backward,
    global_avgpool, global_avgpool_backward,
};

/// Sums `f(x)` over `xs` with eight independent accumulators so the loop
/// vectorizes; the combination order is fixed, so results are reproducible.
#[inline]
pub(crate) fn lane_sum<E: crate::Element>(xs: &[E], f: impl Fn(E) -> E) -> E {
    let mut acc = [E::zero(); 8];
    let chunks = xs.chunks_exact(8);
    let tail = chunks.remainder();
    for ch in chunks {
        for (a, &v) in acc.iter_mut().zip(ch) {
            *a += f(v);
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for &v in tail {
        s += f(v);
    }
    s
}

/// `Σ f(a_i, b_i)` with the same lane layout as [`lane_sum`].
#[inline]
pub(crate) fn lane_sum2<E: crate::Element>(a: &[E], b: &[E], f: impl Fn(E, E) -> E) -> E {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [E::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ta, tb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += f(x[i], y[i]);
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (&x, &y) in ta.iter().zip(tb) {
        s += f(x, y);
    }
    s
}
