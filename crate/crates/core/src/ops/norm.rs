//! Per-channel batch normalization over `N x H x W`.

use serde::{Deserialize, Serialize};

use super::{lane_sum, lane_sum2};
use crate::error::{invalid, shape_err, Result};
use crate::tensor::{Element, Tensor};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_STAT_DECAY: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

/// Batch statistics produced by a train-mode pass; `var` is unbiased.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<E> {
    pub mean: Vec<E>,
    pub var: Vec<E>,
}

/// Values cached by the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct BnCache<E> {
    pub normalized: Tensor<E>,
    pub inv_std: Vec<E>,
    pub mode: Mode,
}

fn check_params<E: Element>(c: usize, gamma: &Tensor<E>, beta: &Tensor<E>) -> Result<()> {
    if gamma.numel() != c || beta.numel() != c {
        return Err(shape_err(format!(
            "batchnorm over {c} channels got gamma {:?} and beta {:?}",
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok(())
}

/// Returns `(x̂, γ·x̂ + β)` for an NCHW buffer.
fn affine_normalize<E: Element>(
    x: &[E],
    plane: usize,
    c: usize,
    mean: &[E],
    inv_std: &[E],
    g: &[E],
    b: &[E],
) -> (Vec<E>, Vec<E>) {
    let mut normalized = vec![E::zero(); x.len()];
    let mut out = vec![E::zero(); x.len()];
    let planes = x.chunks_exact(plane).zip(normalized.chunks_exact_mut(plane)).zip(out.chunks_exact_mut(plane));
    for (idx, ((src, nrm), dst)) in planes.enumerate() {
        let ch = idx % c;
        let (mu, is, gc, bc) = (mean[ch], inv_std[ch], g[ch], b[ch]);
        for ((o, h), &v) in dst.iter_mut().zip(nrm.iter_mut()).zip(src) {
            *h = (v - mu) * is;
            *o = gc * *h + bc;
        }
    }
    (normalized, out)
}

/// Train mode: normalizes with batch statistics and returns them so the
/// caller can fold them into its running averages.
pub fn batchnorm2d_train<E: Element>(
    input: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    epsilon: f64,
) -> Result<(Tensor<E>, BnCache<E>, BatchStats<E>)> {
    let (n, c, h, w) = input.dims4()?;
    check_params(c, gamma, beta)?;
    let plane = h * w;
    let m = n * plane;
    if m < 2 {
        return Err(invalid(format!(
            "train-mode batchnorm needs at least 2 values per channel, input {:?} has {m}",
            input.shape()
        )));
    }
    let x = input.data();
    let eps = E::from_f64(epsilon);
    let count = E::from_f64(m as f64);
    let mut mean = vec![E::zero(); c];
    let mut var = vec![E::zero(); c];
    let mut inv_std = vec![E::zero(); c];
    for ch in 0..c {
        let planes = || (0..n).map(|i| &x[(i * c + ch) * plane..(i * c + ch + 1) * plane]);
        let s = planes().fold(E::zero(), |s, p| s + lane_sum(p, |v| v));
        let mu = s / count;
        let sq = planes().fold(E::zero(), |s, p| {
            s + lane_sum(p, |v| {
                let d = v - mu;
                d * d
            })
        });
        let biased = sq / count;
        mean[ch] = mu;
        var[ch] = sq / E::from_f64((m - 1) as f64);
        inv_std[ch] = (biased + eps).sqrt().recip();
    }
    let (normalized, out) = affine_normalize(x, plane, c, &mean, &inv_std, gamma.data(), beta.data());
    let shape = input.shape().to_vec();
    Ok((
        Tensor::new(shape.clone(), out)?,
        BnCache { normalized: Tensor::new(shape, normalized)?, inv_std, mode: Mode::Train },
        BatchStats { mean, var },
    ))
}

/// Eval mode: normalizes with the supplied running statistics.
pub fn batchnorm2d_eval<E: Element>(
    input: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    running_mean: &[E],
    running_var: &[E],
    epsilon: f64,
) -> Result<(Tensor<E>, BnCache<E>)> {
    let (_, c, h, w) = input.dims4()?;
    check_params(c, gamma, beta)?;
    if running_mean.len() != c || running_var.len() != c {
        return Err(shape_err(format!("running stats do not cover {c} channels")));
    }
    let plane = h * w;
    let eps = E::from_f64(epsilon);
    let inv_std: Vec<E> = running_var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
    let x = input.data();
    let (normalized, out) = affine_normalize(x, plane, c, running_mean, &inv_std, gamma.data(), beta.data());
    let shape = input.shape().to_vec();
    Ok((
        Tensor::new(shape.clone(), out)?,
        BnCache { normalized: Tensor::new(shape, normalized)?, inv_std, mode: Mode::Eval },
    ))
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub fn batchnorm2d_backward<E: Element>(
    cache: &BnCache<E>,
    gamma: &Tensor<E>,
    grad_out: &Tensor<E>,
) -> Result<(Tensor<E>, Tensor<E>, Tensor<E>)> {
    cache.normalized.expect_same_shape(grad_out)?;
    let (n, c, h, w) = grad_out.dims4()?;
    let plane = h * w;
    let m = E::from_f64((n * plane) as f64);
    let dy = grad_out.data();
    let xh = cache.normalized.data();
    let g = gamma.data();
    let mut dgamma = vec![E::zero(); c];
    let mut dbeta = vec![E::zero(); c];
    for i in 0..n {
        for ch in 0..c {
            let span = (i * c + ch) * plane..(i * c + ch + 1) * plane;
            dbeta[ch] += lane_sum(&dy[span.clone()], |v| v);
            dgamma[ch] += lane_sum2(&dy[span.clone()], &xh[span], |a, b| a * b);
        }
    }
    let mut dx = vec![E::zero(); dy.len()];
    let planes = dy.chunks_exact(plane).zip(xh.chunks_exact(plane)).zip(dx.chunks_exact_mut(plane));
    for (idx, ((gy, xs), d)) in planes.enumerate() {
        let ch = idx % c;
        let scale = g[ch] * cache.inv_std[ch];
        match cache.mode {
            Mode::Eval => d.iter_mut().zip(gy).for_each(|(d, &v)| *d = v * scale),
            Mode::Train => {
                // dx = g/σ · (dy − mean(dy) − x̂·mean(dy·x̂))
                let mean_dy = dbeta[ch] / m;
                let mean_dy_xh = dgamma[ch] / m;
                for ((d, &v), &h) in d.iter_mut().zip(gy).zip(xs) {
                    *d = scale * (v - mean_dy - h * mean_dy_xh);
                }
            }
        }
    }
    Ok((
        Tensor::new(grad_out.shape().to_vec(), dx)?,
        Tensor::new(gamma.shape().to_vec(), dgamma)?,
        Tensor::new(gamma.shape().to_vec(), dbeta)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_channel_maps_to_beta() {
        let x = Tensor::<f32>::from_fn([2, 2, 3, 3], |i| if i % 18 < 9 { 4.0 } else { -7.0 });
        let gamma = Tensor::ones([2]);
        let beta = Tensor::full([2], 5.0f32);
        let (y, _, _) = batchnorm2d_train(&x, &gamma, &beta, 1e-5).unwrap();
        assert!(y.data().iter().all(|v| (v - 5.0).abs() <= 1e-5));
    }

    #[test]
    fn standardized_channel_shrinks_by_epsilon() {
        // values ±1 in equal numbers: mean 0, biased variance 1
        let x = Tensor::<f64>::from_fn([1, 1, 2, 4], |i| if i % 2 == 0 { 1.0 } else { -1.0 });
        let (y, _, stats) =
            batchnorm2d_train(&x, &Tensor::ones([1]), &Tensor::zeros([1]), 1e-5).unwrap();
        let scale = 1.0 / (1.0f64 + 1e-5).sqrt();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b * scale).abs() < 1e-12);
        }
        assert!((stats.var[0] - 8.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn eval_with_unit_stats_is_identity() {
        let x = Tensor::<f64>::from_fn([2, 3, 2, 2], |i| i as f64 * 0.1 - 1.0);
        let (y, _) = batchnorm2d_eval(
            &x,
            &Tensor::ones([3]),
            &Tensor::zeros([3]),
            &[0.0; 3],
            &[1.0; 3],
            0.0,
        )
        .unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn single_value_per_channel_rejected() {
        let x = Tensor::<f32>::zeros([1, 2, 1, 1]);
        assert!(batchnorm2d_train(&x, &Tensor::ones([2]), &Tensor::zeros([2]), 1e-5).is_err());
    }
}
