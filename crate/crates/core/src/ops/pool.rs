//! Average pooling and bilinear resampling.

use crate::error::{invalid, shape_err, Result};
use crate::tensor::{Element, Tensor};

/// Non-overlapping mean pooling; `window` must equal `stride`.
pub fn avgpool2d<E: Element>(input: &Tensor<E>, window: usize, stride: usize) -> Result<Tensor<E>> {
    let (n, c, h, w) = input.dims4()?;
    check_pool(h, w, window, stride)?;
    let (ho, wo) = (h / stride, w / stride);
    let scale = E::from_f64(1.0 / (window * window) as f64);
    let x = input.data();
    let mut out = vec![E::zero(); n * c * ho * wo];
    for (plane, dst) in out.chunks_mut(ho * wo).enumerate() {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = E::zero();
                for dy in 0..window {
                    for dx in 0..window {
                        acc += src[(oy * stride + dy) * w + ox * stride + dx];
                    }
                }
                dst[oy * wo + ox] = acc * scale;
            }
        }
    }
    Tensor::new([n, c, ho, wo], out)
}

pub fn avgpool2d_backward<E: Element>(
    input_shape: &[usize],
    grad_out: &Tensor<E>,
    window: usize,
    stride: usize,
) -> Result<Tensor<E>> {
    let (n, c, h, w) = match *input_shape {
        [n, c, h, w] => (n, c, h, w),
        _ => return Err(shape_err("avgpool2d backward needs a rank-4 input shape")),
    };
    check_pool(h, w, window, stride)?;
    let (ho, wo) = (h / stride, w / stride);
    if grad_out.shape() != [n, c, ho, wo] {
        return Err(shape_err(format!("avgpool grad {:?} mismatches", grad_out.shape())));
    }
    let scale = E::from_f64(1.0 / (window * window) as f64);
    let dy = grad_out.data();
    let mut dx = vec![E::zero(); n * c * h * w];
    for (plane, dst) in dx.chunks_mut(h * w).enumerate() {
        let src = &dy[plane * ho * wo..(plane + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                let g = src[oy * wo + ox] * scale;
                for ddy in 0..window {
                    for ddx in 0..window {
                        dst[(oy * stride + ddy) * w + ox * stride + ddx] += g;
                    }
                }
            }
        }
    }
    Tensor::new(input_shape.to_vec(), dx)
}

fn check_pool(h: usize, w: usize, window: usize, stride: usize) -> Result<()> {
    if window == 0 || window != stride {
        return Err(invalid(format!(
            "only window == stride pooling is supported (window {window}, stride {stride})"
        )));
    }
    if h % stride != 0 || w % stride != 0 {
        return Err(shape_err(format!("spatial extent {h}x{w} not divisible by {stride}")));
    }
    Ok(())
}

/// Sampling taps for one output axis: `(lower index, upper index, upper weight)`.
/// Source coordinate of output `i` is `(i + 0.5) * src / dst - 0.5`, clamped to
/// `[0, src - 1]`.
pub(crate) fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

fn resample<E: Element>(input: &Tensor<E>, out_h: usize, out_w: usize) -> Result<Tensor<E>> {
    let (n, c, h, w) = input.dims4()?;
    if out_h == 0 || out_w == 0 {
        return Err(shape_err("resample target must be non-empty"));
    }
    let rows = bilinear_taps(h, out_h);
    let cols = bilinear_taps(w, out_w);
    let x = input.data();
    let mut out = vec![E::zero(); n * c * out_h * out_w];
    for (plane, dst) in out.chunks_mut(out_h * out_w).enumerate() {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
            let fy = E::from_f64(fy);
            for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                let fx = E::from_f64(fx);
                let top = src[y0 * w + x0] * (E::one() - fx) + src[y0 * w + x1] * fx;
                let bottom = src[y1 * w + x0] * (E::one() - fx) + src[y1 * w + x1] * fx;
                dst[oy * out_w + ox] = top * (E::one() - fy) + bottom * fy;
            }
        }
    }
    Tensor::new([n, c, out_h, out_w], out)
}

/// Half-pixel bilinear upsampling with edge clamping.
pub fn bilinear_upsample<E: Element>(input: &Tensor<E>, out_h: usize, out_w: usize) -> Result<Tensor<E>> {
    let (_, _, h, w) = input.dims4()?;
    if out_h < h || out_w < w {
        return Err(invalid(format!(
            "upsample target {out_h}x{out_w} smaller than input {h}x{w}"
        )));
    }
    if out_h == h && out_w == w {
        return Ok(input.clone());
    }
    resample(input, out_h, out_w)
}

/// Bilinear resize in either direction (used for image preprocessing).
pub fn bilinear_resize<E: Element>(input: &Tensor<E>, out_h: usize, out_w: usize) -> Result<Tensor<E>> {
    let (_, _, h, w) = input.dims4()?;
    if out_h == h && out_w == w {
        return Ok(input.clone());
    }
    resample(input, out_h, out_w)
}

pub fn bilinear_upsample_backward<E: Element>(
    input_shape: &[usize],
    grad_out: &Tensor<E>,
) -> Result<Tensor<E>> {
    let (n, c, h, w) = match *input_shape {
        [n, c, h, w] => (n, c, h, w),
        _ => return Err(shape_err("upsample backward needs a rank-4 input shape")),
    };
    let (gn, gc, out_h, out_w) = grad_out.dims4()?;
    if (gn, gc) != (n, c) {
        return Err(shape_err(format!("upsample grad {:?} mismatches", grad_out.shape())));
    }
    if out_h == h && out_w == w {
        return Ok(grad_out.clone());
    }
    let rows = bilinear_taps(h, out_h);
    let cols = bilinear_taps(w, out_w);
    let dy = grad_out.data();
    let mut dx = vec![E::zero(); n * c * h * w];
    for (plane, dst) in dx.chunks_mut(h * w).enumerate() {
        let src = &dy[plane * out_h * out_w..(plane + 1) * out_h * out_w];
        for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
            let fy = E::from_f64(fy);
            for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                let fx = E::from_f64(fx);
                let g = src[oy * out_w + ox];
                let top = g * (E::one() - fy);
                let bottom = g * fy;
                dst[y0 * w + x0] += top * (E::one() - fx);
                dst[y0 * w + x1] += top * fx;
                dst[y1 * w + x0] += bottom * (E::one() - fx);
                dst[y1 * w + x1] += bottom * fx;
            }
        }
    }
    Tensor::new(input_shape.to_vec(), dx)
}

/// Mean over each `H x W` plane, giving `[N, C]`.
pub fn global_avgpool<E: Element>(input: &Tensor<E>) -> Result<Tensor<E>> {
    let (n, c, h, w) = input.dims4()?;
    let scale = E::from_f64(1.0 / (h * w) as f64);
    let data = input
        .data()
        .chunks(h * w)
        .map(|p| p.iter().copied().sum::<E>() * scale)
        .collect();
    Tensor::new([n, c], data)
}

pub fn global_avgpool_backward<E: Element>(input_shape: &[usize], grad_out: &Tensor<E>) -> Result<Tensor<E>> {
    let (h, w) = match *input_shape {
        [_, _, h, w] => (h, w),
        _ => return Err(shape_err("global pool backward needs a rank-4 input shape")),
    };
    let scale = E::from_f64(1.0 / (h * w) as f64);
    let mut dx = Vec::with_capacity(grad_out.numel() * h * w);
    for &g in grad_out.data() {
        dx.extend(std::iter::repeat_n(g * scale, h * w));
    }
    Tensor::new(input_shape.to_vec(), dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_mean_of_window() {
        let x = Tensor::new([1, 1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(avgpool2d(&x, 2, 2).unwrap().data(), &[2.5]);
        let y = avgpool2d(&Tensor::<f32>::full([1, 3, 8, 8], 2.0), 2, 2).unwrap();
        assert_eq!(y.shape(), &[1, 3, 4, 4]);
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn pool_rejects_indivisible() {
        assert!(avgpool2d(&Tensor::<f32>::zeros([1, 1, 3, 4]), 2, 2).is_err());
    }

    #[test]
    fn upsample_row_by_hand() {
        // output i samples (i + 0.5) / 2 - 0.5: -0.25→0, 0.25, 0.75, 1.25→1
        let x = Tensor::new([1, 1, 1, 2], vec![1.0f64, 3.0]).unwrap();
        let y = bilinear_upsample(&x, 1, 4).unwrap();
        assert_eq!(y.data(), &[1.0, 1.5, 2.5, 3.0]);
    }

    #[test]
    fn upsample_constant_and_identity() {
        let x = Tensor::<f32>::full([1, 2, 3, 3], 0.7);
        let y = bilinear_upsample(&x, 7, 5).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-6));
        let z = Tensor::<f32>::from_fn([1, 1, 3, 3], |i| i as f32);
        assert_eq!(bilinear_upsample(&z, 3, 3).unwrap(), z);
        assert!(bilinear_upsample(&z, 2, 3).is_err());
    }
}
