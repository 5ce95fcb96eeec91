//! Dense and depthwise 2-D cross-correlation with zero padding, no bias.

use rayon::prelude::*;

use super::lane_sum2;
use crate::error::{shape_err, Result};
use crate::tensor::{Element, Tensor};

/// Output extent of a strided, zero-padded window sweep.
pub fn output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if kernel == 0 || stride == 0 {
        return Err(shape_err(format!("kernel {kernel} and stride {stride} must be positive")));
    }
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(shape_err(format!(
            "kernel {kernel} larger than padded input {padded}, output extent would be non-positive"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn cols_rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.h_out * self.w_out
    }

    /// Row width and total length of one zero-padded input plane, with
    /// enough trailing rows/columns that every strided tap stays in bounds.
    fn padded_dims(&self) -> (usize, usize) {
        let pw = (self.w + 2 * self.pad).max((self.w_out - 1) * self.stride + self.k);
        let ph = (self.h + 2 * self.pad).max((self.h_out - 1) * self.stride + self.k);
        (pw, ph * pw)
    }

    fn pad_plane<E: Element>(&self, src: &[E], padded: &mut [E]) {
        let (pw, _) = self.padded_dims();
        for (y, row) in src.chunks(self.w).enumerate() {
            let start = (y + self.pad) * pw + self.pad;
            padded[start..start + self.w].copy_from_slice(row);
        }
    }

    fn crop_plane<E: Element>(&self, padded: &[E], dst: &mut [E]) {
        let (pw, _) = self.padded_dims();
        for (y, row) in dst.chunks_mut(self.w).enumerate() {
            let start = (y + self.pad) * pw + self.pad;
            row.copy_from_slice(&padded[start..start + self.w]);
        }
    }
}

pub(crate) fn conv_geometry<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    stride: usize,
    padding: usize,
) -> Result<Geometry> {
    let (n, c_in, h, w) = input.dims4()?;
    let (c_out, wc, kh, kw) = weight.dims4()?;
    if wc != c_in {
        return Err(shape_err(format!(
            "conv2d input {:?} has {c_in} channels but weight {:?} expects {wc}",
            input.shape(),
            weight.shape()
        )));
    }
    if kh != kw {
        return Err(shape_err(format!("non-square kernel {:?}", weight.shape())));
    }
    let h_out = output_extent(h, kh, stride, padding)?;
    let w_out = output_extent(w, kw, stride, padding)?;
    Ok(Geometry { n, c_in, h, w, c_out, k: kh, stride, pad: padding, h_out, w_out })
}

/// Unfolds one image into a `(C*K*K) x (H_out*W_out)` patch matrix.
/// Row index is `c*K*K + kh*K + kw`.
fn im2col<E: Element>(g: &Geometry, image: &[E], cols: &mut [E]) {
    let plane = g.out_plane();
    for c in 0..g.c_in {
        let src = &image[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.w_out..(oy + 1) * g.w_out];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(E::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            E::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the image.
fn col2im<E: Element>(g: &Geometry, cols: &[E], image: &mut [E]) {
    let plane = g.out_plane();
    for c in 0..g.c_in {
        let dst = &mut image[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.w_out {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst_row[ix as usize] += src[oy * g.w_out + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `input [N, C_in, H, W]` with `weight [C_out, C_in, K, K]`.
pub fn conv2d<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<E>> {
    let g = conv_geometry(input, weight, stride, padding)?;
    let in_item = g.c_in * g.h * g.w;
    let out_item = g.c_out * g.out_plane();
    let mut out = vec![E::zero(); g.n * out_item];
    let x = input.data();
    let wt = weight.data();
    let scratch = || if g.is_pointwise() { Vec::new() } else { vec![E::zero(); g.cols_rows() * g.out_plane()] };
    out.par_chunks_mut(out_item).enumerate().for_each_init(scratch, |cols, (i, dst)| {
        let image = &x[i * in_item..(i + 1) * in_item];
        if g.is_pointwise() {
            E::gemm(g.c_out, g.c_in, g.out_plane(), wt, false, image, false, E::zero(), dst);
        } else {
            im2col(&g, image, cols);
            E::gemm(g.c_out, g.cols_rows(), g.out_plane(), wt, false, cols, false, E::zero(), dst);
        }
    });
    Tensor::new([g.n, g.c_out, g.h_out, g.w_out], out)
}

/// Gradients of [`conv2d`] with respect to its input and weight.
pub fn conv2d_backward<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    grad_out: &Tensor<E>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<E>, Tensor<E>)> {
    let (dx, dw) = conv2d_grads(input, weight, grad_out, stride, padding, true)?;
    Ok((dx.expect("input gradient requested"), dw))
}

/// Weight gradient of [`conv2d`] alone, for inputs that need no gradient.
pub fn conv2d_weight_grad<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    grad_out: &Tensor<E>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<E>> {
    Ok(conv2d_grads(input, weight, grad_out, stride, padding, false)?.1)
}

fn conv2d_grads<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    grad_out: &Tensor<E>,
    stride: usize,
    padding: usize,
    want_input: bool,
) -> Result<(Option<Tensor<E>>, Tensor<E>)> {
    let g = conv_geometry(input, weight, stride, padding)?;
    if grad_out.shape() != [g.n, g.c_out, g.h_out, g.w_out] {
        return Err(shape_err(format!(
            "conv2d grad {:?} does not match output shape",
            grad_out.shape()
        )));
    }
    let in_item = g.c_in * g.h * g.w;
    let out_item = g.c_out * g.out_plane();
    let x = input.data();
    let wt = weight.data();
    let dy = grad_out.data();
    let rows = g.cols_rows();

    let mut grad_input = vec![E::zero(); if want_input { g.n * in_item } else { 0 }];
    let mut per_item_dw = vec![E::zero(); g.n * g.c_out * rows];
    let per_item = per_item_dw.par_chunks_mut(g.c_out * rows).enumerate();
    let body = |cols: &mut Vec<E>, i: usize, dw: &mut [E], dx: Option<&mut [E]>| {
        let image = &x[i * in_item..(i + 1) * in_item];
        let gy = &dy[i * out_item..(i + 1) * out_item];
        if g.is_pointwise() {
            E::gemm(g.c_out, g.out_plane(), rows, gy, false, image, true, E::zero(), dw);
            if let Some(dx) = dx {
                E::gemm(rows, g.c_out, g.out_plane(), wt, true, gy, false, E::zero(), dx);
            }
        } else {
            im2col(&g, image, cols);
            E::gemm(g.c_out, g.out_plane(), rows, gy, false, cols, true, E::zero(), dw);
            if let Some(dx) = dx {
                E::gemm(rows, g.c_out, g.out_plane(), wt, true, gy, false, E::zero(), cols);
                col2im(&g, cols, dx);
            }
        }
    };
    let scratch = || if g.is_pointwise() { Vec::new() } else { vec![E::zero(); rows * g.out_plane()] };
    if want_input {
        per_item
            .zip(grad_input.par_chunks_mut(in_item))
            .for_each_init(scratch, |cols, ((i, dw), dx)| body(cols, i, dw, Some(dx)));
    } else {
        per_item.for_each_init(scratch, |cols, (i, dw)| body(cols, i, dw, None));
    }

    let mut grad_weight = vec![E::zero(); g.c_out * rows];
    // reduce in sample order so the result does not depend on scheduling
    for dw in per_item_dw.chunks(g.c_out * rows) {
        for (acc, &v) in grad_weight.iter_mut().zip(dw) {
            *acc += v;
        }
    }
    let grad_input = if want_input { Some(Tensor::new(input.shape().to_vec(), grad_input)?) } else { None };
    Ok((grad_input, Tensor::new(weight.shape().to_vec(), grad_weight)?))
}

pub(crate) fn depthwise_geometry<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    stride: usize,
    padding: usize,
) -> Result<Geometry> {
    let (n, c, h, w) = input.dims4()?;
    let (wc, one, kh, kw) = weight.dims4()?;
    if wc != c || one != 1 {
        return Err(shape_err(format!(
            "depthwise conv input {:?} needs weight [{c}, 1, K, K], got {:?}",
            input.shape(),
            weight.shape()
        )));
    }
    if kh != kw {
        return Err(shape_err(format!("non-square kernel {:?}", weight.shape())));
    }
    let h_out = output_extent(h, kh, stride, padding)?;
    let w_out = output_extent(w, kw, stride, padding)?;
    Ok(Geometry { n, c_in: c, h, w, c_out: c, k: kh, stride, pad: padding, h_out, w_out })
}

impl Geometry {
    /// Length of the flat stride-1 response over a padded plane: rows are
    /// `pw` apart and only the leading columns of each row are meaningful.
    /// Tap `(ki, kj)` reads `padded[ki * pw + kj..][..len]`.
    fn wide_len(&self) -> usize {
        let (pw, _) = self.padded_dims();
        (self.h_out - 1) * self.stride * pw + (self.w_out - 1) * self.stride + 1
    }

    fn wide_index(&self, oy: usize, ox: usize) -> usize {
        let (pw, _) = self.padded_dims();
        (oy * pw + ox) * self.stride
    }
}

/// Per-channel cross-correlation: channel `i` only sees kernel `i`.
pub fn depthwise_conv2d<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<E>> {
    let g = depthwise_geometry(input, weight, stride, padding)?;
    let in_plane = g.h * g.w;
    let out_plane = g.out_plane();
    let kk = g.k * g.k;
    let x = input.data();
    let wt = weight.data();
    let (pw, padded_len) = g.padded_dims();
    let len = g.wide_len();
    let mut out = vec![E::zero(); g.n * g.c_out * out_plane];
    out.par_chunks_mut(out_plane).enumerate().for_each_init(
        || (vec![E::zero(); padded_len], vec![E::zero(); len]),
        |(padded, wide), (idx, dst)| {
            let c = idx % g.c_in;
            g.pad_plane(&x[idx * in_plane..(idx + 1) * in_plane], padded);
            wide.iter_mut().for_each(|v| *v = E::zero());
            for (tap, &wv) in wt[c * kk..(c + 1) * kk].iter().enumerate() {
                let off = (tap / g.k) * pw + tap % g.k;
                for (o, &v) in wide.iter_mut().zip(&padded[off..off + len]) {
                    *o += wv * v;
                }
            }
            for (oy, drow) in dst.chunks_mut(g.w_out).enumerate() {
                for (ox, d) in drow.iter_mut().enumerate() {
                    *d = wide[g.wide_index(oy, ox)];
                }
            }
        },
    );
    Tensor::new([g.n, g.c_out, g.h_out, g.w_out], out)
}

/// Gradients of [`depthwise_conv2d`] with respect to its input and weight.
pub fn depthwise_conv2d_backward<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    grad_out: &Tensor<E>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<E>, Tensor<E>)> {
    let g = depthwise_geometry(input, weight, stride, padding)?;
    if grad_out.shape() != [g.n, g.c_out, g.h_out, g.w_out] {
        return Err(shape_err(format!(
            "depthwise grad {:?} does not match output shape",
            grad_out.shape()
        )));
    }
    let in_plane = g.h * g.w;
    let out_plane = g.out_plane();
    let kk = g.k * g.k;
    let x = input.data();
    let wt = weight.data();
    let dy = grad_out.data();

    let (pw, padded_len) = g.padded_dims();
    let len = g.wide_len();
    let mut grad_input = vec![E::zero(); x.len()];
    let mut per_plane_dw = vec![E::zero(); g.n * g.c_in * kk];
    grad_input
        .par_chunks_mut(in_plane)
        .zip(per_plane_dw.par_chunks_mut(kk))
        .enumerate()
        .for_each_init(
            || (vec![E::zero(); padded_len], vec![E::zero(); padded_len], vec![E::zero(); len]),
            |(padded, grad_padded, wide), (idx, (dx, dw))| {
                let c = idx % g.c_in;
                g.pad_plane(&x[idx * in_plane..(idx + 1) * in_plane], padded);
                grad_padded.iter_mut().for_each(|v| *v = E::zero());
                // scatter the output gradient onto the stride-1 grid; the
                // gaps and row tails stay zero so they contribute nothing
                wide.iter_mut().for_each(|v| *v = E::zero());
                let gy = &dy[idx * out_plane..(idx + 1) * out_plane];
                for (oy, grow) in gy.chunks(g.w_out).enumerate() {
                    for (ox, &v) in grow.iter().enumerate() {
                        wide[g.wide_index(oy, ox)] = v;
                    }
                }
                for (tap, &wv) in wt[c * kk..(c + 1) * kk].iter().enumerate() {
                    let off = (tap / g.k) * pw + tap % g.k;
                    dw[tap] = lane_sum2(wide, &padded[off..off + len], |a, b| a * b);
                    for (d, &v) in grad_padded[off..off + len].iter_mut().zip(wide.iter()) {
                        *d += wv * v;
                    }
                }
                g.crop_plane(grad_padded, dx);
            },
        );

    let mut grad_weight = vec![E::zero(); g.c_in * kk];
    for (idx, dw) in per_plane_dw.chunks(kk).enumerate() {
        let c = idx % g.c_in;
        for (acc, &v) in grad_weight[c * kk..(c + 1) * kk].iter_mut().zip(dw) {
            *acc += v;
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), grad_input)?,
        Tensor::new(weight.shape().to_vec(), grad_weight)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_kernel_scales() {
        let x = Tensor::new([1, 1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::new([1, 1, 1, 1], vec![2.0f32]).unwrap();
        assert_eq!(conv2d(&x, &w, 1, 0).unwrap().data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn ones_sum_to_nine() {
        let x = Tensor::<f32>::ones([1, 1, 3, 3]);
        let w = Tensor::<f32>::ones([1, 1, 3, 3]);
        let y = conv2d(&x, &w, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn strided_padded_shape() {
        let x = Tensor::<f32>::zeros([2, 3, 8, 8]);
        let w = Tensor::<f32>::zeros([5, 3, 3, 3]);
        assert_eq!(conv2d(&x, &w, 2, 1).unwrap().shape(), &[2, 5, 4, 4]);
    }

    #[test]
    fn channel_mismatch_names_both_shapes() {
        let x = Tensor::<f32>::zeros([1, 3, 4, 4]);
        let w = Tensor::<f32>::zeros([2, 4, 3, 3]);
        let msg = conv2d(&x, &w, 1, 1).unwrap_err().to_string();
        assert!(msg.contains("[1, 3, 4, 4]") && msg.contains("[2, 4, 3, 3]"), "{msg}");
    }

    #[test]
    fn non_positive_output_rejected() {
        let x = Tensor::<f32>::zeros([1, 1, 2, 2]);
        let w = Tensor::<f32>::zeros([1, 1, 5, 5]);
        assert!(conv2d(&x, &w, 1, 0).is_err());
    }

    #[test]
    fn depthwise_per_channel_scale() {
        let mut data = vec![1.0f32; 4];
        data.extend([2.0f32; 4]);
        let x = Tensor::new([1, 2, 2, 2], data).unwrap();
        let w = Tensor::new([2, 1, 1, 1], vec![3.0f32, 0.5]).unwrap();
        let y = depthwise_conv2d(&x, &w, 1, 0).unwrap();
        assert_eq!(y.data(), &[3.0, 3.0, 3.0, 3.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn depthwise_zero_kernel_and_shape() {
        let x = Tensor::<f32>::ones([1, 4, 6, 6]);
        let w = Tensor::<f32>::zeros([4, 1, 3, 3]);
        let y = depthwise_conv2d(&x, &w, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 4, 6, 6]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pointwise_path_matches_im2col_path() {
        // a 1x1 kernel with padding 0 but stride 2 goes through im2col
        let x = Tensor::<f64>::from_fn([2, 3, 4, 4], |i| (i as f64 * 0.37).sin());
        let w = Tensor::<f64>::from_fn([2, 3, 1, 1], |i| i as f64 - 1.5);
        let fast = conv2d(&x, &w, 1, 0).unwrap();
        let strided = conv2d(&x, &w, 2, 0).unwrap();
        for n in 0..2 {
            for c in 0..2 {
                for y in 0..2 {
                    for xx in 0..2 {
                        let a = fast.data()[((n * 2 + c) * 4 + 2 * y) * 4 + 2 * xx];
                        let b = strided.data()[((n * 2 + c) * 2 + y) * 2 + xx];
                        assert!((a - b).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
