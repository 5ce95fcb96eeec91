//! Decoupled fully-connected token mixing along one spatial axis, and the
//! dense classifier layer.

use crate::error::{shape_err, Result};
use crate::tensor::{Element, Tensor};

fn check_theta<E: Element>(theta: &Tensor<E>, extent: usize, axis: &str) -> Result<()> {
    if theta.shape() != [extent, extent] {
        return Err(shape_err(format!(
            "{axis} mixing weight must be [{extent}, {extent}], got {:?}",
            theta.shape()
        )));
    }
    Ok(())
}

/// `out[n,c,h,w] = Σ_h' θ[h,h'] · in[n,c,h',w]`, shared across channels and width.
pub fn fc_vertical<E: Element>(input: &Tensor<E>, theta: &Tensor<E>) -> Result<Tensor<E>> {
    let (n, c, h, w) = input.dims4()?;
    check_theta(theta, h, "vertical")?;
    let mut out = vec![E::zero(); input.numel()];
    for (src, dst) in input.data().chunks(h * w).zip(out.chunks_mut(h * w)) {
        E::gemm(h, h, w, theta.data(), false, src, false, E::zero(), dst);
    }
    Tensor::new([n, c, h, w], out)
}

/// Returns `(grad_input, grad_theta)`.
pub fn fc_vertical_backward<E: Element>(
    input: &Tensor<E>,
    theta: &Tensor<E>,
    grad_out: &Tensor<E>,
) -> Result<(Tensor<E>, Tensor<E>)> {
    let (_, _, h, w) = input.dims4()?;
    check_theta(theta, h, "vertical")?;
    input.expect_same_shape(grad_out)?;
    let mut dx = vec![E::zero(); input.numel()];
    let mut dtheta = vec![E::zero(); h * h];
    for ((src, gy), dst) in input
        .data()
        .chunks(h * w)
        .zip(grad_out.data().chunks(h * w))
        .zip(dx.chunks_mut(h * w))
    {
        E::gemm(h, h, w, theta.data(), true, gy, false, E::zero(), dst);
        E::gemm(h, w, h, gy, false, src, true, E::one(), &mut dtheta);
    }
    Ok((
        Tensor::new(input.shape().to_vec(), dx)?,
        Tensor::new([h, h], dtheta)?,
    ))
}

/// `out[n,c,h,w] = Σ_w' θ[w,w'] · in[n,c,h,w']`, shared across channels and height.
pub fn fc_horizontal<E: Element>(input: &Tensor<E>, theta: &Tensor<E>) -> Result<Tensor<E>> {
    let (n, c, h, w) = input.dims4()?;
    check_theta(theta, w, "horizontal")?;
    let mut out = vec![E::zero(); input.numel()];
    for (src, dst) in input.data().chunks(h * w).zip(out.chunks_mut(h * w)) {
        E::gemm(h, w, w, src, false, theta.data(), true, E::zero(), dst);
    }
    Tensor::new([n, c, h, w], out)
}

pub fn fc_horizontal_backward<E: Element>(
    input: &Tensor<E>,
    theta: &Tensor<E>,
    grad_out: &Tensor<E>,
) -> Result<(Tensor<E>, Tensor<E>)> {
    let (_, _, h, w) = input.dims4()?;
    check_theta(theta, w, "horizontal")?;
    input.expect_same_shape(grad_out)?;
    let mut dx = vec![E::zero(); input.numel()];
    let mut dtheta = vec![E::zero(); w * w];
    for ((src, gy), dst) in input
        .data()
        .chunks(h * w)
        .zip(grad_out.data().chunks(h * w))
        .zip(dx.chunks_mut(h * w))
    {
        E::gemm(h, w, w, gy, false, theta.data(), false, E::zero(), dst);
        E::gemm(w, h, w, gy, true, src, false, E::one(), &mut dtheta);
    }
    Ok((
        Tensor::new(input.shape().to_vec(), dx)?,
        Tensor::new([w, w], dtheta)?,
    ))
}

/// `out = x · Wᵀ + b` for `x [N, in]`, `W [out, in]`, `b [out]`.
pub fn linear<E: Element>(input: &Tensor<E>, weight: &Tensor<E>, bias: &Tensor<E>) -> Result<Tensor<E>> {
    let (n, fan_in, fan_out) = linear_dims(input, weight, bias)?;
    let mut out = Vec::with_capacity(n * fan_out);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    E::gemm(n, fan_in, fan_out, input.data(), false, weight.data(), true, E::one(), &mut out);
    Tensor::new([n, fan_out], out)
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn linear_backward<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
    grad_out: &Tensor<E>,
) -> Result<(Tensor<E>, Tensor<E>, Tensor<E>)> {
    let (n, fan_in, fan_out) = linear_dims(input, weight, bias)?;
    if grad_out.shape() != [n, fan_out] {
        return Err(shape_err(format!("linear grad {:?} mismatches", grad_out.shape())));
    }
    let mut dx = vec![E::zero(); n * fan_in];
    let mut dw = vec![E::zero(); fan_out * fan_in];
    E::gemm(n, fan_out, fan_in, grad_out.data(), false, weight.data(), false, E::zero(), &mut dx);
    E::gemm(fan_out, n, fan_in, grad_out.data(), true, input.data(), false, E::zero(), &mut dw);
    let mut db = vec![E::zero(); fan_out];
    for row in grad_out.data().chunks(fan_out) {
        for (acc, &g) in db.iter_mut().zip(row) {
            *acc += g;
        }
    }
    Ok((
        Tensor::new([n, fan_in], dx)?,
        Tensor::new([fan_out, fan_in], dw)?,
        Tensor::new([fan_out], db)?,
    ))
}

fn linear_dims<E: Element>(input: &Tensor<E>, weight: &Tensor<E>, bias: &Tensor<E>) -> Result<(usize, usize, usize)> {
    match (input.shape(), weight.shape(), bias.shape()) {
        (&[n, fan_in], &[fan_out, w_in], &[b]) if w_in == fan_in && b == fan_out => Ok((n, fan_in, fan_out)),
        (x, w, b) => Err(shape_err(format!("linear layer input {x:?}, weight {w:?}, bias {b:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eye(n: usize) -> Tensor<f64> {
        Tensor::from_fn([n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }

    #[test]
    fn identity_and_zero_mixing() {
        let x = Tensor::<f64>::from_fn([2, 3, 4, 5], |i| (i as f64).cos());
        assert_eq!(fc_vertical(&x, &eye(4)).unwrap(), x);
        assert_eq!(fc_horizontal(&x, &eye(5)).unwrap(), x);
        let zv = fc_vertical(&x, &Tensor::zeros([4, 4])).unwrap();
        let zh = fc_horizontal(&x, &Tensor::zeros([5, 5])).unwrap();
        assert!(zv.data().iter().chain(zh.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn swap_matrices_permute_rows_and_columns() {
        let swap = Tensor::new([2, 2], vec![0.0f64, 1.0, 1.0, 0.0]).unwrap();
        // single column [a, b]ᵀ
        let col = Tensor::new([1, 1, 2, 1], vec![3.0f64, 8.0]).unwrap();
        assert_eq!(fc_vertical(&col, &swap).unwrap().data(), &[8.0, 3.0]);
        // single row [a, b]
        let row = Tensor::new([1, 1, 1, 2], vec![3.0f64, 8.0]).unwrap();
        assert_eq!(fc_horizontal(&row, &swap).unwrap().data(), &[8.0, 3.0]);
    }

    #[test]
    fn wrong_theta_extent_rejected() {
        let x = Tensor::<f32>::zeros([1, 1, 4, 4]);
        assert!(fc_vertical(&x, &Tensor::zeros([3, 3])).is_err());
        assert!(fc_horizontal(&x, &Tensor::zeros([4, 5])).is_err());
    }
}
