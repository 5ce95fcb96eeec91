//! Random flips and reflect-padded integer translation.

use rand::Rng;

use crate::tensor::Tensor;

/// Maximum shift as a fraction of the image extent.
pub const MAX_SHIFT_FRACTION: f64 = 0.1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AugmentDraw {
    pub hflip: bool,
    pub vflip: bool,
    /// Horizontal shift in pixels (positive moves content right).
    pub dx: i64,
    /// Vertical shift in pixels (positive moves content down).
    pub dy: i64,
}

impl AugmentDraw {
    pub fn is_noop(&self) -> bool {
        *self == AugmentDraw::default()
    }
}

pub fn max_shift(size: usize) -> i64 {
    (size as f64 * MAX_SHIFT_FRACTION).floor() as i64
}

/// Flips with probability ½ each, shifts uniform in `±floor(0.1·S)`.
pub fn sample_augment<R: Rng + ?Sized>(rng: &mut R, size: usize) -> AugmentDraw {
    let m = max_shift(size);
    AugmentDraw {
        hflip: rng.random_bool(0.5),
        vflip: rng.random_bool(0.5),
        dx: rng.random_range(-m..=m),
        dy: rng.random_range(-m..=m),
    }
}

fn reflect(i: i64, n: i64) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - j;
    }
    j as usize
}

/// Applies a draw to a `[C, H, W]` tensor.
pub fn apply_augment(t: &Tensor<f32>, draw: &AugmentDraw) -> Tensor<f32> {
    if draw.is_noop() {
        return t.clone();
    }
    let (c, h, w) = match *t.shape() {
        [c, h, w] => (c, h, w),
        _ => panic!("augment expects [C, H, W], got {:?}", t.shape()),
    };
    let src = t.data();
    let mut out = vec![0.0f32; src.len()];
    for y in 0..h {
        let sy = reflect(y as i64 - draw.dy, h as i64);
        let sy = if draw.vflip { h - 1 - sy } else { sy };
        for x in 0..w {
            let sx = reflect(x as i64 - draw.dx, w as i64);
            let sx = if draw.hflip { w - 1 - sx } else { sx };
            for ch in 0..c {
                out[ch * h * w + y * w + x] = src[ch * h * w + sy * w + sx];
            }
        }
    }
    Tensor::new(t.shape().to_vec(), out).expect("augment shape")
}

pub fn augment<R: Rng + ?Sized>(t: &Tensor<f32>, rng: &mut R) -> Tensor<f32> {
    let size = t.shape()[1].min(t.shape()[2]);
    apply_augment(t, &sample_augment(rng, size))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Tensor<f32> {
        Tensor::from_fn([2, 5, 6], |i| i as f32)
    }

    #[test]
    fn noop_draw_is_identity() {
        assert_eq!(apply_augment(&sample(), &AugmentDraw::default()), sample());
    }

    #[test]
    fn double_flip_is_identity() {
        let flip = AugmentDraw { hflip: true, ..Default::default() };
        let once = apply_augment(&sample(), &flip);
        assert_ne!(once, sample());
        assert_eq!(apply_augment(&once, &flip), sample());
    }

    #[test]
    fn shift_reflects_border() {
        let row = Tensor::new([1, 1, 4], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let right = apply_augment(&row, &AugmentDraw { dx: 1, ..Default::default() });
        assert_eq!(right.data(), &[2.0, 1.0, 2.0, 3.0]);
        let left = apply_augment(&row, &AugmentDraw { dx: -2, ..Default::default() });
        assert_eq!(left.data(), &[3.0, 4.0, 3.0, 2.0]);
    }

    #[test]
    fn random_draws_stay_in_range_and_keep_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let d = sample_augment(&mut rng, 64);
            assert!(d.dx.abs() <= 6 && d.dy.abs() <= 6);
        }
        let t = Tensor::from_fn([3, 64, 64], |i| (i % 17) as f32);
        let out = augment(&t, &mut rng);
        assert_eq!(out.shape(), t.shape());
        // every output value is copied from somewhere in the input
        assert!(out.data().iter().all(|v| t.data().contains(v)));
    }
}
