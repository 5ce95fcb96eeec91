//! Resize, scale to [0, 1] and per-channel standardization.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::ops::bilinear_resize;
use crate::tensor::Tensor;

pub const DEFAULT_IMAGE_SIZE: usize = 224;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl NormStats {
    /// Leaves [0, 1]-scaled pixels unchanged.
    pub fn identity() -> Self {
        NormStats { mean: [0.0; 3], std: [1.0; 3] }
    }

    /// Per-channel mean and (population) standard deviation over
    /// `[3, S, S]` tensors holding [0, 1]-scaled pixels.
    pub fn from_tensors<'a>(tensors: impl IntoIterator<Item = &'a Tensor<f32>>) -> Result<Self> {
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        let mut count = 0usize;
        for t in tensors {
            let plane = t.numel() / 3;
            for (c, chunk) in t.data().chunks(plane).enumerate() {
                for &v in chunk {
                    sum[c] += v as f64;
                    sq[c] += (v as f64) * (v as f64);
                }
            }
            count += plane;
        }
        if count == 0 {
            return Err(invalid("normalization statistics need at least one image"));
        }
        let mut stats = NormStats::identity();
        for c in 0..3 {
            let mean = sum[c] / count as f64;
            stats.mean[c] = mean;
            stats.std[c] = (sq[c] / count as f64 - mean * mean).max(0.0).sqrt().max(1e-6);
        }
        Ok(stats)
    }
}

/// `[3, H, W]` tensor of pixels scaled to [0, 1].
pub fn image_to_tensor(image: &RgbImage) -> Tensor<f32> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, px) in image.enumerate_pixels() {
        for c in 0..3 {
            data[c * h * w + y as usize * w + x as usize] = px[c] as f32 / 255.0;
        }
    }
    Tensor::new([3, h, w], data).expect("image tensor shape")
}

/// Inverse of [`image_to_tensor`], clamping to the 8-bit range.
pub fn tensor_to_image(t: &Tensor<f32>) -> Result<RgbImage> {
    let (c, h, w) = match *t.shape() {
        [c, h, w] => (c, h, w),
        _ => return Err(invalid(format!("expected [3, H, W], got {:?}", t.shape()))),
    };
    if c != 3 {
        return Err(invalid(format!("expected 3 channels, got {c}")));
    }
    let mut img = RgbImage::new(w as u32, h as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        for ch in 0..3 {
            let v = t.data()[ch * h * w + y as usize * w + x as usize];
            px[ch] = (v * 255.0).round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(img)
}

/// Bilinear resize to `size × size` without normalization.
pub fn resize_tensor(t: &Tensor<f32>, size: usize) -> Result<Tensor<f32>> {
    let (c, h, w) = match *t.shape() {
        [c, h, w] => (c, h, w),
        _ => return Err(invalid(format!("expected [C, H, W], got {:?}", t.shape()))),
    };
    if h == size && w == size {
        return Ok(t.clone());
    }
    let batched = t.clone().reshape([1, c, h, w])?;
    bilinear_resize(&batched, size, size)?.reshape([c, size, size])
}

/// Per-channel `(x − mean) / std` on a `[3, S, S]` tensor.
pub fn normalize(t: &Tensor<f32>, norm: &NormStats) -> Tensor<f32> {
    let plane = t.numel() / 3;
    let mut out = t.clone();
    for (c, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let (m, s) = (norm.mean[c] as f32, norm.std[c] as f32);
        for v in chunk {
            *v = (*v - m) / s;
        }
    }
    out
}

pub fn preprocess(image: &RgbImage, target_size: usize, norm: &NormStats) -> Result<Tensor<f32>> {
    Ok(normalize(&resize_tensor(&image_to_tensor(image), target_size)?, norm))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_with_half_stats() {
        let img = RgbImage::from_pixel(5, 5, image::Rgb([128, 128, 128]));
        let norm = NormStats { mean: [0.5; 3], std: [0.5; 3] };
        let t = preprocess(&img, 5, &norm).unwrap();
        let expected = (128.0 / 255.0 - 0.5) / 0.5;
        assert!(t.data().iter().all(|&v| (v as f64 - expected).abs() < 1e-6));
        assert!((expected - 0.003_921_568).abs() < 1e-8);
    }

    #[test]
    fn sized_input_keeps_pixels() {
        let img = RgbImage::from_fn(4, 4, |x, y| image::Rgb([(x * 40) as u8, (y * 50) as u8, 7]));
        let t = preprocess(&img, 4, &NormStats::identity()).unwrap();
        assert_eq!(t, image_to_tensor(&img));
        assert!(t.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(tensor_to_image(&t).unwrap(), img);
    }

    #[test]
    fn resize_changes_extent() {
        let img = RgbImage::from_pixel(10, 6, image::Rgb([10, 20, 30]));
        let t = preprocess(&img, 8, &NormStats::identity()).unwrap();
        assert_eq!(t.shape(), &[3, 8, 8]);
        assert!((t.data()[0] - 10.0 / 255.0).abs() < 1e-6);
    }
}
