//! Procedural stand-in for a dermoscopy dataset: seven lesion classes drawn
//! as colored shapes on a skin-toned background, with the real dataset's
//! long-tailed class balance.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DatasetRecord, DxType, Lesion};

pub const SYNTHETIC_IMAGE_SIZE: u32 = 64;

/// Images per class in [`Lesion::ALL`] order.
pub const SYNTHETIC_COUNTS: [usize; 7] = [30, 50, 100, 12, 100, 600, 15];

/// Small imbalanced set for smoke tests of the command-line tools.
pub const SMOKE_COUNTS: [usize; 7] = [8, 10, 12, 6, 12, 24, 6];
pub const SMOKE_IMAGE_SIZE: u32 = 32;

/// Every lesion color is pulled this far toward a shared brown so that
/// classes overlap in color and shape carries most of the signal.
const BLEND: f32 = 0.55;
const SHARED_TONE: [f32; 3] = [140.0, 90.0, 80.0];

#[derive(Clone, Copy)]
enum Shape {
    Square,
    Ring,
    Ellipse,
    Cross,
    Irregular,
    Disc,
    Dots,
}

fn style(lesion: Lesion) -> ([f32; 3], Shape) {
    match lesion {
        Lesion::Akiec => ([200.0, 80.0, 90.0], Shape::Square),
        Lesion::Bcc => ([235.0, 200.0, 215.0], Shape::Ring),
        Lesion::Bkl => ([170.0, 130.0, 60.0], Shape::Ellipse),
        Lesion::Df => ([100.0, 50.0, 120.0], Shape::Cross),
        Lesion::Mel => ([35.0, 30.0, 55.0], Shape::Irregular),
        Lesion::Nv => ([125.0, 75.0, 45.0], Shape::Disc),
        Lesion::Vasc => ([215.0, 25.0, 35.0], Shape::Dots),
    }
}

fn inside(shape: Shape, dx: f32, dy: f32, r: f32, phase: f32, dots: &[(f32, f32)]) -> bool {
    let d = (dx * dx + dy * dy).sqrt();
    match shape {
        Shape::Square => dx.abs() <= r * 0.8 && dy.abs() <= r * 0.8,
        Shape::Ring => d <= r && d >= r * 0.55,
        Shape::Ellipse => (dx / r).powi(2) + (dy / (r * 0.55)).powi(2) <= 1.0,
        Shape::Cross => (dx.abs() <= r * 0.3 && dy.abs() <= r) || (dy.abs() <= r * 0.3 && dx.abs() <= r),
        Shape::Irregular => {
            let theta = dy.atan2(dx);
            d <= r * (0.75 + 0.25 * (3.0 * theta + phase).sin())
        }
        Shape::Disc => d <= r,
        Shape::Dots => dots.iter().any(|&(px, py)| (dx - px).powi(2) + (dy - py).powi(2) <= (r * 0.28).powi(2)),
    }
}

fn jitter<R: Rng>(rng: &mut R, amount: f32) -> f32 {
    rng.random_range(-amount..=amount)
}

/// Draws one image of the given class.
pub fn render_lesion<R: Rng>(lesion: Lesion, size: u32, rng: &mut R) -> RgbImage {
    let (base, shape) = style(lesion);
    let s = size as f32;
    let skin = [225.0 + jitter(rng, 15.0), 185.0 + jitter(rng, 15.0), 160.0 + jitter(rng, 15.0)];
    let color: [f32; 3] = std::array::from_fn(|i| base[i] * (1.0 - BLEND) + SHARED_TONE[i] * BLEND + jitter(rng, 30.0));
    let r = s * rng.random_range(0.2..0.32);
    let cx = s / 2.0 + jitter(rng, s * 0.12);
    let cy = s / 2.0 + jitter(rng, s * 0.12);
    let phase = rng.random_range(0.0..std::f32::consts::TAU);
    let dots: Vec<(f32, f32)> = (0..5).map(|_| (jitter(rng, r * 0.8), jitter(rng, r * 0.8))).collect();
    let mut img = RgbImage::new(size, size);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let (dx, dy) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
        let fill = if inside(shape, dx, dy, r, phase, &dots) { color } else { skin };
        let noise = jitter(rng, 24.0);
        *px = Rgb(fill.map(|c| (c + noise + jitter(rng, 4.0)).round().clamp(0.0, 255.0) as u8));
    }
    img
}

/// Generates the full synthetic set in class order with ids `synth_00000…`.
pub fn synthetic_dataset(seed: u64, size: u32) -> Vec<DatasetRecord> {
    synthetic_dataset_with_counts(seed, size, &SYNTHETIC_COUNTS)
}

pub fn synthetic_dataset_with_counts(seed: u64, size: u32, counts: &[usize; 7]) -> Vec<DatasetRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(counts.iter().sum());
    for (lesion, &n) in Lesion::ALL.iter().zip(counts) {
        for _ in 0..n {
            let dx_type = match rng.random_range(0..5) {
                0 => None,
                k => Some(DxType::ALL[k - 1]),
            };
            let image = render_lesion(*lesion, size, &mut rng);
            records.push(DatasetRecord { image_id: format!("synth_{:05}", records.len()), image, label: *lesion, dx_type });
        }
    }
    records
}
