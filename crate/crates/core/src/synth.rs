//! Seeded synthetic test images.
//!
//! Mixes of gradients, sinusoids, hard edges and noise, so the codec sees
//! smooth regions, texture and sharp transitions. Same seed, same pixels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::pixel::{PixelError, PlanarImage};

fn field(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let base = rng.gen_range(0.2..0.8);
    let gx = rng.gen_range(-0.3..0.3);
    let gy = rng.gen_range(-0.3..0.3);
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.01..0.08),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.0..std::f64::consts::PI),
                rng.gen_range(0.02..0.2),
            )
        })
        .collect();
    let ex = rng.gen_range(0.2..0.8) * w as f64;
    let ey = rng.gen_range(0.2..0.8) * h as f64;
    let er = rng.gen_range(0.1..0.35) * w.min(h) as f64;
    let edge = rng.gen_range(-0.3..0.3);
    let noise = rng.gen_range(0.0..0.03);
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f64 / w as f64, y as f64 / h as f64);
            let mut v = base + gx * (fx - 0.5) + gy * (fy - 0.5);
            for &(freq, phase, angle, amp) in &waves {
                let t = x as f64 * angle.cos() + y as f64 * angle.sin();
                v += amp * 0.5 * (t * freq * std::f64::consts::TAU + phase).sin();
            }
            let (dx, dy) = (x as f64 - ex, y as f64 - ey);
            if dx * dx + dy * dy < er * er {
                v += edge;
            }
            v += noise * (rng.gen::<f64>() - 0.5);
            out.push(v.clamp(0.0, 1.0));
        }
    }
    out
}

/// Gray image (R = G = B).
pub fn gray_image(w: usize, h: usize, seed: u64) -> Result<PlanarImage, PixelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PlanarImage::from_gray(w, h, &field(w, h, &mut rng))
}

/// Colour image with independently drawn channels sharing one edge layout.
pub fn color_image(w: usize, h: usize, seed: u64) -> Result<PlanarImage, PixelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let luma = field(w, h, &mut rng);
    let tint = field(w, h, &mut rng);
    let mut rgb = Vec::with_capacity(w * h * 3);
    for (l, t) in luma.iter().zip(&tint) {
        let c = 0.25 * (t - 0.5);
        for v in [l + c, l - 0.5 * c, l - c] {
            rgb.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    PlanarImage::from_rgb8(w, h, &rgb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_bounded() {
        let a = gray_image(40, 24, 7).unwrap();
        assert_eq!(a, gray_image(40, 24, 7).unwrap());
        assert_ne!(a, gray_image(40, 24, 8).unwrap());
        assert!(a.planes().iter().all(|p| p.data().iter().all(|v| (0.0..=1.0).contains(v))));
        assert_eq!(color_image(16, 16, 1).unwrap(), color_image(16, 16, 1).unwrap());
    }
}
