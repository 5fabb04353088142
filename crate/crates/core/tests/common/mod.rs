//! Shared generators for integration tests: deterministic synthetic
//! "natural" images (smooth shading plus soft edges and faint texture) and
//! scratch-shaped damage masks.

#![allow(dead_code)] // not every helper is used by every test binary

use std::f64::consts::TAU;

use mixbp::imageio::{GrayImage, InpaintMask};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    lo + u * (hi - lo)
}

/// Standard normal via Box–Muller.
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = uniform(rng, f64::MIN_POSITIVE, 1.0);
    let u2 = uniform(rng, 0.0, 1.0);
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

/// Deterministic stand-in for a natural photograph: a handful of
/// low-frequency shading waves, a few soft intensity edges, and faint
/// per-pixel texture. Smooth regions dominate while the edges keep the
/// patch statistics heavy-tailed, which is the regime the prior expects.
pub fn natural_image(seed: u64, width: u32, height: u32) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = uniform(&mut rng, 100.0, 150.0);
    let waves: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            let amp = uniform(&mut rng, 5.0, 18.0);
            let fx = uniform(&mut rng, -2.5, 2.5) * TAU / f64::from(width);
            let fy = uniform(&mut rng, -2.5, 2.5) * TAU / f64::from(height);
            let phase = uniform(&mut rng, 0.0, TAU);
            (amp, fx, fy, phase)
        })
        .collect();
    let edge_count = 2 + (rng.next_u64() % 2) as usize;
    let edges: Vec<(f64, f64, f64, f64, f64, f64)> = (0..edge_count)
        .map(|_| {
            let cx = uniform(&mut rng, 0.2, 0.8) * f64::from(width);
            let cy = uniform(&mut rng, 0.2, 0.8) * f64::from(height);
            let theta = uniform(&mut rng, 0.0, TAU);
            let sign = if rng.next_u64() % 2 == 0 { 1.0 } else { -1.0 };
            let step = sign * uniform(&mut rng, 15.0, 35.0);
            let softness = uniform(&mut rng, 0.8, 2.0);
            (cx, cy, theta.cos(), theta.sin(), step, softness)
        })
        .collect();
    GrayImage::from_fn(width, height, |x, y| {
        let (xf, yf) = (f64::from(x), f64::from(y));
        let mut v = base;
        for &(amp, fx, fy, phase) in &waves {
            v += amp * (fx * xf + fy * yf + phase).cos();
        }
        for &(cx, cy, nx, ny, step, softness) in &edges {
            let d = nx * (xf - cx) + ny * (yf - cy);
            v += step / (1.0 + (-d / softness).exp());
        }
        v += 1.5 * normal(&mut rng);
        v.clamp(0.0, 255.0)
    })
}

/// Thin random-walk scratches covering `round(coverage · width · height)`
/// pixels, none of them on the image border.
pub fn scratch_mask(seed: u64, width: u32, height: u32, coverage: f64) -> InpaintMask {
    assert!(width >= 3 && height >= 3, "mask needs an interior");
    assert!(coverage > 0.0 && coverage <= 0.5, "coverage {coverage} out of range");
    let target =
        (((coverage * f64::from(width) * f64::from(height)).round() as u64).max(1))
            .min(u64::from(width - 2) * u64::from(height - 2));
    const STEPS: [(i64, i64); 8] =
        [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];
    let mut mask = InpaintMask::all_known(width, height);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut count = 0u64;
    while count < target {
        let mut x = 1 + (rng.next_u64() % u64::from(width - 2)) as u32;
        let mut y = 1 + (rng.next_u64() % u64::from(height - 2)) as u32;
        for _ in 0..u64::from(width.max(height)) {
            if !mask.is_unknown(x, y) {
                mask.set_unknown(x, y, true);
                count += 1;
                if count >= target {
                    break;
                }
            }
            let (dx, dy) = STEPS[(rng.next_u64() % 8) as usize];
            x = (i64::from(x) + dx).clamp(1, i64::from(width) - 2) as u32;
            y = (i64::from(y) + dy).clamp(1, i64::from(height) - 2) as u32;
        }
    }
    mask
}

/// Copy of `image` with every masked pixel overwritten by `value`.
pub fn corrupted(image: &GrayImage, mask: &InpaintMask, value: f64) -> GrayImage {
    let mut damaged = image.clone();
    for y in 0..image.height() {
        for x in 0..image.width() {
            if mask.is_unknown(x, y) {
                damaged.set(x, y, value);
            }
        }
    }
    damaged
}
