//! Synthetic inpainting masks.
//!
//! All generators mark pixels only in the image interior (never the
//! outermost row or column, which the propagation engine rejects) and keep
//! marking until the requested number of unknown pixels is reached. Every
//! style is fully determined by its seed.

use mixbp::imageio::InpaintMask;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Visual character of a generated mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MaskStyle {
    /// Thin meandering scratches (random walks).
    Scratch,
    /// Rows of short text-like strokes.
    Text,
    /// Filled round blotches.
    Blob,
}

/// Generates a mask of the given style covering roughly `coverage` of the
/// image (exactly `round(coverage · width · height)` unknown pixels when
/// the interior has room for them). `coverage` must lie in `(0, 0.5]`.
pub fn make_mask(
    width: u32,
    height: u32,
    style: MaskStyle,
    coverage: f64,
    seed: u64,
) -> Result<InpaintMask, String> {
    if width < 3 || height < 3 {
        return Err(format!("image {width}x{height} has no interior to mask"));
    }
    if !(coverage > 0.0 && coverage <= 0.5) {
        return Err(format!("coverage must be in (0, 0.5], got {coverage}"));
    }
    let interior = u64::from(width - 2) * u64::from(height - 2);
    let mut target = ((coverage * f64::from(width) * f64::from(height)).round() as u64).max(1);
    if target > interior {
        log::warn!("coverage {coverage} exceeds the interior; masking all {interior} pixels");
        target = interior;
    }

    let mut mask = InpaintMask::all_known(width, height);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut count = 0u64;
    let mark = |mask: &mut InpaintMask, count: &mut u64, x: u32, y: u32| {
        if !mask.is_unknown(x, y) {
            mask.set_unknown(x, y, true);
            *count += 1;
        }
    };
    let rand_x = |rng: &mut ChaCha8Rng| 1 + (rng.next_u64() % u64::from(width - 2)) as u32;
    let rand_y = |rng: &mut ChaCha8Rng| 1 + (rng.next_u64() % u64::from(height - 2)) as u32;

    match style {
        MaskStyle::Scratch => {
            const STEPS: [(i64, i64); 8] =
                [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];
            while count < target {
                let mut x = rand_x(&mut rng);
                let mut y = rand_y(&mut rng);
                let length = u64::from(width.max(height));
                for _ in 0..length {
                    mark(&mut mask, &mut count, x, y);
                    if count >= target {
                        break;
                    }
                    let (dx, dy) = STEPS[(rng.next_u64() % 8) as usize];
                    x = (i64::from(x) + dx).clamp(1, i64::from(width) - 2) as u32;
                    y = (i64::from(y) + dy).clamp(1, i64::from(height) - 2) as u32;
                }
            }
        }
        MaskStyle::Text => {
            // Strokes laid out along evenly spaced "text lines".
            let line_pitch = 6u32;
            while count < target {
                let line = rand_y(&mut rng) / line_pitch;
                let y = (line * line_pitch + 2).clamp(1, height - 2);
                let x0 = rand_x(&mut rng);
                let horizontal = rng.next_u64() % 3 != 0;
                let len = 3 + (rng.next_u64() % 5) as u32;
                for step in 0..len {
                    let (x, yy) = if horizontal { (x0 + step, y) } else { (x0, y + step) };
                    if (1..=width - 2).contains(&x) && (1..=height - 2).contains(&yy) {
                        mark(&mut mask, &mut count, x, yy);
                        if count >= target {
                            break;
                        }
                    }
                }
            }
        }
        MaskStyle::Blob => {
            while count < target {
                let cx = i64::from(rand_x(&mut rng));
                let cy = i64::from(rand_y(&mut rng));
                let r = 1 + (rng.next_u64() % 3) as i64;
                'blob: for dy in -r..=r {
                    for dx in -r..=r {
                        if dx * dx + dy * dy > r * r {
                            continue;
                        }
                        let x = cx + dx;
                        let y = cy + dy;
                        if (1..=i64::from(width) - 2).contains(&x)
                            && (1..=i64::from(height) - 2).contains(&y)
                        {
                            mark(&mut mask, &mut count, x as u32, y as u32);
                            if count >= target {
                                break 'blob;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_hit_the_target_and_stay_interior() {
        for style in [MaskStyle::Scratch, MaskStyle::Text, MaskStyle::Blob] {
            let mask = make_mask(32, 24, style, 0.05, 7).unwrap();
            let target = (0.05f64 * 32.0 * 24.0).round() as u64;
            assert_eq!(mask.unknown_count() as u64, target, "style {style:?}");
            for y in 0..24u32 {
                for x in 0..32u32 {
                    if x == 0 || y == 0 || x == 31 || y == 23 {
                        assert!(!mask.is_unknown(x, y), "border pixel ({x},{y}) marked");
                    }
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let a = make_mask(20, 20, MaskStyle::Scratch, 0.1, 42).unwrap();
        let b = make_mask(20, 20, MaskStyle::Scratch, 0.1, 42).unwrap();
        let c = make_mask(20, 20, MaskStyle::Scratch, 0.1, 43).unwrap();
        assert_eq!(a.unknown(), b.unknown());
        assert_ne!(a.unknown(), c.unknown(), "different seeds should differ");
    }

    #[test]
    fn bad_parameters_are_rejected() {
        assert!(make_mask(2, 20, MaskStyle::Blob, 0.1, 0).is_err());
        assert!(make_mask(20, 20, MaskStyle::Blob, 0.0, 0).is_err());
        assert!(make_mask(20, 20, MaskStyle::Blob, 0.6, 0).is_err());
    }
}
