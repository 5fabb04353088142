//! Image comparison metrics: peak signal-to-noise ratio and structural
//! similarity.

use super::{GrayImage, ImageIoError, InpaintMask};

/// Side length of the SSIM window.
const SSIM_WINDOW: u32 = 11;
/// Standard deviation of the SSIM window's Gaussian weighting.
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
/// Dynamic range of 8-bit gray levels.
const DYNAMIC_RANGE: f64 = 255.0;

/// Peak signal-to-noise ratio in decibels, `10·log10(255² / MSE)`.
///
/// With `region = None` the mean squared error runs over every pixel; with a
/// mask it runs over the mask's unknown pixels only. Identical inputs (zero
/// MSE) yield `f64::INFINITY`.
pub fn psnr(
    reference: &GrayImage,
    test: &GrayImage,
    region: Option<&InpaintMask>,
) -> Result<f64, ImageIoError> {
    if reference.width() != test.width() || reference.height() != test.height() {
        return Err(ImageIoError::DimensionMismatch(
            reference.width(),
            reference.height(),
            test.width(),
            test.height(),
        ));
    }
    if let Some(mask) = region {
        if mask.width() != reference.width() || mask.height() != reference.height() {
            return Err(ImageIoError::DimensionMismatch(
                reference.width(),
                reference.height(),
                mask.width(),
                mask.height(),
            ));
        }
    }
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    for (i, (&r, &t)) in reference.data().iter().zip(test.data()).enumerate() {
        if let Some(mask) = region {
            if !mask.unknown()[i] {
                continue;
            }
        }
        let d = r - t;
        sum_sq += d * d;
        count += 1;
    }
    if count == 0 {
        return Err(ImageIoError::EmptyRegion);
    }
    let mse = sum_sq / count as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (DYNAMIC_RANGE * DYNAMIC_RANGE / mse).log10())
}

/// Mean structural similarity over all fully-inside 11×11 windows
/// (Gaussian-weighted, σ = 1.5), with the conventional stabilizers
/// `C1 = (K1·L)²`, `C2 = (K2·L)²`, `K1 = 0.01`, `K2 = 0.03`, `L = 255`.
///
/// No padding is applied, so both images must be at least 11×11. Identical
/// images score exactly 1.0.
pub fn ssim(reference: &GrayImage, test: &GrayImage) -> Result<f64, ImageIoError> {
    if reference.width() != test.width() || reference.height() != test.height() {
        return Err(ImageIoError::DimensionMismatch(
            reference.width(),
            reference.height(),
            test.width(),
            test.height(),
        ));
    }
    let (w, h) = (reference.width(), reference.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(ImageIoError::ImageTooSmall { width: w, height: h, min: SSIM_WINDOW });
    }
    let kernel = gaussian_window();
    let c1 = (SSIM_K1 * DYNAMIC_RANGE).powi(2);
    let c2 = (SSIM_K2 * DYNAMIC_RANGE).powi(2);

    let mut total = 0.0;
    let mut windows = 0u64;
    for y0 in 0..=(h - SSIM_WINDOW) {
        for x0 in 0..=(w - SSIM_WINDOW) {
            let mut mean_r = 0.0;
            let mut mean_t = 0.0;
            let mut sq_r = 0.0;
            let mut sq_t = 0.0;
            let mut cross = 0.0;
            for dy in 0..SSIM_WINDOW {
                for dx in 0..SSIM_WINDOW {
                    let wgt = kernel[(dy * SSIM_WINDOW + dx) as usize];
                    let r = reference.get(x0 + dx, y0 + dy);
                    let t = test.get(x0 + dx, y0 + dy);
                    mean_r += wgt * r;
                    mean_t += wgt * t;
                    sq_r += wgt * r * r;
                    sq_t += wgt * t * t;
                    cross += wgt * r * t;
                }
            }
            let var_r = sq_r - mean_r * mean_r;
            let var_t = sq_t - mean_t * mean_t;
            let cov = cross - mean_r * mean_t;
            let numerator = (2.0 * mean_r * mean_t + c1) * (2.0 * cov + c2);
            let denominator = (mean_r * mean_r + mean_t * mean_t + c1) * (var_r + var_t + c2);
            total += numerator / denominator;
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}

/// Normalized 11×11 Gaussian weights, row-major.
fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as i64;
    let mut kernel = Vec::with_capacity((SSIM_WINDOW * SSIM_WINDOW) as usize);
    for y in 0..SSIM_WINDOW as i64 {
        for x in 0..SSIM_WINDOW as i64 {
            let dx = (x - half) as f64;
            let dy = (y - half) as f64;
            kernel.push((-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
        }
    }
    let sum: f64 = kernel.iter().sum();
    for w in &mut kernel {
        *w /= sum;
    }
    kernel
}
