//! Grayscale image and mask I/O plus patch sampling.
//!
//! Images are held as row-major `f64` buffers in the nominal range
//! `[0, 255]`. Algorithms are free to produce intermediate values outside
//! that range; pixels are clamped and rounded (half away from zero) only
//! when an image is written to disk.
//!
//! Two file formats are supported, dispatched on the file extension:
//!
//! - **`.pgm`** — binary PGM (`P5`), parsed and written directly. Any maxval
//!   in `1..=255` is accepted on load and sample bytes are used as-is (no
//!   rescaling); files are always written with maxval 255. ASCII (`P2`) and
//!   color (`P6`) files are rejected.
//! - **`.png`** — decoded and encoded via the `image` crate; only 8-bit
//!   grayscale (Luma8) PNGs are accepted.
//!
//! Masks mark the pixels an inpainting run must fill in. On disk a mask is
//! just a grayscale image: any pixel at or above a threshold (128 by
//! default) counts as unknown.

pub mod metrics;

pub use metrics::{psnr, ssim};

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use thiserror::Error;

/// Mask pixels at or above this gray level are treated as unknown.
pub const DEFAULT_MASK_THRESHOLD: u8 = 128;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("png error: {0}")]
    Png(#[from] image::ImageError),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("unrecognized file extension {0:?}; expected .pgm or .png")]
    UnknownExtension(String),
    #[error("malformed image header: {0}")]
    MalformedHeader(String),
    #[error("unsupported PGM maxval {0}; only 1..=255 is supported")]
    UnsupportedMaxval(u32),
    #[error("image data truncated: expected {expected} raster bytes, found {got}")]
    TruncatedData { expected: usize, got: usize },
    #[error("buffer length {got} does not match {width}x{height} image")]
    BadBufferLength { width: u32, height: u32, got: usize },
    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("metric region contains no unknown pixels")]
    EmptyRegion,
    #[error("image {width}x{height} is smaller than the {min}x{min} metric window")]
    ImageTooSmall { width: u32, height: u32, min: u32 },
    #[error("invalid patch request: {0}")]
    InvalidPatchRequest(String),
}

/// Row-major grayscale image with `f64` pixels.
#[derive(Debug, Clone)]
pub struct GrayImage {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, data: Vec<f64>) -> Result<Self, ImageIoError> {
        if data.len() != (width as usize) * (height as usize) {
            return Err(ImageIoError::BadBufferLength { width, height, got: data.len() });
        }
        Ok(Self { width, height, data })
    }

    /// Image filled with a single gray value.
    pub fn constant(width: u32, height: u32, value: f64) -> Self {
        Self { width, height, data: vec![value; (width as usize) * (height as usize)] }
    }

    /// Builds an image pixel by pixel from `f(x, y)`.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> f64) -> Self {
        let mut data = Vec::with_capacity((width as usize) * (height as usize));
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn idx(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        (y as usize) * (self.width as usize) + (x as usize)
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[self.idx(x, y)]
    }

    pub fn set(&mut self, x: u32, y: u32, value: f64) {
        let i = self.idx(x, y);
        self.data[i] = value;
    }

    /// Pixels clamped to `[0, 255]` and rounded half away from zero, as
    /// written to disk.
    pub fn to_u8_pixels(&self) -> Vec<u8> {
        self.data.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect()
    }
}

/// Set of pixels an inpainting run treats as unknown.
#[derive(Debug, Clone)]
pub struct InpaintMask {
    width: u32,
    height: u32,
    unknown: Vec<bool>,
}

impl InpaintMask {
    pub fn new(width: u32, height: u32, unknown: Vec<bool>) -> Result<Self, ImageIoError> {
        if unknown.len() != (width as usize) * (height as usize) {
            return Err(ImageIoError::BadBufferLength { width, height, got: unknown.len() });
        }
        Ok(Self { width, height, unknown })
    }

    /// All-known mask of the given size.
    pub fn all_known(width: u32, height: u32) -> Self {
        Self { width, height, unknown: vec![false; (width as usize) * (height as usize)] }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn unknown(&self) -> &[bool] {
        &self.unknown
    }

    pub fn is_unknown(&self, x: u32, y: u32) -> bool {
        debug_assert!(x < self.width && y < self.height);
        self.unknown[(y as usize) * (self.width as usize) + (x as usize)]
    }

    pub fn set_unknown(&mut self, x: u32, y: u32, value: bool) {
        debug_assert!(x < self.width && y < self.height);
        self.unknown[(y as usize) * (self.width as usize) + (x as usize)] = value;
    }

    pub fn unknown_count(&self) -> usize {
        self.unknown.iter().filter(|&&u| u).count()
    }

    /// Mask rendered as an image (255 = unknown, 0 = known), for saving.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.unknown.iter().map(|&u| if u { 255.0 } else { 0.0 }).collect(),
        }
    }
}

/// Loads a grayscale image, dispatching on the file extension.
pub fn load(path: &Path) -> Result<GrayImage, ImageIoError> {
    match extension_of(path)?.as_str() {
        "pgm" => parse_pgm(&std::fs::read(path)?),
        "png" => load_png(path),
        ext => Err(ImageIoError::UnknownExtension(ext.to_string())),
    }
}

/// Saves a grayscale image, dispatching on the file extension. Pixels are
/// clamped to `[0, 255]` and rounded half away from zero.
pub fn save(path: &Path, image: &GrayImage) -> Result<(), ImageIoError> {
    match extension_of(path)?.as_str() {
        "pgm" => {
            let mut bytes =
                format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
            bytes.extend_from_slice(&image.to_u8_pixels());
            std::fs::write(path, bytes)?;
            Ok(())
        }
        "png" => {
            image::save_buffer(
                path,
                &image.to_u8_pixels(),
                image.width,
                image.height,
                image::ExtendedColorType::L8,
            )?;
            Ok(())
        }
        ext => Err(ImageIoError::UnknownExtension(ext.to_string())),
    }
}

/// Loads a mask image: pixels at or above `threshold` are unknown.
pub fn load_mask(path: &Path, threshold: u8) -> Result<InpaintMask, ImageIoError> {
    let img = load(path)?;
    let unknown = img.data.iter().map(|&v| v >= threshold as f64).collect();
    Ok(InpaintMask { width: img.width, height: img.height, unknown })
}

/// Samples `count` square patches of side `patch_size`, uniformly over the
/// fully-inside top-left corners, with replacement.
///
/// Corner positions are indexed row-major and drawn with a ChaCha stream
/// seeded by `seed` (`next_u64` modulo the number of positions), so a given
/// `(image, patch_size, count, seed)` always yields the same patches. Each
/// patch is returned row-major.
pub fn extract_patches(
    image: &GrayImage,
    patch_size: u32,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, ImageIoError> {
    if patch_size == 0 {
        return Err(ImageIoError::InvalidPatchRequest("patch size must be positive".into()));
    }
    if image.width < patch_size || image.height < patch_size {
        return Err(ImageIoError::InvalidPatchRequest(format!(
            "{}x{} image cannot fit a {patch_size}x{patch_size} patch",
            image.width, image.height
        )));
    }
    let cols = (image.width - patch_size + 1) as u64;
    let rows = (image.height - patch_size + 1) as u64;
    let positions = cols * rows;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut patches = Vec::with_capacity(count);
    for _ in 0..count {
        let pos = rng.next_u64() % positions;
        let x0 = (pos % cols) as u32;
        let y0 = (pos / cols) as u32;
        let mut patch = Vec::with_capacity((patch_size as usize) * (patch_size as usize));
        for dy in 0..patch_size {
            for dx in 0..patch_size {
                patch.push(image.get(x0 + dx, y0 + dy));
            }
        }
        patches.push(patch);
    }
    Ok(patches)
}

fn extension_of(path: &Path) -> Result<String, ImageIoError> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .ok_or_else(|| ImageIoError::UnknownExtension(path.display().to_string()))
}

fn load_png(path: &Path) -> Result<GrayImage, ImageIoError> {
    let dynimg = image::ImageReader::open(path)?.decode()?;
    match dynimg {
        image::DynamicImage::ImageLuma8(buf) => {
            let (width, height) = buf.dimensions();
            let data = buf.into_raw().into_iter().map(f64::from).collect();
            Ok(GrayImage { width, height, data })
        }
        other => Err(ImageIoError::UnsupportedFormat(format!(
            "PNG must be 8-bit grayscale (Luma8), got {other:?}"
        ))),
    }
}

/// Parses a binary PGM (`P5`) byte buffer. Header comments (`#` through end
/// of line) are allowed between tokens; exactly one whitespace byte
/// separates the maxval from the raster.
fn parse_pgm(bytes: &[u8]) -> Result<GrayImage, ImageIoError> {
    let mut pos = 0usize;
    let magic = next_header_token(bytes, &mut pos)?;
    match magic {
        b"P5" => {}
        b"P2" => {
            return Err(ImageIoError::UnsupportedFormat(
                "ASCII PGM (P2); only binary P5 is supported".into(),
            ))
        }
        b"P6" => {
            return Err(ImageIoError::UnsupportedFormat(
                "PPM (P6) is color; only binary grayscale P5 is supported".into(),
            ))
        }
        other => {
            return Err(ImageIoError::MalformedHeader(format!(
                "unrecognized magic {:?}",
                String::from_utf8_lossy(other)
            )))
        }
    }
    let width = parse_header_number(bytes, &mut pos, "width")?;
    let height = parse_header_number(bytes, &mut pos, "height")?;
    let maxval = parse_header_number(bytes, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(ImageIoError::MalformedHeader("image dimensions must be positive".into()));
    }
    if !(1..=255).contains(&maxval) {
        return Err(ImageIoError::UnsupportedMaxval(maxval));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => {
            return Err(ImageIoError::MalformedHeader(
                "expected a single whitespace byte after maxval".into(),
            ))
        }
    }
    let expected = (width as usize) * (height as usize);
    let available = bytes.len().saturating_sub(pos);
    if available < expected {
        return Err(ImageIoError::TruncatedData { expected, got: available });
    }
    let data = bytes[pos..pos + expected].iter().map(|&b| f64::from(b)).collect();
    Ok(GrayImage { width, height, data })
}

fn next_header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8], ImageIoError> {
    loop {
        match bytes.get(*pos) {
            None => return Err(ImageIoError::MalformedHeader("unexpected end of header".into())),
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while let Some(&c) = bytes.get(*pos) {
                    *pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            }
            Some(_) => break,
        }
    }
    let start = *pos;
    while let Some(b) = bytes.get(*pos) {
        if b.is_ascii_whitespace() {
            break;
        }
        *pos += 1;
    }
    Ok(&bytes[start..*pos])
}

fn parse_header_number(
    bytes: &[u8],
    pos: &mut usize,
    name: &str,
) -> Result<u32, ImageIoError> {
    let token = next_header_token(bytes, pos)?;
    std::str::from_utf8(token)
        .ok()
        .and_then(|s| s.parse::<u32>().ok())
        .ok_or_else(|| {
            ImageIoError::MalformedHeader(format!(
                "invalid {name} field {:?}",
                String::from_utf8_lossy(token)
            ))
        })
}
