//! Image decoding and the preprocessing/augmentation operators.
//!
//! All operators are pure functions over 8-bit row-major images.

use std::collections::VecDeque;
use std::io::Cursor;

use image::{ImageFormat, ImageReader};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::nnx::Tensor;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("unsupported image format (JPEG and PNG accepted)")]
    UnsupportedFormat,
    #[error("corrupt image: {0}")]
    CorruptImage(String),
    #[error("expected {expected} channel(s), image has {found}")]
    WrongChannelCount { expected: u8, found: u8 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("normalization std has a zero component")]
    ZeroStd,
    #[error("invalid image: {0}")]
    Invalid(String),
    #[error("encode failed: {0}")]
    Encode(String),
}

/// 8-bit image, 1 or 3 interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Invalid(format!("{width}x{height} has a zero extent")));
        }
        if channels != 1 && channels != 3 {
            return Err(ImageError::Invalid(format!("{channels} channels; 1 or 3 supported")));
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(ImageError::Invalid(format!(
                "{width}x{height}x{channels} needs {expected} samples, got {}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn_rgb(width: u32, height: u32, f: impl Fn(u32, u32) -> [u8; 3]) -> Result<Self, ImageError> {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, 3, data)
    }

    pub fn from_fn_gray(width: u32, height: u32, f: impl Fn(u32, u32) -> u8) -> Result<Self, ImageError> {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, 1, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let c = self.channels as usize;
        let i = (y as usize * self.width as usize + x as usize) * c;
        &self.data[i..i + c]
    }

    fn require_channels(&self, expected: u8) -> Result<(), ImageError> {
        if self.channels != expected {
            return Err(ImageError::WrongChannelCount {
                expected,
                found: self.channels,
            });
        }
        Ok(())
    }
}

/// Boolean per-pixel mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

/// Encoded formats the pipeline accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodedFormat {
    Jpeg,
    Png,
}

impl EncodedFormat {
    pub fn content_type(self) -> &'static str {
        match self {
            EncodedFormat::Jpeg => "image/jpeg",
            EncodedFormat::Png => "image/png",
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            EncodedFormat::Jpeg => "jpg",
            EncodedFormat::Png => "png",
        }
    }
}

/// Identifies JPEG or PNG from magic bytes.
pub fn sniff_format(bytes: &[u8]) -> Option<EncodedFormat> {
    if bytes.starts_with(&[0xFF, 0xD8, 0xFF]) {
        Some(EncodedFormat::Jpeg)
    } else if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        Some(EncodedFormat::Png)
    } else {
        None
    }
}

/// Decodes JPEG or PNG bytes into a 3-channel image at native size.
pub fn decode(bytes: &[u8]) -> Result<Image, ImageError> {
    let format = sniff_format(bytes).ok_or(ImageError::UnsupportedFormat)?;
    if format == EncodedFormat::Jpeg && !has_jpeg_end_marker(bytes) {
        return Err(ImageError::CorruptImage("JPEG stream has no end-of-image marker".into()));
    }
    let image_format = match format {
        EncodedFormat::Jpeg => ImageFormat::Jpeg,
        EncodedFormat::Png => ImageFormat::Png,
    };
    let mut reader = ImageReader::new(Cursor::new(bytes));
    reader.set_format(image_format);
    let decoded = reader
        .decode()
        .map_err(|e| ImageError::CorruptImage(e.to_string()))?
        .into_rgb8();
    let (w, h) = decoded.dimensions();
    Image::new(w, h, 3, decoded.into_raw())
}

// The JPEG decoder happily pads a cut-off entropy segment with grey, so a
// missing EOI is the reliable truncation signal.
fn has_jpeg_end_marker(bytes: &[u8]) -> bool {
    let tail = bytes.len().saturating_sub(64);
    bytes[tail..].windows(2).any(|w| w == [0xFF, 0xD9])
}

pub fn decode_and_resize(bytes: &[u8], target_w: u32, target_h: u32) -> Result<Image, ImageError> {
    resize_bilinear(&decode(bytes)?, target_w, target_h)
}

/// Bilinear resampling with half-pixel centres and edge clamping.
pub fn resize_bilinear(image: &Image, target_w: u32, target_h: u32) -> Result<Image, ImageError> {
    if target_w == 0 || target_h == 0 {
        return Err(ImageError::DimensionMismatch(format!("target {target_w}x{target_h}")));
    }
    if (target_w, target_h) == (image.width, image.height) {
        return Ok(image.clone());
    }
    let c = image.channels as usize;
    let sx = image.width as f32 / target_w as f32;
    let sy = image.height as f32 / target_h as f32;
    let max_x = image.width as f32 - 1.0;
    let max_y = image.height as f32 - 1.0;
    let mut data = Vec::with_capacity(target_w as usize * target_h as usize * c);
    for y in 0..target_h {
        let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, max_y);
        let y0 = fy.floor() as u32;
        let y1 = (y0 + 1).min(image.height - 1);
        let wy = fy - y0 as f32;
        for x in 0..target_w {
            let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, max_x);
            let x0 = fx.floor() as u32;
            let x1 = (x0 + 1).min(image.width - 1);
            let wx = fx - x0 as f32;
            let (p00, p10) = (image.pixel(x0, y0), image.pixel(x1, y0));
            let (p01, p11) = (image.pixel(x0, y1), image.pixel(x1, y1));
            for ch in 0..c {
                let top = p00[ch] as f32 * (1.0 - wx) + p10[ch] as f32 * wx;
                let bottom = p01[ch] as f32 * (1.0 - wx) + p11[ch] as f32 * wx;
                let v = top * (1.0 - wy) + bottom * wy;
                data.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Image::new(target_w, target_h, image.channels, data)
}

/// ITU-R BT.601 luma, rounded half up.
pub fn to_grayscale(image: &Image) -> Result<Image, ImageError> {
    image.require_channels(3)?;
    let data = image
        .data
        .chunks_exact(3)
        .map(|p| ((299 * p[0] as u32 + 587 * p[1] as u32 + 114 * p[2] as u32 + 500) / 1000) as u8)
        .collect();
    Image::new(image.width, image.height, 1, data)
}

/// Replicates a single channel into three.
pub fn gray_to_rgb(image: &Image) -> Result<Image, ImageError> {
    image.require_channels(1)?;
    let data = image.data.iter().flat_map(|&v| [v, v, v]).collect();
    Image::new(image.width, image.height, 3, data)
}

/// Corner-seeded flood fill. A pixel is background when it is 4-connected to
/// a corner through pixels whose every channel lies within `tolerance` of
/// that corner's colour. Background pixels are painted white.
pub fn remove_background(image: &Image, tolerance: u8) -> Result<(Image, Mask), ImageError> {
    let (w, h) = (image.width as usize, image.height as usize);
    let c = image.channels as usize;
    let mut mask = vec![false; w * h];
    let corners = [(0, 0), (w - 1, 0), (0, h - 1), (w - 1, h - 1)];
    for &(cx, cy) in &corners {
        let seed = image.pixel(cx as u32, cy as u32).to_vec();
        let matches = |i: usize| {
            image.data[i * c..(i + 1) * c]
                .iter()
                .zip(&seed)
                .all(|(&a, &b)| a.abs_diff(b) <= tolerance)
        };
        let mut seen = vec![false; w * h];
        let mut queue = VecDeque::from([cy * w + cx]);
        seen[cy * w + cx] = true;
        while let Some(i) = queue.pop_front() {
            mask[i] = true;
            let (x, y) = (i % w, i / w);
            let neighbours = [
                (x > 0).then(|| i - 1),
                (x + 1 < w).then(|| i + 1),
                (y > 0).then(|| i - w),
                (y + 1 < h).then(|| i + w),
            ];
            for n in neighbours.into_iter().flatten() {
                if !seen[n] && matches(n) {
                    seen[n] = true;
                    queue.push_back(n);
                }
            }
        }
    }
    let mut data = image.data.clone();
    for (i, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        data[i * c..(i + 1) * c].fill(255);
    }
    Ok((
        Image::new(image.width, image.height, image.channels, data)?,
        Mask {
            width: image.width,
            height: image.height,
            bits: mask,
        },
    ))
}

/// Sobel gradient magnitude of a grayscale image with replicated borders.
pub fn gradient_magnitude(image: &Image) -> Result<Vec<f32>, ImageError> {
    image.require_channels(1)?;
    let (w, h) = (image.width as i64, image.height as i64);
    let at = |x: i64, y: i64| image.data[(y.clamp(0, h - 1) * w + x.clamp(0, w - 1)) as usize] as f32;
    let mut out = Vec::with_capacity((w * h) as usize);
    for y in 0..h {
        for x in 0..w {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    Ok(out)
}

/// Binary edge map: 255 where the Sobel magnitude is at least `threshold`.
pub fn extract_feature_lines(image: &Image, threshold: f32) -> Result<Image, ImageError> {
    if threshold.is_nan() || threshold < 0.0 {
        return Err(ImageError::Invalid(format!("threshold must be >= 0, got {threshold}")));
    }
    let data = gradient_magnitude(image)?
        .into_iter()
        .map(|m| if m >= threshold { 255 } else { 0 })
        .collect();
    Image::new(image.width, image.height, 1, data)
}

/// Per-channel normalization applied when building model input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

/// Channel-first `(3, H, W)` tensor of `(sample / 255 - mean) / std`.
pub fn to_model_input(image: &Image, norm: &Normalization, input_size: u32) -> Result<Tensor, ImageError> {
    image.require_channels(3)?;
    if image.width != input_size || image.height != input_size {
        return Err(ImageError::DimensionMismatch(format!(
            "model input is {input_size}x{input_size}, image is {}x{}",
            image.width, image.height
        )));
    }
    if norm.std.contains(&0.0) {
        return Err(ImageError::ZeroStd);
    }
    let plane = (image.width * image.height) as usize;
    let mut out = vec![0.0f32; 3 * plane];
    for (i, px) in image.data.chunks_exact(3).enumerate() {
        for ch in 0..3 {
            out[ch * plane + i] = (px[ch] as f32 / 255.0 - norm.mean[ch]) / norm.std[ch];
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(ImageError::Invalid("normalization produced non-finite values".into()));
    }
    Tensor::new(vec![3, image.height as usize, image.width as usize], out)
        .map_err(|e| ImageError::DimensionMismatch(e.to_string()))
}

/// Parameters drawn for one augmentation pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub background_tolerance: u8,
    pub line_threshold: f32,
}

impl AugmentParams {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            background_tolerance: rng.random_range(8..=24),
            line_threshold: rng.random_range(64..=160) as f32,
        }
    }
}

/// The original followed by its background-removed, grayscale and
/// feature-line variants.
pub fn augment(image: &Image, seed: u64) -> Result<Vec<Image>, ImageError> {
    image.require_channels(3)?;
    let params = AugmentParams::from_seed(seed);
    let (no_background, _) = remove_background(image, params.background_tolerance)?;
    let gray = to_grayscale(image)?;
    let lines = extract_feature_lines(&gray, params.line_threshold)?;
    Ok(vec![image.clone(), no_background, gray, lines])
}

pub fn encode_png(image: &Image) -> Result<Vec<u8>, ImageError> {
    let color = if image.channels == 3 {
        image::ExtendedColorType::Rgb8
    } else {
        image::ExtendedColorType::L8
    };
    let mut out = Vec::new();
    image::ImageEncoder::write_image(
        image::codecs::png::PngEncoder::new(&mut out),
        &image.data,
        image.width,
        image.height,
        color,
    )
    .map_err(|e| ImageError::Encode(e.to_string()))?;
    Ok(out)
}

pub fn encode_jpeg(image: &Image, quality: u8) -> Result<Vec<u8>, ImageError> {
    let color = if image.channels == 3 {
        image::ExtendedColorType::Rgb8
    } else {
        image::ExtendedColorType::L8
    };
    let mut out = Vec::new();
    image::ImageEncoder::write_image(
        image::codecs::jpeg::JpegEncoder::new_with_quality(&mut out, quality),
        &image.data,
        image.width,
        image.height,
        color,
    )
    .map_err(|e| ImageError::Encode(e.to_string()))?;
    Ok(out)
}

/// Strokes 1-pixel rectangle outlines `(x0, y0, x1, y1)` (exclusive right
/// and bottom edges) onto a copy of a 3-channel image.
pub fn draw_rectangles(image: &Image, rects: &[(u32, u32, u32, u32)], color: [u8; 3]) -> Result<Image, ImageError> {
    image.require_channels(3)?;
    let mut data = image.data.clone();
    let (w, h) = (image.width, image.height);
    let mut put = |x: u32, y: u32| {
        if x < w && y < h {
            let i = (y as usize * w as usize + x as usize) * 3;
            data[i..i + 3].copy_from_slice(&color);
        }
    };
    for &(x0, y0, x1, y1) in rects {
        if x1 <= x0 || y1 <= y0 {
            continue;
        }
        for x in x0..x1 {
            put(x, y0);
            put(x, y1 - 1);
        }
        for y in y0..y1 {
            put(x0, y);
            put(x1 - 1, y);
        }
    }
    Image::new(w, h, 3, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(w: u32, h: u32) -> Image {
        Image::from_fn_rgb(w, h, |x, y| if (x + y) % 2 == 0 { [0, 0, 0] } else { [255, 255, 255] }).unwrap()
    }

    #[test]
    fn image_invariants() {
        assert!(Image::new(0, 3, 3, vec![]).is_err());
        assert!(Image::new(2, 2, 2, vec![0; 8]).is_err());
        assert!(Image::new(2, 2, 3, vec![0; 11]).is_err());
    }

    #[test]
    fn png_decode_same_size_is_identity() {
        let img = Image::from_fn_rgb(224, 224, |x, y| [(x % 256) as u8, (y % 256) as u8, ((x * y) % 251) as u8]).unwrap();
        let png = encode_png(&img).unwrap();
        assert_eq!(decode_and_resize(&png, 224, 224).unwrap(), img);
    }

    #[test]
    fn checkerboard_averages_to_mid_gray() {
        let out = resize_bilinear(&checker(2, 2), 1, 1).unwrap();
        // (0 + 255 + 255 + 0) / 4 = 127.5, rounded half away from zero
        assert_eq!(out.data(), &[128, 128, 128]);
    }

    #[test]
    fn resize_changes_shape_and_keeps_constant() {
        let img = Image::from_fn_rgb(7, 5, |_, _| [10, 20, 30]).unwrap();
        let out = resize_bilinear(&img, 16, 3).unwrap();
        assert_eq!((out.width(), out.height(), out.channels()), (16, 3, 3));
        assert!(out.data().chunks(3).all(|p| p == [10, 20, 30]));
    }

    #[test]
    fn truncated_jpeg_is_corrupt() {
        let img = checker(32, 32);
        let jpg = encode_jpeg(&img, 90).unwrap();
        assert!(decode(&jpg).is_ok());
        let cut = &jpg[..jpg.len() / 2];
        assert!(matches!(decode(cut), Err(ImageError::CorruptImage(_))));
    }

    #[test]
    fn truncated_png_is_corrupt() {
        let png = encode_png(&checker(32, 32)).unwrap();
        assert!(matches!(decode(&png[..png.len() - 20]), Err(ImageError::CorruptImage(_))));
    }

    #[test]
    fn text_is_unsupported() {
        assert!(matches!(decode(b"hello, world"), Err(ImageError::UnsupportedFormat)));
        assert!(matches!(decode(b""), Err(ImageError::UnsupportedFormat)));
    }

    #[test]
    fn grayscale_values() {
        let img = Image::new(3, 1, 3, vec![255, 255, 255, 255, 0, 0, 0, 0, 0]).unwrap();
        assert_eq!(to_grayscale(&img).unwrap().data(), &[255, 76, 0]);
        let gray = to_grayscale(&img).unwrap();
        assert!(matches!(
            to_grayscale(&gray),
            Err(ImageError::WrongChannelCount { expected: 3, found: 1 })
        ));
    }

    #[test]
    fn uniform_image_is_all_background() {
        let img = Image::from_fn_rgb(9, 6, |_, _| [40, 90, 200]).unwrap();
        let (out, mask) = remove_background(&img, 0).unwrap();
        assert_eq!(mask.count(), 54);
        assert!(out.data().iter().all(|&v| v == 255));
    }

    #[test]
    fn zero_tolerance_takes_only_exact_matches() {
        // Noisy background: only pixels exactly equal to the corner colour and
        // connected to it are taken.
        let img = Image::from_fn_rgb(4, 1, |x, _| match x {
            0 => [100, 100, 100],
            1 => [100, 100, 100],
            2 => [101, 100, 100],
            _ => [100, 100, 100],
        })
        .unwrap();
        let (_, mask) = remove_background(&img, 0).unwrap();
        assert_eq!(mask.bits, vec![true, true, false, true]);
        let (_, loose) = remove_background(&img, 1).unwrap();
        assert_eq!(loose.count(), 4);
    }

    #[test]
    fn edges_uniform_and_threshold_zero() {
        let img = Image::from_fn_gray(6, 6, |_, _| 77).unwrap();
        assert!(extract_feature_lines(&img, 0.5).unwrap().data().iter().all(|&v| v == 0));
        assert!(extract_feature_lines(&img, 0.0).unwrap().data().iter().all(|&v| v == 255));
        assert!(extract_feature_lines(&img, -1.0).is_err());
        let rgb = Image::from_fn_rgb(2, 2, |_, _| [0, 0, 0]).unwrap();
        assert!(matches!(
            extract_feature_lines(&rgb, 1.0),
            Err(ImageError::WrongChannelCount { .. })
        ));
    }

    #[test]
    fn model_input_values() {
        let white = Image::from_fn_rgb(4, 4, |_, _| [255; 3]).unwrap();
        let unit = Normalization {
            mean: [0.0; 3],
            std: [1.0; 3],
        };
        let t = to_model_input(&white, &unit, 4).unwrap();
        assert_eq!(t.shape(), &[3, 4, 4]);
        assert!(t.data().iter().all(|&v| v == 1.0));

        let gray = Image::from_fn_rgb(4, 4, |_, _| [128; 3]).unwrap();
        let half = Normalization {
            mean: [0.5; 3],
            std: [0.5; 3],
        };
        let t = to_model_input(&gray, &half, 4).unwrap();
        assert!(t.data().iter().all(|&v| (v - 0.003_921_57).abs() < 1e-6));

        let zero = Normalization {
            mean: [0.0; 3],
            std: [1.0, 0.0, 1.0],
        };
        assert!(matches!(to_model_input(&gray, &zero, 4), Err(ImageError::ZeroStd)));
        assert!(matches!(
            to_model_input(&gray, &unit, 8),
            Err(ImageError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn augment_variants() {
        let img = Image::from_fn_rgb(20, 20, |x, y| {
            if (5..15).contains(&x) && (5..15).contains(&y) {
                [30, 40, 50]
            } else {
                [230, 230, 225]
            }
        })
        .unwrap();
        let a = augment(&img, 42).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(a[0], img);
        assert_eq!(a[2], to_grayscale(&img).unwrap());
        assert_eq!(a, augment(&img, 42).unwrap());
    }

    #[test]
    fn rectangles_are_drawn() {
        let img = Image::from_fn_rgb(10, 10, |_, _| [0; 3]).unwrap();
        let out = draw_rectangles(&img, &[(2, 2, 6, 6)], [255, 255, 0]).unwrap();
        assert_eq!(out.pixel(2, 2), &[255, 255, 0]);
        assert_eq!(out.pixel(5, 5), &[255, 255, 0]);
        assert_eq!(out.pixel(3, 3), &[0, 0, 0]);
        assert_eq!(out.pixel(6, 6), &[0, 0, 0]);
    }

    #[test]
    fn sniffing() {
        assert_eq!(sniff_format(&[0xFF, 0xD8, 0xFF, 0xE0]), Some(EncodedFormat::Jpeg));
        assert_eq!(sniff_format(b"\x89PNG\r\n\x1a\n...."), Some(EncodedFormat::Png));
        assert_eq!(sniff_format(b"GIF89a"), None);
    }
}
