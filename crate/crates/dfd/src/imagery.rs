//! Image I/O, geometry, color conversion, standardization, and foreground
//! binarization.
//!
//! Images are row-major `f32` rasters in `[0, 1]` (until standardized) with
//! one or three channels. Masks are binary rasters with the same spatial
//! dimensions as the image they annotate. Decoding is limited to PNG and
//! binary PPM/PGM so round trips stay bit-exact; masks persist as 8-bit PGM
//! with values in `{0, 255}`.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

/// Per-channel mean used for standardization.
pub const STANDARDIZE_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
/// Per-channel standard deviation used for standardization.
pub const STANDARDIZE_STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Error)]
pub enum ImageryError {
    #[error("file not found: {0}")]
    NotFound(String),
    #[error("failed to decode '{path}': {reason}")]
    Decode { path: String, reason: String },
    #[error("failed to write '{path}': {reason}")]
    Encode { path: String, reason: String },
    #[error("invalid argument: {0}")]
    Argument(String),
}

pub type ImageryResult<T> = Result<T, ImageryError>;

/// A real-valued raster; one channel (grayscale) or three (RGB).
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Row-major, channel-interleaved: `data[(y * width + x) * channels + c]`.
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Maximum absolute difference to another raster of identical shape.
    pub fn max_abs_diff(&self, other: &Image) -> f32 {
        assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// A binary raster; values are exactly 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    /// Row-major: `data[y * width + x]`, each 0 or 1.
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn filled(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![1; height * width],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.data[y * self.width + x] = if v != 0 { 1 } else { 0 };
    }

    /// Number of set pixels.
    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }
}

/// Loads a PNG, PPM, or PGM image and scales 8-bit samples to `[0, 1]`.
pub fn load_image(path: &Path) -> ImageryResult<Image> {
    if !path.exists() {
        return Err(ImageryError::NotFound(path.display().to_string()));
    }
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    match ext.as_str() {
        "ppm" | "pgm" => load_pnm(path),
        _ => load_png(path),
    }
}

fn load_png(path: &Path) -> ImageryResult<Image> {
    let decode_err = |reason: String| ImageryError::Decode {
        path: path.display().to_string(),
        reason,
    };
    let dynimg = image::open(path).map_err(|e| decode_err(e.to_string()))?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    match dynimg {
        image::DynamicImage::ImageLuma8(buf) => {
            let data = buf.into_raw().iter().map(|&v| v as f32 / 255.0).collect();
            Ok(Image {
                height: h,
                width: w,
                channels: 1,
                data,
            })
        }
        other => {
            let buf = other.into_rgb8();
            let data = buf.into_raw().iter().map(|&v| v as f32 / 255.0).collect();
            Ok(Image {
                height: h,
                width: w,
                channels: 3,
                data,
            })
        }
    }
}

/// Binary PPM (P6) / PGM (P5), maxval 255.
fn load_pnm(path: &Path) -> ImageryResult<Image> {
    let decode_err = |reason: &str| ImageryError::Decode {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    let bytes = fs::read(path).map_err(|e| ImageryError::Decode {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Option<String> {
        // skip whitespace and comment lines
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return None;
        }
        Some(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token(&bytes).ok_or_else(|| decode_err("missing magic"))?;
    let channels = match magic.as_str() {
        "P6" => 3,
        "P5" => 1,
        _ => return Err(decode_err("unsupported PNM magic (want P5 or P6)")),
    };
    let width: usize = token(&bytes)
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| decode_err("bad width"))?;
    let height: usize = token(&bytes)
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| decode_err("bad height"))?;
    let maxval: usize = token(&bytes)
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| decode_err("bad maxval"))?;
    if maxval != 255 {
        return Err(decode_err("only maxval 255 supported"));
    }
    pos += 1; // single whitespace after maxval
    let need = width * height * channels;
    if bytes.len() < pos + need {
        return Err(decode_err("truncated pixel payload"));
    }
    let data = bytes[pos..pos + need]
        .iter()
        .map(|&v| v as f32 / 255.0)
        .collect();
    Ok(Image {
        height,
        width,
        channels,
        data,
    })
}

fn to_u8(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Writes `img` as 8-bit PNG (RGB or grayscale by channel count).
pub fn save_png(img: &Image, path: &Path) -> ImageryResult<()> {
    let encode_err = |reason: String| ImageryError::Encode {
        path: path.display().to_string(),
        reason,
    };
    let bytes: Vec<u8> = img.data.iter().map(|&v| to_u8(v)).collect();
    let (w, h) = (img.width as u32, img.height as u32);
    match img.channels {
        1 => image::GrayImage::from_raw(w, h, bytes)
            .ok_or_else(|| encode_err("buffer size mismatch".into()))?
            .save(path)
            .map_err(|e| encode_err(e.to_string())),
        3 => image::RgbImage::from_raw(w, h, bytes)
            .ok_or_else(|| encode_err("buffer size mismatch".into()))?
            .save(path)
            .map_err(|e| encode_err(e.to_string())),
        c => Err(ImageryError::Argument(format!(
            "cannot encode {c}-channel image"
        ))),
    }
}

/// Writes `img` as binary PPM (3-channel) or PGM (1-channel), maxval 255.
pub fn save_pnm(img: &Image, path: &Path) -> ImageryResult<()> {
    let magic = match img.channels {
        1 => "P5",
        3 => "P6",
        c => {
            return Err(ImageryError::Argument(format!(
                "cannot encode {c}-channel image"
            )))
        }
    };
    let mut out = Vec::with_capacity(img.data.len() + 32);
    write!(out, "{magic}\n{} {}\n255\n", img.width, img.height).unwrap();
    out.extend(img.data.iter().map(|&v| to_u8(v)));
    fs::write(path, out).map_err(|e| ImageryError::Encode {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Persists a mask as 8-bit PGM with values in `{0, 255}`.
pub fn save_mask(mask: &Mask, path: &Path) -> ImageryResult<()> {
    let mut out = Vec::with_capacity(mask.data.len() + 32);
    write!(out, "P5\n{} {}\n255\n", mask.width, mask.height).unwrap();
    out.extend(mask.data.iter().map(|&v| if v != 0 { 255u8 } else { 0 }));
    fs::write(path, out).map_err(|e| ImageryError::Encode {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Loads a mask from any supported image; nonzero pixels become 1.
pub fn load_mask(path: &Path) -> ImageryResult<Mask> {
    let img = load_image(path)?;
    let gray = if img.channels == 3 {
        to_grayscale(&img)
    } else {
        img
    };
    let data = gray.data.iter().map(|&v| (v > 0.5) as u8).collect();
    Ok(Mask {
        height: gray.height,
        width: gray.width,
        data,
    })
}

/// Bilinear sample with clamped half-pixel-center coordinates.
#[inline]
fn sample_bilinear(img: &Image, y: f32, x: f32, c: usize) -> f32 {
    let y = y.clamp(0.0, (img.height - 1) as f32);
    let x = x.clamp(0.0, (img.width - 1) as f32);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(img.height - 1);
    let x1 = (x0 + 1).min(img.width - 1);
    let fy = y - y0 as f32;
    let fx = x - x0 as f32;
    let top = img.get(y0, x0, c) * (1.0 - fx) + img.get(y0, x1, c) * fx;
    let bot = img.get(y1, x0, c) * (1.0 - fx) + img.get(y1, x1, c) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Bilinear resample to `h x w`. Identity dimensions return a bit-identical
/// copy. Source pixels are treated as half-pixel-centered samples.
pub fn resize(img: &Image, h: usize, w: usize) -> ImageryResult<Image> {
    if h < 8 || w < 8 {
        return Err(ImageryError::Argument(format!(
            "resize target {h}x{w} below minimum 8x8"
        )));
    }
    if h == img.height && w == img.width {
        return Ok(img.clone());
    }
    let mut out = Image::new(h, w, img.channels);
    let sy = img.height as f32 / h as f32;
    let sx = img.width as f32 / w as f32;
    for y in 0..h {
        let src_y = (y as f32 + 0.5) * sy - 0.5;
        for x in 0..w {
            let src_x = (x as f32 + 0.5) * sx - 0.5;
            for c in 0..img.channels {
                out.set(y, x, c, sample_bilinear(img, src_y, src_x, c));
            }
        }
    }
    Ok(out)
}

/// Per-channel `(x - mean) / std` with the fixed mean/std constants.
pub fn standardize(img: &Image) -> Image {
    let mut out = img.clone();
    let n = img.height * img.width;
    for i in 0..n {
        for c in 0..img.channels {
            let idx = i * img.channels + c;
            let cc = if img.channels == 1 { 0 } else { c };
            out.data[idx] = (img.data[idx] - STANDARDIZE_MEAN[cc]) / STANDARDIZE_STD[cc];
        }
    }
    out
}

/// Inverse of [`standardize`].
pub fn destandardize(img: &Image) -> Image {
    let mut out = img.clone();
    let n = img.height * img.width;
    for i in 0..n {
        for c in 0..img.channels {
            let idx = i * img.channels + c;
            let cc = if img.channels == 1 { 0 } else { c };
            out.data[idx] = img.data[idx] * STANDARDIZE_STD[cc] + STANDARDIZE_MEAN[cc];
        }
    }
    out
}

/// Luminance conversion, `0.299 R + 0.587 G + 0.114 B`.
pub fn to_grayscale(img: &Image) -> Image {
    assert_eq!(img.channels, 3, "to_grayscale expects a 3-channel image");
    let mut out = Image::new(img.height, img.width, 1);
    for i in 0..img.height * img.width {
        let r = img.data[i * 3];
        let g = img.data[i * 3 + 1];
        let b = img.data[i * 3 + 2];
        out.data[i] = 0.299 * r + 0.587 * g + 0.114 * b;
    }
    out
}

/// Otsu threshold over a 256-bin histogram; returns the bin index maximizing
/// between-class variance, or `None` for a single-level histogram.
fn otsu_threshold(hist: &[u64; 256], total: u64) -> Option<usize> {
    let sum_all: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &c)| i as f64 * c as f64)
        .sum();
    let mut w0 = 0f64;
    let mut sum0 = 0f64;
    let mut best = f64::NEG_INFINITY;
    let mut best_t = None;
    for t in 0..255 {
        w0 += hist[t] as f64;
        if w0 == 0.0 {
            continue;
        }
        let w1 = total as f64 - w0;
        if w1 == 0.0 {
            break;
        }
        sum0 += t as f64 * hist[t] as f64;
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best {
            best = between;
            best_t = Some(t);
        }
    }
    best_t
}

/// Binarizes an image into a foreground mask.
///
/// Luminance is thresholded by Otsu's criterion; the polarity covering the
/// minority of the image border is labeled foreground. A constant image
/// falls back to an all-ones mask.
pub fn foreground_mask(img: &Image) -> Mask {
    let gray = if img.channels == 3 {
        to_grayscale(img)
    } else {
        img.clone()
    };
    let mut hist = [0u64; 256];
    for &v in &gray.data {
        hist[(v * 255.0).round().clamp(0.0, 255.0) as usize] += 1;
    }
    let total = (gray.height * gray.width) as u64;
    let Some(t) = otsu_threshold(&hist, total) else {
        return Mask::filled(gray.height, gray.width);
    };
    let thresh = t as f32 / 255.0;
    let above: Vec<u8> = gray.data.iter().map(|&v| (v > thresh) as u8).collect();

    // Count border pixels per polarity; the minority side is the object.
    let (h, w) = (gray.height, gray.width);
    let mut border_above = 0usize;
    let mut border_total = 0usize;
    for x in 0..w {
        border_above += above[x] as usize + above[(h - 1) * w + x] as usize;
        border_total += 2;
    }
    for y in 1..h.saturating_sub(1) {
        border_above += above[y * w] as usize + above[y * w + w - 1] as usize;
        border_total += 2;
    }
    let above_is_fg = border_above * 2 <= border_total;
    let data = above
        .into_iter()
        .map(|a| if above_is_fg { a } else { 1 - a })
        .collect();
    Mask {
        height: h,
        width: w,
        data,
    }
}

/// Rotates around the image center by `degrees`, sampling bilinearly with
/// reflected (mirror) coordinates so no out-of-frame fill appears.
pub fn rotate_reflect(img: &Image, degrees: f32) -> Image {
    let rad = degrees.to_radians();
    let (sin, cos) = rad.sin_cos();
    let cy = (img.height as f32 - 1.0) / 2.0;
    let cx = (img.width as f32 - 1.0) / 2.0;
    let mut out = Image::new(img.height, img.width, img.channels);
    for y in 0..img.height {
        for x in 0..img.width {
            let dy = y as f32 - cy;
            let dx = x as f32 - cx;
            let src_y = cy + dy * cos - dx * sin;
            let src_x = cx + dy * sin + dx * cos;
            let ry = reflect_coord(src_y, img.height);
            let rx = reflect_coord(src_x, img.width);
            for c in 0..img.channels {
                out.set(y, x, c, sample_bilinear(img, ry, rx, c));
            }
        }
    }
    out
}

/// Mirrors a continuous coordinate into `[0, n-1]`.
fn reflect_coord(v: f32, n: usize) -> f32 {
    let max = (n - 1) as f32;
    if max == 0.0 {
        return 0.0;
    }
    let period = 2.0 * max;
    let mut m = (v % period + period) % period;
    if m > max {
        m = period - m;
    }
    m
}
