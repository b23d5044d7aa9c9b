//! Frequency-band construction and spectral analysis.
//!
//! The training pipeline uses a single Gaussian-pyramid round trip to split
//! an image into a low-frequency approximation and the high-frequency
//! residual; the two always sum back to the source exactly. The remaining
//! operations (2D DFT, amplitude/phase, radius-binned energy, gray-level
//! histogram) back the `analyze` command that contrasts normal and defective
//! image sets in the frequency domain.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::imagery::{to_grayscale, Image};

#[derive(Debug, Error)]
pub enum FrequencyError {
    #[error("invalid argument: {0}")]
    Argument(String),
}

pub type FrequencyResult<T> = Result<T, FrequencyError>;

/// Complex frequency grid of an `height x width` single-channel image.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub height: usize,
    pub width: usize,
    pub real: Vec<f64>,
    pub imag: Vec<f64>,
}

/// Radius-binned spectral energy. Bin `r` sums the amplitudes of all
/// center-shifted frequency bins whose rounded distance to the grid center
/// is `r`, with radii beyond the last bin folded into it.
#[derive(Debug, Clone)]
pub struct RadialProfile {
    pub energy: Vec<f64>,
}

/// A low/high frequency pair; `low + high` reconstructs the source exactly.
#[derive(Debug, Clone)]
pub struct FrequencyPair {
    pub low: Image,
    pub high: Image,
}

/// Binomial kernel [1, 4, 6, 4, 1] / 16; the separable 5x5 smoothing used by
/// both pyramid directions.
const KERNEL: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Mirror an index into `[0, n-1]` without repeating the edge sample.
#[inline]
fn reflect(idx: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = ((idx % period) + period) % period;
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// Separable 5-tap convolution along rows then columns, reflect-padded.
/// `gain` scales the kernel per axis (1.0 for down, 2.0 for up).
fn convolve_binomial(img: &Image, gain: f32) -> Image {
    let (h, w, ch) = (img.height, img.width, img.channels);
    let mut tmp = Image::new(h, w, ch);
    // rows
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0f32;
                for (k, &kv) in KERNEL.iter().enumerate() {
                    let sx = reflect(x as isize + k as isize - 2, w);
                    acc += kv * img.get(y, sx, c);
                }
                tmp.set(y, x, c, acc * gain);
            }
        }
    }
    let mut out = Image::new(h, w, ch);
    // columns
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0f32;
                for (k, &kv) in KERNEL.iter().enumerate() {
                    let sy = reflect(y as isize + k as isize - 2, h);
                    acc += kv * tmp.get(sy, x, c);
                }
                out.set(y, x, c, acc * gain);
            }
        }
    }
    out
}

/// Smooths with the binomial kernel, then removes all even rows and columns
/// (odd indices are kept). Output is `floor(H/2) x floor(W/2)`.
pub fn pyr_down(img: &Image) -> FrequencyResult<Image> {
    if img.height < 2 || img.width < 2 {
        return Err(FrequencyError::Argument(format!(
            "pyr_down needs dims >= 2, got {}x{}",
            img.height, img.width
        )));
    }
    let smooth = convolve_binomial(img, 1.0);
    let (oh, ow) = (img.height / 2, img.width / 2);
    let mut out = Image::new(oh, ow, img.channels);
    for y in 0..oh {
        for x in 0..ow {
            for c in 0..img.channels {
                out.set(y, x, c, smooth.get(2 * y + 1, 2 * x + 1, c));
            }
        }
    }
    Ok(out)
}

/// Expands to `target_h x target_w` by filling even rows and columns with
/// zeros (source samples land on odd indices) and smoothing with the
/// binomial kernel scaled x2 per axis to restore brightness.
pub fn pyr_up(img: &Image, target_h: usize, target_w: usize) -> FrequencyResult<Image> {
    let ok_h = target_h / 2 == img.height && target_h >= 2;
    let ok_w = target_w / 2 == img.width && target_w >= 2;
    if !ok_h || !ok_w {
        return Err(FrequencyError::Argument(format!(
            "pyr_up target {target_h}x{target_w} is not 2x of source {}x{}",
            img.height, img.width
        )));
    }
    let mut stuffed = Image::new(target_h, target_w, img.channels);
    for y in 0..img.height {
        for x in 0..img.width {
            for c in 0..img.channels {
                stuffed.set(2 * y + 1, 2 * x + 1, c, img.get(y, x, c));
            }
        }
    }
    Ok(convolve_binomial(&stuffed, 2.0))
}

/// Splits an even-dimensioned image into its pyramid low-pass approximation
/// and the residual high band; `low + high == img` by construction.
pub fn split_frequency(img: &Image) -> FrequencyResult<FrequencyPair> {
    if img.height % 2 != 0 || img.width % 2 != 0 {
        return Err(FrequencyError::Argument(format!(
            "split_frequency needs even dims, got {}x{}",
            img.height, img.width
        )));
    }
    let down = pyr_down(img)?;
    let low = pyr_up(&down, img.height, img.width)?;
    let mut high = img.clone();
    for (hv, lv) in high.data.iter_mut().zip(&low.data) {
        *hv -= lv;
    }
    Ok(FrequencyPair { low, high })
}

/// Exact 2D DFT of a single-channel image:
/// `F(u,v) = sum_xy f(x,y) exp(-2 pi i (u x / M + v y / N))`,
/// with `x` indexing rows (`M = height`) and `y` columns (`N = width`).
pub fn dft2(img: &Image) -> Spectrum {
    assert_eq!(img.channels, 1, "dft2 expects a single-channel image");
    let (h, w) = (img.height, img.width);
    let mut grid: Vec<Complex64> = img
        .data
        .iter()
        .map(|&v| Complex64::new(v as f64, 0.0))
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    // rows (y direction, length w)
    let fft_w = planner.plan_fft_forward(w);
    for row in grid.chunks_exact_mut(w) {
        fft_w.process(row);
    }
    // columns (x direction, length h)
    let fft_h = planner.plan_fft_forward(h);
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = grid[y * w + x];
        }
        fft_h.process(&mut col);
        for y in 0..h {
            grid[y * w + x] = col[y];
        }
    }
    Spectrum {
        height: h,
        width: w,
        real: grid.iter().map(|c| c.re).collect(),
        imag: grid.iter().map(|c| c.im).collect(),
    }
}

/// Per-bin magnitude and four-quadrant phase in `(-pi, pi]`; a bin with
/// zero real and imaginary parts gets phase 0.
pub fn amplitude_phase(s: &Spectrum) -> (Vec<f64>, Vec<f64>) {
    let amp: Vec<f64> = s
        .real
        .iter()
        .zip(&s.imag)
        .map(|(&r, &i)| (r * r + i * i).sqrt())
        .collect();
    let phase: Vec<f64> = s
        .real
        .iter()
        .zip(&s.imag)
        .map(|(&r, &i)| if r == 0.0 && i == 0.0 { 0.0 } else { i.atan2(r) })
        .collect();
    (amp, phase)
}

/// Radius-binned amplitude sums of the center-shifted spectrum.
///
/// The DC bin is shifted to the grid center `(H/2, W/2)`; each bin's
/// amplitude is added to the integer radius `round(dist to center)`. Bins
/// whose radius exceeds `floor(min(H,W)/2)` (grid corners) are folded into
/// the last bin so total amplitude mass is conserved.
pub fn radial_energy(s: &Spectrum) -> RadialProfile {
    let (amp, _) = amplitude_phase(s);
    let (h, w) = (s.height, s.width);
    let r_max = h.min(w) / 2;
    let mut energy = vec![0.0f64; r_max + 1];
    let (cy, cx) = ((h / 2) as f64, (w / 2) as f64);
    for u in 0..h {
        for v in 0..w {
            // center shift: frequency (u, v) lands at ((u + H/2) mod H, ...)
            let su = ((u + h / 2) % h) as f64;
            let sv = ((v + w / 2) % w) as f64;
            let dist = ((su - cy).powi(2) + (sv - cx).powi(2)).sqrt();
            let r = (dist.round() as usize).min(r_max);
            energy[r] += amp[u * w + v];
        }
    }
    RadialProfile { energy }
}

/// 256-bin luminance histogram; counts sum to `H * W`.
pub fn gray_histogram(img: &Image) -> [u64; 256] {
    let gray = if img.channels == 3 {
        to_grayscale(img)
    } else {
        img.clone()
    };
    let mut hist = [0u64; 256];
    for &v in &gray.data {
        hist[(v * 255.0).round().clamp(0.0, 255.0) as usize] += 1;
    }
    hist
}
