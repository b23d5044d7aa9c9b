//! Frozen local feature extraction and the trainable feature adaptor.
//!
//! The extractor is a small frozen convolutional trunk with deterministic
//! random weights: a stride-2 stem (3x3 conv + 2x2 average pool) followed by
//! two stride-2 stages. The stage-1 map (64 channels, 1/8 grid) and stage-2
//! map (128 channels, 1/16 grid) are the two feature levels; each is locally
//! averaged over a 3x3 neighborhood, the coarser level is bilinearly
//! upsampled to the finer grid, and the two are concatenated into 192
//! channels per position. An imported-weights variant loads the same trunk
//! from a checkpoint instead of seeding it.
//!
//! The adaptor is a single linear layer without activation, initialized to
//! identity, and is the only trainable part of feature construction.

use std::path::PathBuf;

use rand::Rng;
use thiserror::Error;

use crate::autodiff::NamedTensor;
use crate::frequency::split_frequency;
use crate::imagery::Image;
use crate::rng;

#[derive(Debug, Error)]
pub enum BackboneError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Frequency(#[from] crate::frequency::FrequencyError),
}

pub type BackboneResult<T> = Result<T, BackboneError>;

/// Channel width of the level-2 tap.
pub const LEVEL2_CHANNELS: usize = 64;
/// Channel width of the level-3 tap.
pub const LEVEL3_CHANNELS: usize = 128;
/// Concatenated feature width.
pub const FEATURE_CHANNELS: usize = LEVEL2_CHANNELS + LEVEL3_CHANNELS;
/// Total stride of the level-2 grid relative to the input image.
pub const FEATURE_STRIDE: usize = 8;

/// Patch features on an `grid_h x grid_w` grid, position-major:
/// `data[(y * grid_w + x) * channels + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub grid_h: usize,
    pub grid_w: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn positions(&self) -> usize {
        self.grid_h * self.grid_w
    }
}

/// How the extractor gets its weights.
#[derive(Debug, Clone, PartialEq)]
pub enum BackboneKind {
    /// Deterministic random convolutions from the given seed.
    DeterministicRandomConv { seed: u64 },
    /// Trunk weights loaded from a DFDW checkpoint.
    ImportedWeights { path: PathBuf },
}

/// Extractor configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneSpec {
    pub kind: BackboneKind,
    /// Side length of the local-average neighborhood (odd).
    pub aggregation: usize,
}

impl BackboneSpec {
    pub fn random(seed: u64) -> Self {
        Self {
            kind: BackboneKind::DeterministicRandomConv { seed },
            aggregation: 3,
        }
    }
}

/// One 3x3, stride-2, zero-padded convolution with leaky-ReLU output.
#[derive(Debug, Clone)]
struct ConvLayer {
    in_ch: usize,
    out_ch: usize,
    /// `[out][in][ky][kx]` row-major.
    weight: Vec<f32>,
}

const LEAKY_SLOPE: f32 = 0.2;

impl ConvLayer {
    fn kaiming(in_ch: usize, out_ch: usize, rng: &mut impl Rng) -> Self {
        let fan_in = (in_ch * 9) as f32;
        let bound = (6.0 / fan_in).sqrt();
        let weight = (0..out_ch * in_ch * 9)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Self {
            in_ch,
            out_ch,
            weight,
        }
    }

    /// Interleaved-channel input `[h][w][in_ch]` to `[ceil(h/2)][ceil(w/2)][out_ch]`.
    /// Borders are mirror-padded so constant inputs stay constant everywhere.
    fn forward(&self, input: &[f32], h: usize, w: usize) -> (Vec<f32>, usize, usize) {
        let oh = h.div_ceil(2);
        let ow = w.div_ceil(2);
        let mut out = vec![0.0f32; oh * ow * self.out_ch];
        for oy in 0..oh {
            for ox in 0..ow {
                let base = (oy * ow + ox) * self.out_ch;
                for ky in 0..3usize {
                    let iy = reflect(2 * oy as isize + ky as isize - 1, h);
                    for kx in 0..3usize {
                        let ix = reflect(2 * ox as isize + kx as isize - 1, w);
                        let in_base = (iy * w + ix) * self.in_ch;
                        let pix = &input[in_base..in_base + self.in_ch];
                        let k_base = (ky * 3 + kx) * self.in_ch;
                        for oc in 0..self.out_ch {
                            let wrow =
                                &self.weight[oc * self.in_ch * 9 + k_base..][..self.in_ch];
                            let mut acc = 0.0f32;
                            for (wv, xv) in wrow.iter().zip(pix) {
                                acc += wv * xv;
                            }
                            out[base + oc] += acc;
                        }
                    }
                }
            }
        }
        for v in out.iter_mut() {
            if *v < 0.0 {
                *v *= LEAKY_SLOPE;
            }
        }
        (out, oh, ow)
    }
}

/// 2x2 average pool, stride 2.
fn avg_pool2(input: &[f32], h: usize, w: usize, ch: usize) -> (Vec<f32>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0f32; oh * ow * ch];
    for oy in 0..oh {
        for ox in 0..ow {
            for c in 0..ch {
                let mut acc = 0.0f32;
                for dy in 0..2 {
                    for dx in 0..2 {
                        acc += input[((2 * oy + dy) * w + 2 * ox + dx) * ch + c];
                    }
                }
                out[(oy * ow + ox) * ch + c] = acc * 0.25;
            }
        }
    }
    (out, oh, ow)
}

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

/// Local mean over an odd `k x k` neighborhood with mirrored borders.
fn local_average(input: &[f32], h: usize, w: usize, ch: usize, k: usize) -> Vec<f32> {
    let r = (k / 2) as isize;
    let norm = 1.0 / (k * k) as f32;
    let mut out = vec![0.0f32; input.len()];
    for y in 0..h {
        for x in 0..w {
            let base = (y * w + x) * ch;
            for dy in -r..=r {
                let sy = reflect(y as isize + dy, h);
                for dx in -r..=r {
                    let sx = reflect(x as isize + dx, w);
                    let src = &input[(sy * w + sx) * ch..][..ch];
                    for c in 0..ch {
                        out[base + c] += src[c];
                    }
                }
            }
            for c in 0..ch {
                out[base + c] *= norm;
            }
        }
    }
    out
}

/// Bilinear upsample of an interleaved grid to `oh x ow`.
fn upsample_bilinear(input: &[f32], h: usize, w: usize, ch: usize, oh: usize, ow: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; oh * ow * ch];
    let sy = h as f32 / oh as f32;
    let sx = w as f32 / ow as f32;
    for y in 0..oh {
        let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f32;
        for x in 0..ow {
            let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f32;
            let base = (y * ow + x) * ch;
            for c in 0..ch {
                let v00 = input[(y0 * w + x0) * ch + c];
                let v01 = input[(y0 * w + x1) * ch + c];
                let v10 = input[(y1 * w + x0) * ch + c];
                let v11 = input[(y1 * w + x1) * ch + c];
                let top = v00 + tx * (v01 - v00);
                let bot = v10 + tx * (v11 - v10);
                out[base + c] = top + ty * (bot - top);
            }
        }
    }
    out
}

/// The frozen feature extractor.
#[derive(Debug, Clone)]
pub struct Backbone {
    stem: ConvLayer,
    level2: ConvLayer,
    level3: ConvLayer,
    aggregation: usize,
}

impl Backbone {
    pub fn from_spec(spec: &BackboneSpec) -> BackboneResult<Self> {
        if spec.aggregation % 2 == 0 || spec.aggregation == 0 {
            return Err(BackboneError::Config(format!(
                "aggregation neighborhood must be odd, got {}",
                spec.aggregation
            )));
        }
        match &spec.kind {
            BackboneKind::DeterministicRandomConv { seed } => {
                let mut r = rng::stream(*seed, "backbone", 0);
                Ok(Self {
                    stem: ConvLayer::kaiming(3, 32, &mut r),
                    level2: ConvLayer::kaiming(32, LEVEL2_CHANNELS, &mut r),
                    level3: ConvLayer::kaiming(LEVEL2_CHANNELS, LEVEL3_CHANNELS, &mut r),
                    aggregation: spec.aggregation,
                })
            }
            BackboneKind::ImportedWeights { path } => {
                let tensors = crate::autodiff::load_dfdw(path)
                    .map_err(|e| BackboneError::Config(format!("trunk checkpoint: {e}")))?;
                Self::from_tensors(&tensors, spec.aggregation)
            }
        }
    }

    /// Rebuilds the trunk from named tensors (checkpoint contents).
    pub fn from_tensors(tensors: &[NamedTensor], aggregation: usize) -> BackboneResult<Self> {
        let find = |name: &str, want: &[usize]| -> BackboneResult<Vec<f32>> {
            let t = tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| BackboneError::Config(format!("missing trunk tensor '{name}'")))?;
            if t.shape != want {
                return Err(BackboneError::Config(format!(
                    "trunk tensor '{name}' has shape {:?}, want {want:?}",
                    t.shape
                )));
            }
            Ok(t.data.clone())
        };
        Ok(Self {
            stem: ConvLayer {
                in_ch: 3,
                out_ch: 32,
                weight: find("trunk.stem.weight", &[32, 3, 3, 3])?,
            },
            level2: ConvLayer {
                in_ch: 32,
                out_ch: LEVEL2_CHANNELS,
                weight: find("trunk.level2.weight", &[LEVEL2_CHANNELS, 32, 3, 3])?,
            },
            level3: ConvLayer {
                in_ch: LEVEL2_CHANNELS,
                out_ch: LEVEL3_CHANNELS,
                weight: find(
                    "trunk.level3.weight",
                    &[LEVEL3_CHANNELS, LEVEL2_CHANNELS, 3, 3],
                )?,
            },
            aggregation,
        })
    }

    /// Trunk weights as named tensors for checkpointing and hashing.
    pub fn tensors(&self) -> Vec<NamedTensor> {
        vec![
            NamedTensor {
                name: "trunk.stem.weight".into(),
                shape: vec![32, 3, 3, 3],
                data: self.stem.weight.clone(),
            },
            NamedTensor {
                name: "trunk.level2.weight".into(),
                shape: vec![LEVEL2_CHANNELS, 32, 3, 3],
                data: self.level2.weight.clone(),
            },
            NamedTensor {
                name: "trunk.level3.weight".into(),
                shape: vec![LEVEL3_CHANNELS, LEVEL2_CHANNELS, 3, 3],
                data: self.level3.weight.clone(),
            },
        ]
    }

    /// Runs the frozen trunk on a standardized image and aggregates the two
    /// feature levels onto the level-2 grid.
    pub fn extract(&self, img: &Image) -> BackboneResult<FeatureMap> {
        if img.channels != 3 {
            return Err(BackboneError::Argument(format!(
                "extract expects 3 channels, got {}",
                img.channels
            )));
        }
        if img.height < 16 || img.width < 16 {
            return Err(BackboneError::Argument(format!(
                "extract needs at least 16x16 input, got {}x{}",
                img.height, img.width
            )));
        }
        let (x, h, w) = self.stem.forward(&img.data, img.height, img.width);
        let (x, h, w) = avg_pool2(&x, h, w, 32);
        let (l2, h2, w2) = self.level2.forward(&x, h, w);
        let (l3, h3, w3) = self.level3.forward(&l2, h2, w2);

        let l2 = local_average(&l2, h2, w2, LEVEL2_CHANNELS, self.aggregation);
        let l3 = local_average(&l3, h3, w3, LEVEL3_CHANNELS, self.aggregation);
        let l3 = upsample_bilinear(&l3, h3, w3, LEVEL3_CHANNELS, h2, w2);

        let mut data = vec![0.0f32; h2 * w2 * FEATURE_CHANNELS];
        for p in 0..h2 * w2 {
            let dst = &mut data[p * FEATURE_CHANNELS..(p + 1) * FEATURE_CHANNELS];
            dst[..LEVEL2_CHANNELS].copy_from_slice(&l2[p * LEVEL2_CHANNELS..(p + 1) * LEVEL2_CHANNELS]);
            dst[LEVEL2_CHANNELS..]
                .copy_from_slice(&l3[p * LEVEL3_CHANNELS..(p + 1) * LEVEL3_CHANNELS]);
        }
        Ok(FeatureMap {
            grid_h: h2,
            grid_w: w2,
            channels: FEATURE_CHANNELS,
            data,
        })
    }

    /// Splits a standardized image into its frequency pair and extracts
    /// features from each band.
    pub fn extract_pair(&self, img: &Image) -> BackboneResult<(FeatureMap, FeatureMap)> {
        let pair = split_frequency(img)?;
        Ok((self.extract(&pair.low)?, self.extract(&pair.high)?))
    }
}

/// Applies the position-wise linear adaptor `q = W p` outside the tape
/// (inference path). `weight` is `[C x C]` row-major, `q[o] = sum_i W[o][i] p[i]`.
pub fn adapt(p: &FeatureMap, weight: &[f32]) -> BackboneResult<FeatureMap> {
    let c = p.channels;
    if weight.len() != c * c {
        return Err(BackboneError::Argument(format!(
            "adaptor weight is {} values, want {}x{}",
            weight.len(),
            c,
            c
        )));
    }
    let mut out = FeatureMap {
        grid_h: p.grid_h,
        grid_w: p.grid_w,
        channels: c,
        data: vec![0.0; p.data.len()],
    };
    for pos in 0..p.positions() {
        let src = &p.data[pos * c..(pos + 1) * c];
        let dst = &mut out.data[pos * c..(pos + 1) * c];
        for (o, d) in dst.iter_mut().enumerate() {
            let row = &weight[o * c..(o + 1) * c];
            let mut acc = 0.0f32;
            for (wv, xv) in row.iter().zip(src) {
                acc += wv * xv;
            }
            *d = acc;
        }
    }
    Ok(out)
}

/// Identity-initialized adaptor weight for `c` channels.
pub fn identity_adaptor(c: usize) -> Vec<f32> {
    let mut w = vec![0.0f32; c * c];
    for i in 0..c {
        w[i * c + i] = 1.0;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagery::standardize;
    use rand::Rng;

    fn test_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = rng::stream(seed, "backbone-test", 0);
        let mut img = Image::new(h, w, 3);
        for v in img.data.iter_mut() {
            *v = rng.gen::<f32>();
        }
        standardize(&img)
    }

    #[test]
    fn grid_is_input_over_stride() {
        let bb = Backbone::from_spec(&BackboneSpec::random(1)).unwrap();
        let fm = bb.extract(&test_image(64, 64, 2)).unwrap();
        assert_eq!((fm.grid_h, fm.grid_w), (8, 8));
        assert_eq!(fm.channels, FEATURE_CHANNELS);
        let fm = bb.extract(&test_image(256, 256, 3)).unwrap();
        assert_eq!((fm.grid_h, fm.grid_w), (32, 32));
    }

    #[test]
    fn extraction_is_deterministic() {
        let bb = Backbone::from_spec(&BackboneSpec::random(7)).unwrap();
        let img = test_image(64, 64, 4);
        let a = bb.extract(&img).unwrap();
        let b = bb.extract(&img).unwrap();
        assert_eq!(a, b);
        let bb2 = Backbone::from_spec(&BackboneSpec::random(7)).unwrap();
        assert_eq!(a, bb2.extract(&img).unwrap());
    }

    #[test]
    fn constant_image_gives_constant_features() {
        let bb = Backbone::from_spec(&BackboneSpec::random(5)).unwrap();
        let img = standardize(&Image::constant(64, 64, 3, 0.5));
        let fm = bb.extract(&img).unwrap();
        let c = fm.channels;
        // mirror padding keeps a constant input constant at every position
        let center = &fm.data[(3 * fm.grid_w + 3) * c..(3 * fm.grid_w + 4) * c];
        for y in 0..fm.grid_h {
            for x in 0..fm.grid_w {
                let here = &fm.data[(y * fm.grid_w + x) * c..(y * fm.grid_w + x + 1) * c];
                for (a, b) in here.iter().zip(center) {
                    assert!((a - b).abs() < 1e-4, "({y},{x}): {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn extract_never_mutates_weights() {
        let bb = Backbone::from_spec(&BackboneSpec::random(9)).unwrap();
        let before: Vec<u8> = bb
            .tensors()
            .iter()
            .flat_map(|t| t.data.iter().flat_map(|v| v.to_le_bytes()))
            .collect();
        let _ = bb.extract(&test_image(64, 64, 1)).unwrap();
        let _ = bb.extract_pair(&test_image(64, 64, 2)).unwrap();
        let after: Vec<u8> = bb
            .tensors()
            .iter()
            .flat_map(|t| t.data.iter().flat_map(|v| v.to_le_bytes()))
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn trunk_round_trips_through_tensors() {
        let bb = Backbone::from_spec(&BackboneSpec::random(11)).unwrap();
        let rebuilt = Backbone::from_tensors(&bb.tensors(), 3).unwrap();
        let img = test_image(64, 64, 12);
        assert_eq!(bb.extract(&img).unwrap(), rebuilt.extract(&img).unwrap());
    }

    #[test]
    fn missing_trunk_tensor_is_config_error() {
        let bb = Backbone::from_spec(&BackboneSpec::random(1)).unwrap();
        let mut tensors = bb.tensors();
        tensors.remove(1);
        assert!(matches!(
            Backbone::from_tensors(&tensors, 3),
            Err(BackboneError::Config(_))
        ));
    }

    #[test]
    fn pair_grids_match_and_bands_reconstruct() {
        let bb = Backbone::from_spec(&BackboneSpec::random(3)).unwrap();
        let img = test_image(64, 64, 8);
        let pair = crate::frequency::split_frequency(&img).unwrap();
        let mut sum = pair.low.clone();
        for (s, h) in sum.data.iter_mut().zip(&pair.high.data) {
            *s += h;
        }
        assert!(img.max_abs_diff(&sum) < 1e-5);
        let (low, high) = bb.extract_pair(&img).unwrap();
        assert_eq!((low.grid_h, low.grid_w), (high.grid_h, high.grid_w));
    }

    #[test]
    fn adapt_identity_and_scaling() {
        let bb = Backbone::from_spec(&BackboneSpec::random(2)).unwrap();
        let p = bb.extract(&test_image(64, 64, 6)).unwrap();
        let id = identity_adaptor(p.channels);
        let q = adapt(&p, &id).unwrap();
        assert_eq!(p, q);
        let twice: Vec<f32> = id.iter().map(|v| 2.0 * v).collect();
        let q2 = adapt(&p, &twice).unwrap();
        for (a, b) in q2.data.iter().zip(&p.data) {
            assert!((a - 2.0 * b).abs() < 1e-5);
        }
    }

    #[test]
    fn adapt_matches_direct_matvec() {
        let mut rng = rng::stream(13, "adapt-test", 0);
        let c = 6usize;
        let p = FeatureMap {
            grid_h: 2,
            grid_w: 2,
            channels: c,
            data: (0..4 * c).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let w: Vec<f32> = (0..c * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q = adapt(&p, &w).unwrap();
        // direct matrix-vector product at one position
        let pos = 3usize;
        for o in 0..c {
            let mut want = 0.0f32;
            for i in 0..c {
                want += w[o * c + i] * p.data[pos * c + i];
            }
            assert!((q.data[pos * c + o] - want).abs() < 1e-5);
        }
    }

    #[test]
    fn adapt_is_linear() {
        let mut rng = rng::stream(17, "adapt-lin", 0);
        let c = 8usize;
        let mk = |rng: &mut rand_chacha::ChaCha8Rng| FeatureMap {
            grid_h: 3,
            grid_w: 3,
            channels: c,
            data: (0..9 * c).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
        };
        let p1 = mk(&mut rng);
        let p2 = mk(&mut rng);
        let w: Vec<f32> = (0..c * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (a, b) = (0.7f32, -1.3f32);
        let mut combo = p1.clone();
        for (i, v) in combo.data.iter_mut().enumerate() {
            *v = a * p1.data[i] + b * p2.data[i];
        }
        let q_combo = adapt(&combo, &w).unwrap();
        let q1 = adapt(&p1, &w).unwrap();
        let q2 = adapt(&p2, &w).unwrap();
        for i in 0..q_combo.data.len() {
            let want = a * q1.data[i] + b * q2.data[i];
            assert!((q_combo.data[i] - want).abs() < 1e-5);
        }
    }

    #[test]
    fn adapt_rejects_channel_mismatch() {
        let p = FeatureMap {
            grid_h: 1,
            grid_w: 1,
            channels: 4,
            data: vec![0.0; 4],
        };
        assert!(adapt(&p, &[0.0; 9]).is_err());
    }
}
