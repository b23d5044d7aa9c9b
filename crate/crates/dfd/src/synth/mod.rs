//! Pseudo-anomaly synthesis and data augmentation.
//!
//! Image-level pseudo-anomalies blend a foreign texture into a normal image
//! through the intersection of a thresholded Perlin-noise mask and the
//! image's foreground mask, with a per-sample transparency factor.
//! Feature-level pseudo-anomalies add i.i.d. Gaussian noise to adapted
//! features. All randomness flows through labeled per-sample streams derived
//! from one master seed, so sample `i` is the same no matter how, or in what
//! order, the set is generated.

pub mod fixture;

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::backbone::FeatureMap;
use crate::imagery::{foreground_mask, rotate_reflect, Image, Mask};
use crate::rng;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Imagery(#[from] crate::imagery::ImageryError),
}

pub type SynthResult<T> = Result<T, SynthError>;

/// A 2D gradient-lattice Perlin field, deterministic in `(dims, period, seed)`.
///
/// Values span `[-1, 1]` (the raw lattice noise is scaled by sqrt(2)) and
/// are exactly zero at lattice corners.
#[derive(Debug, Clone)]
pub struct PerlinField {
    pub height: usize,
    pub width: usize,
    pub lattice_period: usize,
    pub seed: u64,
    pub data: Vec<f32>,
}

/// One augmented training sample. `image` is the possibly-blended variant,
/// `normal` the same geometric augmentation without the blended defect;
/// they are bit-identical wherever `mask` is zero.
#[derive(Debug, Clone)]
pub struct AnomalySample {
    pub image: Image,
    pub normal: Image,
    pub mask: Mask,
    pub beta: f32,
    pub is_anomalous: bool,
}

/// Gaussian perturbation parameters for feature-level pseudo-anomalies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub mean: f32,
    pub std: f32,
    pub seed: u64,
}

/// Where blend textures come from.
#[derive(Debug, Clone, PartialEq)]
pub enum TextureSource {
    /// Multi-octave procedural color textures.
    Procedural,
    /// Uniform seeded pick from the PNG files of a directory.
    Folder(PathBuf),
}

/// Hash a lattice corner and seed into a unit gradient.
#[inline]
fn corner_gradient(ix: i64, iy: i64, seed: u64) -> (f32, f32) {
    let mut z = seed
        ^ (ix as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (iy as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    let angle = (z as f64 / u64::MAX as f64) * std::f64::consts::TAU;
    (angle.cos() as f32, angle.sin() as f32)
}

/// Quintic fade `6t^5 - 15t^4 + 10t^3`.
#[inline]
fn fade(t: f32) -> f32 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Classic gradient-lattice Perlin noise with `period` cells per axis.
///
/// Lattice indices wrap modulo `period`, so fields tile seamlessly and the
/// same `(dims, period, seed)` triple always produces the same field.
pub fn perlin(h: usize, w: usize, period: usize, seed: u64) -> SynthResult<PerlinField> {
    if period == 0 {
        return Err(SynthError::Argument("perlin period must be >= 1".into()));
    }
    let mut data = vec![0.0f32; h * w];
    let scale = std::f32::consts::SQRT_2; // raw 2D Perlin spans [-1/sqrt2, 1/sqrt2]
    let p = period as i64;
    for y in 0..h {
        let fy = y as f32 / h as f32 * period as f32;
        let y0 = fy.floor();
        let ty = fy - y0;
        let uy = fade(ty);
        for x in 0..w {
            let fx = x as f32 / w as f32 * period as f32;
            let x0 = fx.floor();
            let tx = fx - x0;
            let ux = fade(tx);
            let (ix, iy) = (x0 as i64, y0 as i64);
            let dot = |cx: i64, cy: i64, dx: f32, dy: f32| {
                let g = corner_gradient(cx.rem_euclid(p), cy.rem_euclid(p), seed);
                dx * g.0 + dy * g.1
            };
            let n00 = dot(ix, iy, tx, ty);
            let n10 = dot(ix + 1, iy, tx - 1.0, ty);
            let n01 = dot(ix, iy + 1, tx, ty - 1.0);
            let n11 = dot(ix + 1, iy + 1, tx - 1.0, ty - 1.0);
            let nx0 = n00 + ux * (n10 - n00);
            let nx1 = n01 + ux * (n11 - n01);
            data[y * w + x] = (nx0 + uy * (nx1 - nx0)) * scale;
        }
    }
    Ok(PerlinField {
        height: h,
        width: w,
        lattice_period: period,
        seed,
        data,
    })
}

/// Mask of all field positions strictly above `threshold`.
pub fn perlin_mask(field: &PerlinField, threshold: f32) -> Mask {
    Mask {
        height: field.height,
        width: field.width,
        data: field.data.iter().map(|&v| (v > threshold) as u8).collect(),
    }
}

/// Element-wise AND of two equally sized masks.
pub fn compose_mask(mf: &Mask, mp: &Mask) -> SynthResult<Mask> {
    if mf.height != mp.height || mf.width != mp.width {
        return Err(SynthError::Argument(format!(
            "mask dims differ: {}x{} vs {}x{}",
            mf.height, mf.width, mp.height, mp.width
        )));
    }
    Ok(Mask {
        height: mf.height,
        width: mf.width,
        data: mf
            .data
            .iter()
            .zip(&mp.data)
            .map(|(&a, &b)| a & b)
            .collect(),
    })
}

/// Blends texture `tex` into `img` inside `mask` with transparency `beta`:
/// masked pixels become `(1 - beta) * img + beta * tex`, pixels outside the
/// mask are bit-identical to `img`.
pub fn blend_anomaly(
    img: &Image,
    tex: &Image,
    mask: &Mask,
    beta: f32,
) -> SynthResult<AnomalySample> {
    if img.height != tex.height
        || img.width != tex.width
        || img.height != mask.height
        || img.width != mask.width
        || img.channels != tex.channels
    {
        return Err(SynthError::Argument(
            "blend_anomaly inputs must share dimensions".into(),
        ));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(SynthError::Argument(format!(
            "beta must be in [0,1], got {beta}"
        )));
    }
    let mut blended = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            if mask.get(y, x) != 0 {
                for c in 0..img.channels {
                    let v = (1.0 - beta) * img.get(y, x, c) + beta * tex.get(y, x, c);
                    blended.set(y, x, c, v);
                }
            }
        }
    }
    let is_anomalous = !mask.is_empty();
    Ok(AnomalySample {
        image: blended,
        normal: img.clone(),
        mask: mask.clone(),
        beta,
        is_anomalous,
    })
}

/// Deterministic multi-octave Perlin color texture.
///
/// Three octaves of noise pick the mix between two seeded palette colors.
pub fn procedural_texture(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = rng::stream(seed, "texture-palette", 0);
    let c0: [f32; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let c1: [f32; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let octaves: [(usize, f32); 3] = [(4, 1.0), (8, 0.5), (16, 0.25)];
    let mut field = vec![0.0f32; h * w];
    let mut norm = 0.0f32;
    for (i, &(period, weight)) in octaves.iter().enumerate() {
        let f = perlin(h, w, period, rng::child_seed(seed, "texture-octave", i as u64))
            .expect("octave period >= 1");
        for (acc, v) in field.iter_mut().zip(&f.data) {
            *acc += weight * v;
        }
        norm += weight;
    }
    let mut img = Image::new(h, w, 3);
    for (i, &v) in field.iter().enumerate() {
        let t = ((v / norm) * 0.5 + 0.5).clamp(0.0, 1.0);
        for c in 0..3 {
            img.data[i * 3 + c] = c0[c] + t * (c1[c] - c0[c]);
        }
    }
    img
}

/// Produces a blend texture of the requested size.
///
/// Procedural mode emits a deterministic multi-octave texture; folder mode
/// picks one PNG uniformly by seed and resizes it. An empty folder is a
/// configuration error.
pub fn texture_source(
    mode: &TextureSource,
    h: usize,
    w: usize,
    seed: u64,
) -> SynthResult<Image> {
    match mode {
        TextureSource::Procedural => Ok(procedural_texture(h, w, seed)),
        TextureSource::Folder(dir) => {
            let mut files: Vec<PathBuf> = fs::read_dir(dir)
                .map_err(|e| SynthError::Config(format!("texture folder {dir:?}: {e}")))?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| {
                    p.extension()
                        .and_then(|e| e.to_str())
                        .map(|e| e.eq_ignore_ascii_case("png"))
                        .unwrap_or(false)
                })
                .collect();
            if files.is_empty() {
                return Err(SynthError::Config(format!(
                    "texture folder {dir:?} contains no PNG files"
                )));
            }
            files.sort();
            let mut rng = rng::stream(seed, "texture-pick", 0);
            let img = crate::imagery::load_image(&files[rng.gen_range(0..files.len())])?;
            Ok(crate::imagery::resize(&img, h, w)?)
        }
    }
}

/// Knobs of the augmentation policy.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentPolicy {
    /// Number of augmented samples to emit.
    pub count: usize,
    /// Probability that a sample receives a blended pseudo-anomaly.
    pub anomaly_prob: f64,
    /// Perlin lattice periods sampled per anomaly.
    pub periods: Vec<usize>,
    /// Binarization threshold on the `[-1, 1]` noise field.
    pub threshold: f32,
    /// Transparency factor range.
    pub beta_range: (f32, f32),
    /// Rotation range in degrees (symmetric).
    pub max_rotation_deg: f32,
    /// Texture source for blended defects.
    pub texture: TextureSource,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            count: 80,
            anomaly_prob: 0.7,
            periods: vec![2, 4, 8, 16, 32],
            threshold: 0.5,
            beta_range: (0.15, 1.0),
            max_rotation_deg: 90.0,
            texture: TextureSource::Procedural,
        }
    }
}

/// Emits `policy.count` augmented samples from one normal image.
///
/// Each sample rotates the source uniformly within the configured range
/// (reflection padding), then with probability `anomaly_prob` blends a
/// texture through the intersection of a fresh Perlin mask and the rotated
/// image's foreground mask. An anomaly draw whose composed mask comes up
/// empty retries with fresh noise a few times before degrading to a normal
/// sample, so the realized anomaly fraction tracks the configured
/// probability.
pub fn augment(img: &Image, policy: &AugmentPolicy, master_seed: u64) -> SynthResult<Vec<AnomalySample>> {
    if policy.count == 0 {
        return Err(SynthError::Argument("augment count must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(policy.count);
    for i in 0..policy.count {
        out.push(augment_one(img, policy, master_seed, i as u64)?);
    }
    Ok(out)
}

fn augment_one(
    img: &Image,
    policy: &AugmentPolicy,
    master_seed: u64,
    index: u64,
) -> SynthResult<AnomalySample> {
    let mut rng = rng::stream(master_seed, "augment", index);
    let angle = rng.gen_range(-policy.max_rotation_deg..policy.max_rotation_deg);
    let rotated = rotate_reflect(img, angle);
    let make_anomaly = rng.gen_bool(policy.anomaly_prob);
    if make_anomaly {
        let fg = foreground_mask(&rotated);
        // retry fresh noise draws if the composed mask comes up empty
        for attempt in 0..8u64 {
            let period = policy.periods[rng.gen_range(0..policy.periods.len())];
            let field_seed = rng::child_seed(master_seed, "perlin-field", index * 16 + attempt);
            let field = perlin(rotated.height, rotated.width, period, field_seed)?;
            let mp = perlin_mask(&field, policy.threshold);
            let mask = compose_mask(&fg, &mp)?;
            if mask.is_empty() {
                continue;
            }
            let tex_seed = rng::child_seed(master_seed, "texture", index * 16 + attempt);
            let tex = texture_source(&policy.texture, rotated.height, rotated.width, tex_seed)?;
            let beta = rng.gen_range(policy.beta_range.0..=policy.beta_range.1);
            return blend_anomaly(&rotated, &tex, &mask, beta);
        }
    }
    Ok(AnomalySample {
        image: rotated.clone(),
        normal: rotated.clone(),
        mask: Mask::new(rotated.height, rotated.width),
        beta: 0.0,
        is_anomalous: false,
    })
}

/// Adds i.i.d. Gaussian noise to every feature element; deterministic in
/// `spec.seed`.
pub fn perturb_features(q: &FeatureMap, spec: &NoiseSpec) -> SynthResult<FeatureMap> {
    if spec.std <= 0.0 {
        return Err(SynthError::Argument(format!(
            "noise std must be > 0, got {}",
            spec.std
        )));
    }
    let normal = Normal::new(spec.mean as f64, spec.std as f64)
        .map_err(|e| SynthError::Argument(e.to_string()))?;
    let mut rng = rng::stream(spec.seed, "feature-noise", 0);
    let mut out = q.clone();
    for v in out.data.iter_mut() {
        *v += normal.sample(&mut rng) as f32;
    }
    Ok(out)
}

/// Exports augmented samples to `dir` as PNG/PGM pairs plus a manifest with
/// one `path,mask_path,is_anomalous,beta` line per sample.
pub fn export_samples(samples: &[AnomalySample], dir: &Path) -> SynthResult<()> {
    fs::create_dir_all(dir).map_err(|e| SynthError::Config(format!("create {dir:?}: {e}")))?;
    let mut manifest = String::new();
    for (i, s) in samples.iter().enumerate() {
        let img_name = format!("sample_{i:04}.png");
        let mask_name = format!("sample_{i:04}_mask.pgm");
        crate::imagery::save_png(&s.image, &dir.join(&img_name))?;
        crate::imagery::save_mask(&s.mask, &dir.join(&mask_name))?;
        manifest.push_str(&format!(
            "{img_name},{mask_name},{},{:.6}\n",
            s.is_anomalous, s.beta
        ));
    }
    fs::write(dir.join("manifest.txt"), manifest)
        .map_err(|e| SynthError::Config(format!("write manifest: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perlin_is_zero_at_lattice_corners() {
        // 16x16 field with period 4: lattice corners every 4 pixels
        let f = perlin(16, 16, 4, 99).unwrap();
        for cy in (0..16).step_by(4) {
            for cx in (0..16).step_by(4) {
                assert_eq!(f.data[cy * 16 + cx], 0.0, "corner ({cy},{cx})");
            }
        }
    }

    #[test]
    fn perlin_is_deterministic_and_seeded() {
        let a = perlin(32, 24, 8, 7).unwrap();
        let b = perlin(32, 24, 8, 7).unwrap();
        assert_eq!(a.data, b.data);
        let c = perlin(32, 24, 8, 8).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn perlin_range_and_mean() {
        let mut worst: f32 = 0.0;
        for seed in 0..4 {
            let f = perlin(256, 256, 8, seed).unwrap();
            let mean = f.data.iter().sum::<f32>() / f.data.len() as f32;
            worst = worst.max(mean.abs());
            assert!(f.data.iter().all(|&v| (-1.0..=1.0).contains(&v)));
        }
        assert!(worst < 0.05, "field mean drifted: {worst}");
    }

    #[test]
    fn perlin_is_smooth() {
        let period = 8usize;
        for seed in [1, 2, 3] {
            let f = perlin(128, 128, period, seed).unwrap();
            let mut max_step: f32 = 0.0;
            for y in 0..128 {
                for x in 0..127 {
                    max_step = max_step.max((f.data[y * 128 + x + 1] - f.data[y * 128 + x]).abs());
                }
            }
            assert!(max_step < 8.0 / period as f32, "seed {seed}: {max_step}");
        }
    }

    #[test]
    fn perlin_rejects_zero_period() {
        assert!(perlin(8, 8, 0, 1).is_err());
    }

    #[test]
    fn perlin_mask_boundaries_and_brute_force() {
        let f = perlin(32, 32, 4, 5).unwrap();
        assert!(perlin_mask(&f, 1.0).is_empty());
        // threshold -1.0: every value is strictly above the lower bound
        assert_eq!(perlin_mask(&f, -1.0).count(), 32 * 32);
        let m = perlin_mask(&f, 0.5);
        for (i, &v) in f.data.iter().enumerate() {
            assert_eq!(m.data[i], (v > 0.5) as u8);
        }
    }

    #[test]
    fn compose_mask_identity_absorbing_and_min() {
        let f = perlin(16, 16, 4, 2).unwrap();
        let m = perlin_mask(&f, 0.3);
        let ones = Mask::filled(16, 16);
        let zeros = Mask::new(16, 16);
        assert_eq!(compose_mask(&m, &ones).unwrap(), m);
        assert!(compose_mask(&zeros, &m).unwrap().is_empty());
        let g = perlin_mask(&perlin(16, 16, 2, 3).unwrap(), 0.0);
        let both = compose_mask(&m, &g).unwrap();
        for i in 0..both.data.len() {
            assert_eq!(both.data[i], m.data[i].min(g.data[i]));
        }
        let small = Mask::new(8, 8);
        assert!(compose_mask(&m, &small).is_err());
    }

    #[test]
    fn blend_contract() {
        let img = Image::constant(8, 8, 3, 0.2);
        let tex = Image::constant(8, 8, 3, 0.6);
        let empty = Mask::new(8, 8);
        let s = blend_anomaly(&img, &tex, &empty, 0.7).unwrap();
        assert_eq!(s.image, img);
        assert!(!s.is_anomalous);

        let full = Mask::filled(8, 8);
        let s = blend_anomaly(&img, &tex, &full, 1.0).unwrap();
        assert_eq!(s.image, tex);
        assert!(s.is_anomalous);

        let s = blend_anomaly(&img, &tex, &full, 0.5).unwrap();
        assert!((s.image.get(3, 3, 0) - 0.4).abs() < 1e-7);

        let wrong = Image::constant(4, 4, 3, 0.1);
        assert!(blend_anomaly(&img, &wrong, &full, 0.5).is_err());
    }

    #[test]
    fn procedural_texture_is_deterministic() {
        let a = texture_source(&TextureSource::Procedural, 32, 32, 5).unwrap();
        let b = texture_source(&TextureSource::Procedural, 32, 32, 5).unwrap();
        assert_eq!(a, b);
        let c = texture_source(&TextureSource::Procedural, 32, 32, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn folder_texture_singleton_and_uniformity() {
        let dir = std::env::temp_dir().join("dfd_synth_texdir");
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        // empty folder is a configuration error
        let err = texture_source(&TextureSource::Folder(dir.clone()), 16, 16, 0).unwrap_err();
        assert!(matches!(err, SynthError::Config(_)));

        // 0.2 survives the 8-bit PNG round trip exactly (0.2 * 255 = 51)
        let single = Image::constant(16, 16, 3, 0.2);
        crate::imagery::save_png(&single, &dir.join("only.png")).unwrap();
        let got = texture_source(&TextureSource::Folder(dir.clone()), 16, 16, 9).unwrap();
        assert!(got.max_abs_diff(&single) < 1e-6);

        // k files: selection frequencies within 3 sigma of uniform
        let k = 4usize;
        for i in 1..k {
            let img = Image::constant(16, 16, 3, 0.2 + 0.2 * i as f32);
            crate::imagery::save_png(&img, &dir.join(format!("t{i}.png"))).unwrap();
        }
        let n = 2000usize;
        let mut counts = vec![0usize; k];
        for seed in 0..n as u64 {
            let img = texture_source(&TextureSource::Folder(dir.clone()), 16, 16, seed).unwrap();
            let idx = (img.data[0] * 5.0).round() as usize - 1; // 0.2 steps
            counts[idx] += 1;
        }
        let expected = n as f64 / k as f64;
        let sigma = (n as f64 * (1.0 / k as f64) * (1.0 - 1.0 / k as f64)).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - expected).abs() < 3.0 * sigma,
                "file {i} drawn {c} times (expected {expected:.0} +- {:.0})",
                3.0 * sigma
            );
        }
    }

    fn checker_source() -> Image {
        let mut img = Image::constant(32, 32, 3, 0.15);
        for y in 8..24 {
            for x in 8..24 {
                for c in 0..3 {
                    img.set(y, x, c, 0.85);
                }
            }
        }
        img
    }

    #[test]
    fn augment_emits_exact_count_and_reproduces() {
        let img = checker_source();
        let policy = AugmentPolicy {
            count: 12,
            ..AugmentPolicy::default()
        };
        let a = augment(&img, &policy, 31).unwrap();
        assert_eq!(a.len(), 12);
        let b = augment(&img, &policy, 31).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.mask, y.mask);
            assert_eq!(x.is_anomalous, y.is_anomalous);
        }
    }

    #[test]
    fn augment_zero_probability_is_all_normal() {
        let img = checker_source();
        let policy = AugmentPolicy {
            count: 10,
            anomaly_prob: 0.0,
            ..AugmentPolicy::default()
        };
        for s in augment(&img, &policy, 1).unwrap() {
            assert!(!s.is_anomalous);
            assert!(s.mask.is_empty());
            assert_eq!(s.image, s.normal);
        }
    }

    #[test]
    fn augment_anomalous_fraction_tracks_probability() {
        let img = checker_source();
        let policy = AugmentPolicy {
            count: 10_000,
            anomaly_prob: 0.7,
            ..AugmentPolicy::default()
        };
        let samples = augment(&img, &policy, 424_242).unwrap();
        let frac = samples.iter().filter(|s| s.is_anomalous).count() as f64 / 10_000.0;
        assert!((frac - 0.7).abs() < 0.02, "anomalous fraction {frac}");
    }

    #[test]
    fn augment_masks_stay_in_foreground_and_pixels_match_outside() {
        let img = checker_source();
        let policy = AugmentPolicy {
            count: 40,
            anomaly_prob: 1.0,
            ..AugmentPolicy::default()
        };
        for s in augment(&img, &policy, 77).unwrap() {
            let fg = foreground_mask(&s.normal);
            for i in 0..s.mask.data.len() {
                assert!(s.mask.data[i] <= fg.data[i], "mask escaped foreground");
            }
            for y in 0..32 {
                for x in 0..32 {
                    if s.mask.get(y, x) == 0 {
                        for c in 0..3 {
                            assert_eq!(s.image.get(y, x, c), s.normal.get(y, x, c));
                        }
                    }
                }
            }
            assert_eq!(s.is_anomalous, !s.mask.is_empty());
        }
    }

    #[test]
    fn perturb_is_seeded_and_centered() {
        let q = FeatureMap {
            grid_h: 16,
            grid_w: 16,
            channels: 32,
            data: vec![0.5; 16 * 16 * 32],
        };
        let spec = NoiseSpec {
            mean: 0.0,
            std: 0.015,
            seed: 3,
        };
        let a = perturb_features(&q, &spec).unwrap();
        let b = perturb_features(&q, &spec).unwrap();
        assert_eq!(a.data, b.data);

        let n = a.data.len() as f64;
        let mean_delta: f64 = a
            .data
            .iter()
            .zip(&q.data)
            .map(|(&x, &y)| (x - y) as f64)
            .sum::<f64>()
            / n;
        let sigma_of_mean = 0.015 / n.sqrt();
        assert!(mean_delta.abs() < 3.0 * sigma_of_mean, "mean {mean_delta}");

        // degenerate std behaves like identity
        let tiny = perturb_features(
            &q,
            &NoiseSpec {
                mean: 0.0,
                std: 1e-12,
                seed: 3,
            },
        )
        .unwrap();
        for (x, y) in tiny.data.iter().zip(&q.data) {
            assert!((x - y).abs() < 1e-9);
        }

        assert!(perturb_features(
            &q,
            &NoiseSpec {
                mean: 0.0,
                std: 0.0,
                seed: 0
            }
        )
        .is_err());
    }

    #[test]
    fn export_writes_manifest_one_line_per_sample() {
        let dir = std::env::temp_dir().join("dfd_synth_export");
        let _ = fs::remove_dir_all(&dir);
        let img = checker_source();
        let policy = AugmentPolicy {
            count: 5,
            ..AugmentPolicy::default()
        };
        let samples = augment(&img, &policy, 3).unwrap();
        export_samples(&samples, &dir).unwrap();
        let manifest = fs::read_to_string(dir.join("manifest.txt")).unwrap();
        assert_eq!(manifest.lines().count(), 5);
    }
}
