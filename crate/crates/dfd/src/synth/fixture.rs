//! Synthetic texture fixture in MVTec-style layout.
//!
//! Five categories of textured objects on a dark background. Normal images
//! vary the texture realization per image; defective test images blend a
//! contrasting fine-grained texture through a Perlin-shaped blob confined to
//! the object, and write the exact blob as the ground-truth mask. The whole
//! tree is a deterministic function of the master seed.
//!
//! Layout per category:
//! `<cat>/train/good/*.png`, `<cat>/test/good/*.png`,
//! `<cat>/test/blot/*.png`, `<cat>/ground_truth/blot/*_mask.pgm`.

use std::fs;
use std::path::Path;

use rand::Rng;

use super::{blend_anomaly, perlin, perlin_mask, SynthError, SynthResult};
use crate::imagery::{save_mask, save_png, Image, Mask};
use crate::rng;

/// The five fixture categories.
pub const CATEGORY_NAMES: [&str; 5] = ["braid", "marble", "mesh", "pebble", "swirl"];

/// Shape of a category's object region.
#[derive(Debug, Clone, Copy)]
enum ObjectShape {
    Ellipse,
    RoundedRect,
}

struct CategoryParams {
    base_period: usize,
    octave_period: usize,
    shape: ObjectShape,
    defect_period: usize,
}

fn category_params(index: usize) -> CategoryParams {
    match index % 5 {
        0 => CategoryParams {
            base_period: 8,
            octave_period: 16,
            shape: ObjectShape::Ellipse,
            defect_period: 16,
        },
        1 => CategoryParams {
            base_period: 4,
            octave_period: 8,
            shape: ObjectShape::RoundedRect,
            defect_period: 32,
        },
        2 => CategoryParams {
            base_period: 16,
            octave_period: 32,
            shape: ObjectShape::Ellipse,
            defect_period: 16,
        },
        3 => CategoryParams {
            base_period: 8,
            octave_period: 32,
            shape: ObjectShape::RoundedRect,
            defect_period: 16,
        },
        _ => CategoryParams {
            base_period: 4,
            octave_period: 16,
            shape: ObjectShape::Ellipse,
            defect_period: 32,
        },
    }
}

/// Sizing knobs of the generated tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixtureSpec {
    pub resolution: usize,
    pub categories: usize,
    pub train_good: usize,
    pub test_good: usize,
    pub test_defect: usize,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            resolution: 64,
            categories: 5,
            train_good: 4,
            test_good: 10,
            test_defect: 10,
        }
    }
}

fn object_mask(res: usize, shape: ObjectShape, jitter: f32) -> Mask {
    let mut mask = Mask::new(res, res);
    let c = (res as f32 - 1.0) / 2.0;
    let half = res as f32 * (0.38 + 0.03 * jitter);
    for y in 0..res {
        for x in 0..res {
            let dy = (y as f32 - c) / half;
            let dx = (x as f32 - c) / half;
            let inside = match shape {
                ObjectShape::Ellipse => dx * dx + dy * dy <= 1.0,
                ObjectShape::RoundedRect => {
                    let q = dx.abs().max(dy.abs());
                    let corner = (dx * dx + dy * dy).sqrt();
                    q <= 0.92 || corner <= 1.05
                }
            };
            if inside {
                mask.set(y, x, 1);
            }
        }
    }
    mask
}

/// Two-octave colorized texture between palette anchors `c0` and `c1`.
fn colorized_texture(
    res: usize,
    periods: (usize, usize),
    c0: [f32; 3],
    c1: [f32; 3],
    seed: u64,
) -> SynthResult<Image> {
    let f0 = perlin(res, res, periods.0, rng::child_seed(seed, "tex-oct0", 0))?;
    let f1 = perlin(res, res, periods.1, rng::child_seed(seed, "tex-oct1", 0))?;
    let mut img = Image::new(res, res, 3);
    for i in 0..res * res {
        let v = 0.7 * f0.data[i] + 0.3 * f1.data[i];
        let t = (v * 0.5 + 0.5).clamp(0.0, 1.0);
        for c in 0..3 {
            img.data[i * 3 + c] = c0[c] + t * (c1[c] - c0[c]);
        }
    }
    Ok(img)
}

/// Bright, low-contrast palettes for the normal object textures; a compact
/// appearance keeps the normal feature cloud tight.
fn bright_palette(rng: &mut impl Rng) -> ([f32; 3], [f32; 3]) {
    let c0 = [
        rng.gen_range(0.55..0.7),
        rng.gen_range(0.55..0.7),
        rng.gen_range(0.55..0.7),
    ];
    let c1 = [
        (c0[0] + rng.gen_range(0.12..0.22f32)).min(1.0),
        (c0[1] + rng.gen_range(0.12..0.22f32)).min(1.0),
        (c0[2] + rng.gen_range(0.12..0.22f32)).min(1.0),
    ];
    (c0, c1)
}

/// Saturated palettes for defect textures. A strong channel imbalance
/// survives the extractor's pooling, the way real blotch/stain defects keep
/// their color identity at patch scale.
fn defect_palette(rng: &mut impl Rng) -> ([f32; 3], [f32; 3]) {
    let anchors: [([f32; 3], [f32; 3]); 4] = [
        ([0.75, 0.05, 0.05], [1.0, 0.3, 0.1]),  // red
        ([0.05, 0.45, 0.05], [0.2, 0.8, 0.2]),  // green
        ([0.05, 0.1, 0.6], [0.2, 0.35, 1.0]),   // blue
        ([0.05, 0.05, 0.08], [0.3, 0.28, 0.3]), // near-black
    ];
    let (mut c0, mut c1) = anchors[rng.gen_range(0..anchors.len())];
    for c in 0..3 {
        c0[c] = (c0[c] + rng.gen_range(-0.04..0.04)).clamp(0.0, 1.0);
        c1[c] = (c1[c] + rng.gen_range(-0.04..0.04)).clamp(0.0, 1.0);
    }
    (c0, c1)
}

/// One normal image of a category: textured object over a dark background.
pub fn normal_image(
    res: usize,
    category: usize,
    master_seed: u64,
    image_seed: u64,
) -> SynthResult<(Image, Mask)> {
    let params = category_params(category);
    // palette is a per-category constant, texture realization varies per image
    let mut pal_rng = rng::stream(master_seed, "cat-palette", category as u64);
    let (c0, c1) = bright_palette(&mut pal_rng);
    let mut img_rng = rng::stream(master_seed, "image", image_seed);
    let jitter = img_rng.gen_range(-1.0f32..1.0);
    let tex = colorized_texture(
        res,
        (params.base_period, params.octave_period),
        c0,
        c1,
        rng::child_seed(master_seed, "image-texture", image_seed),
    )?;
    let object = object_mask(res, params.shape, jitter);
    let bg_noise = perlin(res, res, 4, rng::child_seed(master_seed, "bg", image_seed))?;
    let mut img = Image::new(res, res, 3);
    for i in 0..res * res {
        if object.data[i] != 0 {
            for c in 0..3 {
                img.data[i * 3 + c] = tex.data[i * 3 + c];
            }
        } else {
            let v = (0.07 + 0.02 * bg_noise.data[i]).clamp(0.0, 1.0);
            for c in 0..3 {
                img.data[i * 3 + c] = v;
            }
        }
    }
    Ok((img, object))
}

/// Shrinks a mask by `r` pixels (square structuring element).
fn erode(mask: &Mask, r: usize) -> Mask {
    let (h, w) = (mask.height, mask.width);
    let mut out = Mask::new(h, w);
    for y in 0..h {
        'pix: for x in 0..w {
            if mask.get(y, x) == 0 {
                continue;
            }
            for dy in -(r as isize)..=r as isize {
                for dx in -(r as isize)..=r as isize {
                    let (ny, nx) = (y as isize + dy, x as isize + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue 'pix;
                    }
                    if mask.get(ny as usize, nx as usize) == 0 {
                        continue 'pix;
                    }
                }
            }
            out.set(y, x, 1);
        }
    }
    out
}

/// One defective image: a normal image with a fine-texture blob blended in.
/// Returns the image and its ground-truth mask.
pub fn defective_image(
    res: usize,
    category: usize,
    master_seed: u64,
    image_seed: u64,
) -> SynthResult<(Image, Mask)> {
    let params = category_params(category);
    let (base, object) = normal_image(res, category, master_seed, image_seed)?;
    let interior = erode(&object, res / 32 + 1);
    let mut rng = rng::stream(master_seed, "defect", image_seed);
    let min_px = (res * res) / 64;
    let max_px = interior.count() * 2 / 5;
    for attempt in 0..32u64 {
        let period = if rng.gen_bool(0.5) { 2 } else { 4 };
        let field = perlin(
            res,
            res,
            period,
            rng::child_seed(master_seed, "defect-field", image_seed * 64 + attempt),
        )?;
        let blob = perlin_mask(&field, 0.4);
        let mut mask = Mask::new(res, res);
        for i in 0..res * res {
            mask.data[i] = blob.data[i] & interior.data[i];
        }
        let count = mask.count();
        if count < min_px || count > max_px.max(min_px + 1) {
            continue;
        }
        let mut pal_rng = rng::stream(master_seed, "defect-palette", image_seed);
        let (c0, c1) = defect_palette(&mut pal_rng);
        let tex = colorized_texture(
            res,
            (params.defect_period, params.defect_period * 2),
            c0,
            c1,
            rng::child_seed(master_seed, "defect-texture", image_seed),
        )?;
        let beta = rng.gen_range(0.65..0.95);
        let sample = blend_anomaly(&base, &tex, &mask, beta)?;
        return Ok((sample.image, mask));
    }
    Err(SynthError::Config(format!(
        "category {category}, image {image_seed}: no usable defect mask in 32 attempts"
    )))
}

/// Writes the full fixture tree under `root`; returns the category names.
pub fn generate_fixture(
    root: &Path,
    spec: &FixtureSpec,
    master_seed: u64,
) -> SynthResult<Vec<String>> {
    if spec.resolution < 32 || spec.resolution % 16 != 0 {
        return Err(SynthError::Argument(format!(
            "fixture resolution must be a multiple of 16 and >= 32, got {}",
            spec.resolution
        )));
    }
    let mkdir = |p: &Path| {
        fs::create_dir_all(p).map_err(|e| SynthError::Config(format!("create {p:?}: {e}")))
    };
    let mut names = Vec::new();
    for cat in 0..spec.categories {
        let name = if cat < CATEGORY_NAMES.len() {
            CATEGORY_NAMES[cat].to_string()
        } else {
            format!("extra{cat}")
        };
        let cat_dir = root.join(&name);
        mkdir(&cat_dir.join("train").join("good"))?;
        mkdir(&cat_dir.join("test").join("good"))?;
        mkdir(&cat_dir.join("test").join("blot"))?;
        mkdir(&cat_dir.join("ground_truth").join("blot"))?;

        // image seeds partitioned by split so sets never collide
        for i in 0..spec.train_good {
            let (img, _) = normal_image(spec.resolution, cat, master_seed, i as u64)?;
            save_png(&img, &cat_dir.join(format!("train/good/{i:03}.png")))?;
        }
        for i in 0..spec.test_good {
            let (img, _) =
                normal_image(spec.resolution, cat, master_seed, 1000 + i as u64)?;
            save_png(&img, &cat_dir.join(format!("test/good/{i:03}.png")))?;
        }
        for i in 0..spec.test_defect {
            let (img, mask) =
                defective_image(spec.resolution, cat, master_seed, 2000 + i as u64)?;
            save_png(&img, &cat_dir.join(format!("test/blot/{i:03}.png")))?;
            save_mask(
                &mask,
                &cat_dir.join(format!("ground_truth/blot/{i:03}_mask.pgm")),
            )?;
        }
        names.push(name);
    }
    Ok(names)
}
