//! Few-shot training loop, inference scoring, and run artifacts.
//!
//! Training: every reference image is augmented into a fixed set of samples,
//! frozen backbone features are precomputed per sample and frequency band,
//! and each step rebuilds a tape over the adaptor and the enabled
//! discriminators, applies the combined loss, and takes one Adam step with
//! per-network learning rates. Everything is a deterministic function of the
//! config and its seed.
//!
//! Inference: a test image is resized, standardized, split into bands,
//! scored by every enabled discriminator, and the per-discriminator maps are
//! negated (anomalous = high), min-max scaled per image, averaged, and
//! interpolated back to image resolution. The image score is the maximum of
//! the final map.

pub mod config;

pub use config::TrainConfig;

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::{
    adam_step, load_dfdw, save_dfdw, AdamHyper, AutodiffError, NamedTensor, ParamStore, Tape,
    Tensor, TensorId,
};
use crate::backbone::{adapt, identity_adaptor, Backbone, BackboneKind, BackboneSpec, FeatureMap};
use crate::discriminators::{GaussianDisc, PerlinDisc, ScoreMap};
use crate::eval::Metrics;
use crate::imagery::{resize, standardize, Image, Mask};
use crate::losses::{
    cls_loss, gaussian_loss, pixel_loss, pool_mask, similarity_loss, total_loss, LossBundle,
};
use crate::rng;
use crate::synth::augment;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("numeric failure at step {step}: {detail}")]
    Numeric { step: usize, detail: String },
    #[error("I/O error: {0}")]
    Io(String),
}

impl From<crate::imagery::ImageryError> for RunError {
    fn from(e: crate::imagery::ImageryError) -> Self {
        use crate::imagery::ImageryError::*;
        match e {
            Argument(msg) => RunError::Argument(msg),
            other => RunError::Io(other.to_string()),
        }
    }
}

impl From<crate::synth::SynthError> for RunError {
    fn from(e: crate::synth::SynthError) -> Self {
        use crate::synth::SynthError::*;
        match e {
            Argument(msg) => RunError::Argument(msg),
            Config(msg) => RunError::Config(msg),
            Imagery(err) => err.into(),
        }
    }
}

impl From<crate::frequency::FrequencyError> for RunError {
    fn from(e: crate::frequency::FrequencyError) -> Self {
        RunError::Argument(e.to_string())
    }
}

impl From<crate::backbone::BackboneError> for RunError {
    fn from(e: crate::backbone::BackboneError) -> Self {
        use crate::backbone::BackboneError::*;
        match e {
            Config(msg) => RunError::Config(msg),
            Argument(msg) => RunError::Argument(msg),
            Frequency(err) => err.into(),
        }
    }
}

impl From<AutodiffError> for RunError {
    fn from(e: AutodiffError) -> Self {
        match e {
            AutodiffError::NonFinite(op) => RunError::Numeric {
                step: 0,
                detail: format!("non-finite output of {op}"),
            },
            AutodiffError::Checkpoint(msg) => RunError::Io(msg),
            other => RunError::Argument(other.to_string()),
        }
    }
}

impl From<crate::losses::LossError> for RunError {
    fn from(e: crate::losses::LossError) -> Self {
        use crate::losses::LossError::*;
        match e {
            Argument(msg) => RunError::Argument(msg),
            Config(msg) => RunError::Config(msg),
            Autodiff(err) => err.into(),
        }
    }
}

impl From<crate::eval::EvalError> for RunError {
    fn from(e: crate::eval::EvalError) -> Self {
        use crate::eval::EvalError::*;
        match e {
            Layout(msg) => RunError::Config(msg),
            Undefined(msg) | Argument(msg) => RunError::Argument(msg),
        }
    }
}

impl RunError {
    /// Process exit code: 2 for config/argument errors, 3 for numeric ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Argument(_) => 2,
            RunError::Numeric { .. } => 3,
            RunError::Io(_) => 1,
        }
    }
}

pub type RunResult<T> = Result<T, RunError>;

/// A trained model: frozen trunk, trainable parameters, and wiring.
pub struct ModelBundle {
    pub backbone: Backbone,
    pub store: ParamStore<f32>,
    pub adaptor: usize,
    pub gauss: Option<GaussianDisc>,
    pub perlin: Option<PerlinDisc>,
    pub grid: (usize, usize),
    pub config: TrainConfig,
}

impl ModelBundle {
    /// All weights (trunk + trained parameters) as named tensors.
    pub fn tensors(&self) -> Vec<NamedTensor> {
        let mut out = self.backbone.tensors();
        for i in 0..self.store.len() {
            let t = self.store.value(i);
            out.push(NamedTensor {
                name: self.store.name(i).to_string(),
                shape: if t.shape.is_empty() {
                    vec![1]
                } else {
                    t.shape.clone()
                },
                data: t.data.clone(),
            });
        }
        out
    }

    /// Writes `model.dfdw` and `config.txt` under `dir`.
    pub fn save(&self, dir: &Path) -> RunResult<()> {
        fs::create_dir_all(dir).map_err(|e| RunError::Io(format!("create {dir:?}: {e}")))?;
        save_dfdw(&self.tensors(), &dir.join("model.dfdw"))?;
        fs::write(dir.join("config.txt"), self.config.snapshot())
            .map_err(|e| RunError::Io(format!("write config: {e}")))?;
        Ok(())
    }

    /// Loads a bundle written by [`ModelBundle::save`].
    pub fn load(dir: &Path) -> RunResult<Self> {
        let cfg_text = fs::read_to_string(dir.join("config.txt"))
            .map_err(|e| RunError::Io(format!("read config: {e}")))?;
        let config = TrainConfig::parse(&cfg_text)?;
        let tensors = load_dfdw(&dir.join("model.dfdw"))?;
        let trunk: Vec<NamedTensor> = tensors
            .iter()
            .filter(|t| t.name.starts_with("trunk."))
            .cloned()
            .collect();
        let backbone = Backbone::from_tensors(&trunk, config.aggregation)?;
        let mut store = ParamStore::<f32>::new();
        for t in tensors.iter().filter(|t| !t.name.starts_with("trunk.")) {
            store.add(&t.name, Tensor::new(t.shape.clone(), t.data.clone()));
        }
        let grid = (
            config.resolution / crate::backbone::FEATURE_STRIDE,
            config.resolution / crate::backbone::FEATURE_STRIDE,
        );
        let c = crate::backbone::FEATURE_CHANNELS;
        let adaptor = (0..store.len())
            .find(|&i| store.name(i) == "adaptor.w")
            .ok_or_else(|| RunError::Io("checkpoint is missing 'adaptor.w'".into()))?;
        let gauss = if config.gaussian_disc_on {
            Some(GaussianDisc::attach(&store, c)?)
        } else {
            None
        };
        let perlin = if config.perlin_disc_on {
            Some(PerlinDisc::attach(&store, c, grid.0, grid.1)?)
        } else {
            None
        };
        Ok(Self {
            backbone,
            store,
            adaptor,
            gauss,
            perlin,
            grid,
            config,
        })
    }
}

/// Precomputed frozen features of one augmented sample.
struct PrepSample {
    normal: Vec<FeatureMap>,
    /// `None` for normal samples: the anomalous bands equal the normal ones.
    anomalous: Option<Vec<FeatureMap>>,
    pooled: Mask,
    tau: f64,
}

/// Extracts per-band features of a standardized image.
fn extract_bands(backbone: &Backbone, std_img: &Image, mfic: bool) -> RunResult<Vec<FeatureMap>> {
    if mfic {
        let (low, high) = backbone.extract_pair(std_img)?;
        Ok(vec![low, high])
    } else {
        Ok(vec![backbone.extract(std_img)?])
    }
}

/// Result of a training run.
pub struct TrainOutcome {
    pub bundle: ModelBundle,
    /// CSV lines `step,sim,gau,pix,cls,per,total`, one per optimizer step.
    pub loss_log: String,
    pub steps: usize,
    pub final_losses: Option<LossBundle>,
}

/// Trains a model from normal reference images.
pub fn train(shots: &[Image], cfg: &TrainConfig) -> RunResult<TrainOutcome> {
    cfg.validate()?;
    if shots.is_empty() || shots.len() > 16 {
        return Err(RunError::Argument(format!(
            "training needs 1..=16 reference images, got {}",
            shots.len()
        )));
    }
    let seed = cfg.seed;
    let backbone = if cfg.backbone_import.is_empty() {
        Backbone::from_spec(&BackboneSpec {
            kind: BackboneKind::DeterministicRandomConv {
                seed: rng::child_seed(seed, "backbone", 0),
            },
            aggregation: cfg.aggregation,
        })?
    } else {
        Backbone::from_spec(&BackboneSpec {
            kind: BackboneKind::ImportedWeights {
                path: cfg.backbone_import.clone().into(),
            },
            aggregation: cfg.aggregation,
        })?
    };

    // fixed augmented sample set
    let policy = cfg.augment_policy();
    let mut samples = Vec::new();
    for (i, shot) in shots.iter().enumerate() {
        let shot = resize(shot, cfg.resolution, cfg.resolution)?;
        samples.extend(augment(&shot, &policy, rng::child_seed(seed, "shot", i as u64))?);
    }

    // frozen features per sample
    let mut prep = Vec::with_capacity(samples.len());
    let mut grid = (0usize, 0usize);
    for s in &samples {
        let normal = extract_bands(&backbone, &standardize(&s.normal), cfg.mfic_on)?;
        grid = (normal[0].grid_h, normal[0].grid_w);
        let anomalous = if s.is_anomalous {
            Some(extract_bands(&backbone, &standardize(&s.image), cfg.mfic_on)?)
        } else {
            None
        };
        let pooled = pool_mask(&s.mask, grid.0, grid.1)?;
        prep.push(PrepSample {
            normal,
            anomalous,
            pooled,
            tau: if s.is_anomalous { 1.0 } else { 0.0 },
        });
    }

    // trainable parameters
    let c = crate::backbone::FEATURE_CHANNELS;
    let mut store = ParamStore::<f32>::new();
    let adaptor = store.add("adaptor.w", Tensor::matrix(c, c, identity_adaptor(c)));
    let gauss = cfg
        .gaussian_disc_on
        .then(|| GaussianDisc::init(&mut store, c, rng::child_seed(seed, "gauss", 0)));
    let perlin = cfg.perlin_disc_on.then(|| {
        PerlinDisc::init(
            &mut store,
            c,
            grid.0,
            grid.1,
            rng::child_seed(seed, "perlin", 0),
        )
    });

    let mut loss_log = String::from("step,sim,gau,pix,cls,per,total\n");
    let theta = cfg.theta as f32;
    let mut step_idx = 0usize;
    let mut final_losses = None;
    for _epoch in 0..cfg.epochs {
        for batch in prep.chunks(cfg.batch) {
            let at_step = |e: RunError| match e {
                RunError::Numeric { detail, .. } => RunError::Numeric {
                    step: step_idx,
                    detail,
                },
                other => other,
            };
            let bundle = train_step(
                batch, &store, adaptor, &gauss, &perlin, cfg, theta, seed, step_idx,
            )
            .map_err(at_step)
            .and_then(|(nodes_values, grads)| {
                adam_step(
                    &mut store,
                    grads,
                    |name| {
                        if name.starts_with("adaptor.") {
                            cfg.lr_adaptor
                        } else if name.starts_with("gauss.") {
                            cfg.lr_gauss
                        } else {
                            cfg.lr_perlin
                        }
                    },
                    AdamHyper::default(),
                )?;
                Ok(nodes_values)
            })?;
            if !bundle.total.is_finite() {
                return Err(RunError::Numeric {
                    step: step_idx,
                    detail: format!("loss became {}", bundle.total),
                });
            }
            loss_log.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                step_idx, bundle.sim, bundle.gau, bundle.pix, bundle.cls, bundle.per, bundle.total
            ));
            final_losses = Some(bundle);
            step_idx += 1;
        }
    }

    Ok(TrainOutcome {
        bundle: ModelBundle {
            backbone,
            store,
            adaptor,
            gauss,
            perlin,
            grid,
            config: cfg.clone(),
        },
        loss_log,
        steps: step_idx,
        final_losses,
    })
}

/// Builds the tape for one batch, runs backward, and returns loss values
/// plus parameter gradients.
#[allow(clippy::too_many_arguments)]
fn train_step(
    batch: &[PrepSample],
    store: &ParamStore<f32>,
    adaptor: usize,
    gauss: &Option<GaussianDisc>,
    perlin: &Option<PerlinDisc>,
    cfg: &TrainConfig,
    theta: f32,
    seed: u64,
    step_idx: usize,
) -> RunResult<(LossBundle, Vec<Option<Vec<f32>>>)> {
    use rand::Rng as _;
    let mut tape = Tape::<f32>::new();
    let aid = tape.param(store, adaptor);
    let zero = tape.scalar(0.0);
    let (mut sim_acc, mut gau_acc, mut pix_acc, mut cls_acc) = (zero, zero, zero, zero);
    for (si, sample) in batch.iter().enumerate() {
        let to_leaf = |tape: &mut Tape<f32>, fm: &FeatureMap| {
            tape.leaf(Tensor::matrix(fm.positions(), fm.channels, fm.data.clone()))
        };
        let q_normal: Vec<TensorId> = {
            let mut out = Vec::new();
            for fm in &sample.normal {
                let p = to_leaf(&mut tape, fm);
                out.push(tape.linear(p, aid, None)?);
            }
            out
        };
        let q_anom: Vec<TensorId> = match &sample.anomalous {
            Some(bands) => {
                let mut out = Vec::new();
                for fm in bands {
                    let p = to_leaf(&mut tape, fm);
                    out.push(tape.linear(p, aid, None)?);
                }
                out
            }
            None => q_normal.clone(),
        };

        if let Some(g) = gauss {
            let mut normal_scores = Vec::new();
            let mut noised_scores = Vec::new();
            for (bi, &q) in q_normal.iter().enumerate() {
                let shape = tape.value(q).shape.clone();
                let n = tape.value(q).numel();
                let counter = ((step_idx as u64) << 24)
                    ^ ((si as u64) << 8)
                    ^ (bi as u64);
                let mut noise_rng = rng::stream(seed, "feature-noise", counter);
                let noise: Vec<f32> = (0..n)
                    .map(|_| {
                        cfg.noise_mean as f32
                            + cfg.noise_std as f32
                                * {
                                    // Box-Muller keeps the stream element-typed
                                    let u1: f64 = noise_rng.gen_range(f64::EPSILON..1.0);
                                    let u2: f64 = noise_rng.gen();
                                    ((-2.0 * u1.ln()).sqrt()
                                        * (std::f64::consts::TAU * u2).cos())
                                        as f32
                                }
                    })
                    .collect();
                let noise_id = tape.leaf(Tensor::new(shape, noise));
                let q_noised = tape.add(q, noise_id)?;
                normal_scores.push(g.forward(&mut tape, store, q)?);
                noised_scores.push(g.forward(&mut tape, store, q_noised)?);
            }
            let l = gaussian_loss(&mut tape, &normal_scores, &noised_scores, theta, cfg.loss_kind)?;
            gau_acc = tape.add(gau_acc, l)?;
        }

        if let Some(p) = perlin {
            let mut anom_scores = Vec::new();
            for &q in &q_anom {
                anom_scores.push(p.forward(&mut tape, store, q)?);
            }
            let lp = pixel_loss(
                &mut tape,
                &anom_scores,
                &sample.pooled,
                theta,
                cfg.loss_kind,
                cfg.pixel_mask_inside,
            )?;
            pix_acc = tape.add(pix_acc, lp)?;
            let lc = cls_loss(&mut tape, &anom_scores, sample.tau as f32)?;
            cls_acc = tape.add(cls_acc, lc)?;
        }

        if cfg.sim_loss_on && sample.anomalous.is_some() {
            let bands: Vec<(TensorId, TensorId)> =
                q_anom.iter().copied().zip(q_normal.iter().copied()).collect();
            let ls = similarity_loss(&mut tape, &bands, &sample.pooled, cfg.sim_repel)?;
            sim_acc = tape.add(sim_acc, ls)?;
        }
    }
    let inv = 1.0 / batch.len() as f32;
    let sim = tape.scale(sim_acc, inv)?;
    let gau = tape.scale(gau_acc, inv)?;
    let pix = tape.scale(pix_acc, inv)?;
    let cls = tape.scale(cls_acc, inv)?;
    let nodes = total_loss(
        &mut tape,
        sim,
        gau,
        pix,
        cls,
        cfg.lambda_per as f32,
        cfg.lambda_sim as f32,
    )?;
    tape.backward(nodes.total)?;
    let grads = tape.param_grads(store.len());
    Ok((nodes.values(&tape), grads))
}

/// Min-max scaling to `[0, 1]`; a (near-)constant map becomes all-zero.
fn min_max_scale(data: &mut [f32]) {
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for &v in data.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = hi - lo;
    if !(span.is_finite()) || span < 1e-12 {
        data.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    for v in data.iter_mut() {
        *v = (*v - lo) / span;
    }
}

/// Scores one image. Returns the full-resolution anomaly map (matching the
/// input image's dimensions) and the image-level score (its maximum).
pub fn score_image(img: &Image, model: &ModelBundle) -> RunResult<(ScoreMap, f64)> {
    let cfg = &model.config;
    let (out_h, out_w) = (img.height, img.width);
    let working = resize(img, cfg.resolution, cfg.resolution)?;
    let std_img = standardize(&working);
    let bands = extract_bands(&model.backbone, &std_img, cfg.mfic_on)?;
    let adaptor_w = &model.store.value(model.adaptor).data;
    let adapted: Vec<FeatureMap> = bands
        .iter()
        .map(|b| adapt(b, adaptor_w))
        .collect::<Result<_, _>>()?;
    let (gh, gw) = (adapted[0].grid_h, adapted[0].grid_w);
    if model.perlin.is_some() && (gh, gw) != model.grid {
        return Err(RunError::Config(format!(
            "feature grid {gh}x{gw} does not match the trained positional grid {}x{}",
            model.grid.0, model.grid.1
        )));
    }

    let mut scaled_maps: Vec<Vec<f32>> = Vec::new();
    if let Some(g) = &model.gauss {
        let mut sum = vec![0.0f32; gh * gw];
        for q in &adapted {
            let sm = g.score(&model.store, q)?;
            for (acc, v) in sum.iter_mut().zip(&sm.data) {
                *acc += v;
            }
        }
        // discriminators emit positive-normal scores; flip so high = anomalous
        sum.iter_mut().for_each(|v| *v = -*v);
        min_max_scale(&mut sum);
        scaled_maps.push(sum);
    }
    if let Some(p) = &model.perlin {
        let mut sum = vec![0.0f32; gh * gw];
        for q in &adapted {
            let sm = p.score(&model.store, q)?;
            for (acc, v) in sum.iter_mut().zip(&sm.data) {
                *acc += v;
            }
        }
        sum.iter_mut().for_each(|v| *v = -*v);
        min_max_scale(&mut sum);
        scaled_maps.push(sum);
    }
    if scaled_maps.is_empty() {
        return Err(RunError::Config("model has no discriminators".into()));
    }
    let inv = 1.0 / scaled_maps.len() as f32;
    let mut fused = vec![0.0f32; gh * gw];
    for m in &scaled_maps {
        for (f, v) in fused.iter_mut().zip(m) {
            *f += v * inv;
        }
    }

    // interpolate the grid map to image resolution
    let grid_img = Image {
        height: gh,
        width: gw,
        channels: 1,
        data: fused,
    };
    let full = resize(&grid_img, out_h, out_w)?;
    let s_a = full.data.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
    Ok((
        ScoreMap {
            grid_h: out_h,
            grid_w: out_w,
            data: full.data,
        },
        s_a,
    ))
}

/// Scores every test record of a category layout and computes the metrics.
pub fn evaluate(model: &ModelBundle, layout: &crate::eval::CategoryLayout) -> RunResult<Metrics> {
    let mut image_scores = Vec::new();
    let mut labels = Vec::new();
    let mut maps = Vec::new();
    let mut gts = Vec::new();
    for rec in &layout.test {
        let img = crate::imagery::load_image(&rec.image)?;
        let (map, s_a) = score_image(&img, model)?;
        image_scores.push(s_a);
        labels.push(rec.label);
        let gt = match &rec.mask {
            Some(path) => crate::imagery::load_mask(path)?,
            None => Mask::new(img.height, img.width),
        };
        if gt.height != map.grid_h || gt.width != map.grid_w {
            return Err(RunError::Argument(format!(
                "ground truth {}x{} does not match score map {}x{}",
                gt.height, gt.width, map.grid_h, map.grid_w
            )));
        }
        maps.push(map.data.iter().map(|&v| v as f64).collect::<Vec<f64>>());
        gts.push(gt);
    }
    let auroc_image = crate::eval::auroc(&image_scores, &labels)?;
    let auroc_pixel = crate::eval::pixel_auroc(&maps, &gts)?;
    let pro = crate::eval::pro(&maps, &gts, 0.3, 200)?;
    Ok(Metrics {
        auroc_image,
        auroc_pixel,
        pro,
    })
}

/// Magic of the binary score-map format.
pub const DFDS_MAGIC: &[u8; 4] = b"DFDS";

/// Writes a score map as `DFDS`, u32 height, u32 width, then row-major
/// little-endian f32 values.
pub fn save_score_map(map: &ScoreMap, path: &Path) -> RunResult<()> {
    let mut out = Vec::with_capacity(12 + map.data.len() * 4);
    out.extend_from_slice(DFDS_MAGIC);
    out.extend_from_slice(&(map.grid_h as u32).to_le_bytes());
    out.extend_from_slice(&(map.grid_w as u32).to_le_bytes());
    for &v in &map.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| RunError::Io(format!("write {path:?}: {e}")))
}

pub fn load_score_map(path: &Path) -> RunResult<ScoreMap> {
    let bytes = fs::read(path).map_err(|e| RunError::Io(format!("read {path:?}: {e}")))?;
    if bytes.len() < 12 || &bytes[0..4] != DFDS_MAGIC {
        return Err(RunError::Io(format!("{path:?}: not a DFDS file")));
    }
    let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() != 12 + h * w * 4 {
        return Err(RunError::Io(format!("{path:?}: truncated DFDS payload")));
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(ScoreMap {
        grid_h: h,
        grid_w: w,
        data,
    })
}

/// Blends a blue-to-red heat ramp of the score map over the image.
pub fn heat_overlay(img: &Image, map: &ScoreMap) -> Image {
    assert_eq!(img.height, map.grid_h);
    assert_eq!(img.width, map.grid_w);
    let mut out = Image::new(img.height, img.width, 3);
    for i in 0..img.height * img.width {
        let s = map.data[i].clamp(0.0, 1.0);
        let heat = [s, 0.15 * s, 1.0 - s];
        for c in 0..3 {
            let base = if img.channels == 3 {
                img.data[i * 3 + c]
            } else {
                img.data[i]
            };
            out.data[i * 3 + c] = (0.55 * base + 0.45 * heat[c]).clamp(0.0, 1.0);
        }
    }
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Hash of a saved checkpoint file.
pub fn checkpoint_sha256(dir: &Path) -> RunResult<String> {
    let bytes = fs::read(dir.join("model.dfdw"))
        .map_err(|e| RunError::Io(format!("read checkpoint: {e}")))?;
    Ok(sha256_hex(&bytes))
}

/// Structured text report of a run: crate version, seed, checkpoint hash,
/// the full config snapshot, and metric values.
pub fn run_manifest(cfg: &TrainConfig, metrics: Option<&Metrics>, checkpoint_hash: &str) -> String {
    let mut out = String::new();
    out.push_str(&format!("version = {}\n", env!("CARGO_PKG_VERSION")));
    out.push_str(&format!("seed = {}\n", cfg.seed));
    out.push_str(&format!("checkpoint_sha256 = {checkpoint_hash}\n"));
    out.push_str("\n[config]\n");
    out.push_str(&cfg.snapshot());
    out.push_str("\n[metrics]\n");
    match metrics {
        Some(m) => out.push_str(&m.report()),
        None => out.push_str("none = recorded\n"),
    }
    out
}

/// Reads the `[config]` section of a manifest back into a config.
pub fn manifest_config(manifest: &str) -> RunResult<TrainConfig> {
    let mut in_config = false;
    let mut body = String::new();
    for line in manifest.lines() {
        if line.trim() == "[config]" {
            in_config = true;
            continue;
        }
        if in_config {
            if line.trim().starts_with('[') {
                break;
            }
            body.push_str(line);
            body.push('\n');
        }
    }
    if body.is_empty() {
        return Err(RunError::Io("manifest has no [config] section".into()));
    }
    TrainConfig::parse(&body)
}

/// Verifies that a manifest's checkpoint hash matches the file on disk.
pub fn verify_manifest(dir: &Path, manifest: &str) -> RunResult<bool> {
    let recorded = manifest
        .lines()
        .find_map(|l| l.strip_prefix("checkpoint_sha256 = "))
        .ok_or_else(|| RunError::Io("manifest has no checkpoint hash".into()))?;
    Ok(recorded == checkpoint_sha256(dir)?)
}

/// Run directory name: `<verb>-<seed>-<hash8>` where the hash covers the
/// canonical config snapshot.
pub fn run_dir_name(verb: &str, cfg: &TrainConfig) -> String {
    let hash = sha256_hex(cfg.snapshot().as_bytes());
    format!("{verb}-{}-{}", cfg.seed, &hash[..8])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::fixture;

    fn tiny_cfg() -> TrainConfig {
        let mut cfg = TrainConfig::default();
        cfg.resolution = 64;
        cfg.shots = 2;
        cfg.n_augment = 3;
        cfg.epochs = 0;
        cfg.batch = 4;
        cfg.seed = 5;
        cfg
    }

    fn tiny_shots(seed: u64) -> Vec<Image> {
        (0..2)
            .map(|i| fixture::normal_image(64, 0, seed, i).unwrap().0)
            .collect()
    }

    #[test]
    fn zero_epochs_keeps_identity_adaptor() {
        let cfg = tiny_cfg();
        let out = train(&tiny_shots(3), &cfg).unwrap();
        assert_eq!(out.steps, 0);
        let w = out.bundle.store.value(out.bundle.adaptor);
        let c = crate::backbone::FEATURE_CHANNELS;
        for o in 0..c {
            for i in 0..c {
                let want = if o == i { 1.0 } else { 0.0 };
                assert_eq!(w.data[o * c + i], want);
            }
        }
    }

    #[test]
    fn empty_shot_list_is_an_argument_error() {
        let cfg = tiny_cfg();
        assert!(matches!(
            train(&[], &cfg),
            Err(RunError::Argument(_))
        ));
    }

    #[test]
    fn training_one_step_is_deterministic() {
        let mut cfg = tiny_cfg();
        cfg.epochs = 1;
        let a = train(&tiny_shots(3), &cfg).unwrap();
        let b = train(&tiny_shots(3), &cfg).unwrap();
        assert_eq!(a.loss_log, b.loss_log);
        let ta = a.bundle.tensors();
        let tb = b.bundle.tensors();
        for (x, y) in ta.iter().zip(&tb) {
            assert_eq!(x.name, y.name);
            for (u, v) in x.data.iter().zip(&y.data) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn bundle_save_load_round_trip_scores_identically() {
        let mut cfg = tiny_cfg();
        cfg.epochs = 1;
        let out = train(&tiny_shots(7), &cfg).unwrap();
        let dir = std::env::temp_dir().join("dfd_bundle_rt");
        let _ = fs::remove_dir_all(&dir);
        out.bundle.save(&dir).unwrap();
        let loaded = ModelBundle::load(&dir).unwrap();
        let probe = fixture::normal_image(64, 0, 9, 0).unwrap().0;
        let (m1, s1) = score_image(&probe, &out.bundle).unwrap();
        let (m2, s2) = score_image(&probe, &loaded).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(m1.data, m2.data);
    }

    #[test]
    fn scoring_never_mutates_the_model() {
        let mut cfg = tiny_cfg();
        cfg.epochs = 1;
        let out = train(&tiny_shots(11), &cfg).unwrap();
        let before = sha256_hex(&out.bundle.store.value_bytes());
        let probe = fixture::normal_image(64, 1, 4, 0).unwrap().0;
        let _ = score_image(&probe, &out.bundle).unwrap();
        let _ = score_image(&probe, &out.bundle).unwrap();
        let after = sha256_hex(&out.bundle.store.value_bytes());
        assert_eq!(before, after);
    }

    #[test]
    fn scaled_maps_are_in_unit_range() {
        let mut cfg = tiny_cfg();
        cfg.epochs = 1;
        let out = train(&tiny_shots(13), &cfg).unwrap();
        let (img, _) = fixture::defective_image(64, 0, 13, 2000).unwrap();
        let (map, s_a) = score_image(&img, &out.bundle).unwrap();
        assert!(map.data.iter().all(|&v| (-1e-6..=1.0 + 1e-6).contains(&v)));
        assert!((0.0..=1.0 + 1e-6).contains(&(s_a as f64)));
    }

    #[test]
    fn constant_raw_maps_scale_to_zero() {
        let mut data = vec![0.7f32; 16];
        min_max_scale(&mut data);
        assert!(data.iter().all(|&v| v == 0.0));
        let mut data = vec![0.0f32, 2.0, 4.0];
        min_max_scale(&mut data);
        assert_eq!(data, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn score_map_file_round_trip() {
        let dir = std::env::temp_dir().join("dfd_dfds");
        fs::create_dir_all(&dir).unwrap();
        let map = ScoreMap {
            grid_h: 3,
            grid_w: 2,
            data: vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.125],
        };
        let path = dir.join("s.dfds");
        save_score_map(&map, &path).unwrap();
        assert_eq!(load_score_map(&path).unwrap(), map);
    }

    #[test]
    fn manifest_round_trips_config_and_verifies_hash() {
        let mut cfg = tiny_cfg();
        cfg.epochs = 1;
        let out = train(&tiny_shots(17), &cfg).unwrap();
        let dir = std::env::temp_dir().join("dfd_manifest");
        let _ = fs::remove_dir_all(&dir);
        out.bundle.save(&dir).unwrap();
        let hash = checkpoint_sha256(&dir).unwrap();
        let manifest = run_manifest(&cfg, None, &hash);
        let parsed = manifest_config(&manifest).unwrap();
        assert_eq!(parsed, cfg);
        assert!(verify_manifest(&dir, &manifest).unwrap());

        // tampered checkpoint fails verification
        let path = dir.join("model.dfdw");
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        fs::write(&path, bytes).unwrap();
        assert!(!verify_manifest(&dir, &manifest).unwrap());
    }

    #[test]
    fn run_dir_names_are_stable() {
        let cfg = tiny_cfg();
        assert_eq!(run_dir_name("train", &cfg), run_dir_name("train", &cfg));
        let mut cfg2 = cfg.clone();
        cfg2.epochs = 99;
        assert_ne!(run_dir_name("train", &cfg), run_dir_name("train", &cfg2));
    }
}
