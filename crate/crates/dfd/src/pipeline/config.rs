//! Run configuration: a flat `key = value` file with typed fields,
//! command-line overrides, and a canonical snapshot format.

use std::path::PathBuf;

use crate::losses::LossKind;
use crate::pipeline::RunError;

/// Everything a training or inference run needs to be reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Master seed; all randomness derives from it.
    pub seed: u64,
    /// Square working resolution images are resized to.
    pub resolution: usize,
    /// Number of normal reference images used for training.
    pub shots: usize,
    /// Augmented samples generated per reference image.
    pub n_augment: usize,
    /// Probability an augmented sample carries a blended defect.
    pub anomaly_prob: f64,
    pub epochs: usize,
    pub batch: usize,
    pub lr_adaptor: f64,
    pub lr_gauss: f64,
    pub lr_perlin: f64,
    /// Hinge margin of the score losses.
    pub theta: f64,
    pub lambda_per: f64,
    pub lambda_sim: f64,
    /// Feature-noise distribution.
    pub noise_mean: f64,
    pub noise_std: f64,
    /// Frequency split on/off (off scores the unsplit image).
    pub mfic_on: bool,
    pub gaussian_disc_on: bool,
    pub perlin_disc_on: bool,
    pub sim_loss_on: bool,
    /// Apply the pooled mask inside the localization hinge instead of
    /// masking the per-position means.
    pub pixel_mask_inside: bool,
    /// Flip the similarity objective from pulling (1 - cos) to pushing
    /// (1 + cos).
    pub sim_repel: bool,
    pub loss_kind: LossKind,
    /// Empty: deterministic random trunk from the seed. Otherwise a DFDW
    /// checkpoint path with trunk weights.
    pub backbone_import: String,
    /// Side of the local-average neighborhood on backbone features.
    pub aggregation: usize,
    /// Empty: procedural blend textures. Otherwise a folder of PNGs.
    pub texture_folder: String,
    /// Binarization threshold on the Perlin field during augmentation.
    pub perlin_threshold: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    /// Dataset root (MVTec-style tree) and category for train/eval.
    pub data_root: String,
    pub category: String,
    /// Parent directory for run artifacts.
    pub out_dir: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            resolution: 256,
            shots: 2,
            n_augment: 80,
            anomaly_prob: 0.7,
            epochs: 80,
            batch: 8,
            lr_adaptor: 5e-4,
            lr_gauss: 2e-4,
            lr_perlin: 1e-4,
            theta: 0.8,
            lambda_per: 2.0,
            lambda_sim: 0.02,
            noise_mean: 0.0,
            noise_std: 0.015,
            mfic_on: true,
            gaussian_disc_on: true,
            perlin_disc_on: true,
            sim_loss_on: true,
            pixel_mask_inside: false,
            sim_repel: false,
            loss_kind: LossKind::Hinge,
            backbone_import: String::new(),
            aggregation: 3,
            texture_folder: String::new(),
            perlin_threshold: 0.5,
            beta_min: 0.15,
            beta_max: 1.0,
            data_root: String::new(),
            category: String::new(),
            out_dir: "runs".into(),
        }
    }
}

macro_rules! config_keys {
    ($($key:ident : $help:expr),+ $(,)?) => {
        /// Every recognized key with its help line, in canonical order.
        pub const KEY_HELP: &[(&str, &str)] = &[
            $((stringify!($key), $help)),+
        ];
    };
}

config_keys! {
    seed: "master seed for every random draw (default 0)",
    resolution: "square working resolution (default 256)",
    shots: "normal reference images used for training (default 2)",
    n_augment: "augmented samples per reference image (default 80)",
    anomaly_prob: "probability a sample gets a blended defect (default 0.7)",
    epochs: "training epochs (default 80)",
    batch: "batch size (default 8)",
    lr_adaptor: "Adam learning rate of the feature adaptor (default 5e-4)",
    lr_gauss: "Adam learning rate of the position-wise discriminator (default 2e-4)",
    lr_perlin: "Adam learning rate of the transformer discriminator (default 1e-4)",
    theta: "hinge margin on discriminator scores (default 0.8)",
    lambda_per: "weight of the localization+classification term (default 2)",
    lambda_sim: "weight of the feature-similarity term (default 0.02)",
    noise_mean: "feature-noise mean (default 0)",
    noise_std: "feature-noise standard deviation (default 0.015)",
    mfic_on: "split images into low/high frequency bands (default true)",
    gaussian_disc_on: "train/score with the position-wise discriminator (default true)",
    perlin_disc_on: "train/score with the transformer discriminator (default true)",
    sim_loss_on: "include the feature-similarity loss (default true)",
    pixel_mask_inside: "apply the pooled mask inside the localization hinge (default false)",
    sim_repel: "flip the similarity objective to push features apart (default false)",
    loss_kind: "hinge | cross-entropy | focal | mse (default hinge)",
    backbone_import: "DFDW checkpoint with trunk weights; empty = seeded random trunk",
    aggregation: "local-average neighborhood on backbone features, odd (default 3)",
    texture_folder: "folder of PNG blend textures; empty = procedural textures",
    perlin_threshold: "binarization threshold on the noise field (default 0.5)",
    beta_min: "lower bound of the blend transparency (default 0.15)",
    beta_max: "upper bound of the blend transparency (default 1)",
    data_root: "MVTec-style dataset root",
    category: "category under data_root",
    out_dir: "parent directory for run artifacts (default runs)",
}

impl TrainConfig {
    /// Applies one `key = value` assignment; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), RunError> {
        let bad = |what: &str| {
            RunError::Config(format!("key '{key}': cannot parse '{value}' as {what}"))
        };
        match key {
            "seed" => self.seed = value.parse().map_err(|_| bad("u64"))?,
            "resolution" => self.resolution = value.parse().map_err(|_| bad("usize"))?,
            "shots" => self.shots = value.parse().map_err(|_| bad("usize"))?,
            "n_augment" => self.n_augment = value.parse().map_err(|_| bad("usize"))?,
            "anomaly_prob" => self.anomaly_prob = value.parse().map_err(|_| bad("f64"))?,
            "epochs" => self.epochs = value.parse().map_err(|_| bad("usize"))?,
            "batch" => self.batch = value.parse().map_err(|_| bad("usize"))?,
            "lr_adaptor" => self.lr_adaptor = value.parse().map_err(|_| bad("f64"))?,
            "lr_gauss" => self.lr_gauss = value.parse().map_err(|_| bad("f64"))?,
            "lr_perlin" => self.lr_perlin = value.parse().map_err(|_| bad("f64"))?,
            "theta" => self.theta = value.parse().map_err(|_| bad("f64"))?,
            "lambda_per" => self.lambda_per = value.parse().map_err(|_| bad("f64"))?,
            "lambda_sim" => self.lambda_sim = value.parse().map_err(|_| bad("f64"))?,
            "noise_mean" => self.noise_mean = value.parse().map_err(|_| bad("f64"))?,
            "noise_std" => self.noise_std = value.parse().map_err(|_| bad("f64"))?,
            "mfic_on" => self.mfic_on = value.parse().map_err(|_| bad("bool"))?,
            "gaussian_disc_on" => {
                self.gaussian_disc_on = value.parse().map_err(|_| bad("bool"))?
            }
            "perlin_disc_on" => self.perlin_disc_on = value.parse().map_err(|_| bad("bool"))?,
            "sim_loss_on" => self.sim_loss_on = value.parse().map_err(|_| bad("bool"))?,
            "pixel_mask_inside" => {
                self.pixel_mask_inside = value.parse().map_err(|_| bad("bool"))?
            }
            "sim_repel" => self.sim_repel = value.parse().map_err(|_| bad("bool"))?,
            "loss_kind" => {
                self.loss_kind = value
                    .parse()
                    .map_err(|e| RunError::Config(format!("key 'loss_kind': {e}")))?
            }
            "backbone_import" => self.backbone_import = value.to_string(),
            "aggregation" => self.aggregation = value.parse().map_err(|_| bad("usize"))?,
            "texture_folder" => self.texture_folder = value.to_string(),
            "perlin_threshold" => {
                self.perlin_threshold = value.parse().map_err(|_| bad("f64"))?
            }
            "beta_min" => self.beta_min = value.parse().map_err(|_| bad("f64"))?,
            "beta_max" => self.beta_max = value.parse().map_err(|_| bad("f64"))?,
            "data_root" => self.data_root = value.to_string(),
            "category" => self.category = value.to_string(),
            "out_dir" => self.out_dir = value.to_string(),
            other => return Err(RunError::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Parses a config file body (`key = value` lines, `#` comments).
    pub fn parse(text: &str) -> Result<Self, RunError> {
        let mut cfg = Self::default();
        cfg.merge(text)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn merge(&mut self, text: &str) -> Result<(), RunError> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(RunError::Config(format!(
                    "line {}: expected 'key = value', got '{line}'",
                    lineno + 1
                )));
            };
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Canonical snapshot; parsing it back yields an equal config.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        push("seed", self.seed.to_string());
        push("resolution", self.resolution.to_string());
        push("shots", self.shots.to_string());
        push("n_augment", self.n_augment.to_string());
        push("anomaly_prob", format!("{}", self.anomaly_prob));
        push("epochs", self.epochs.to_string());
        push("batch", self.batch.to_string());
        push("lr_adaptor", format!("{}", self.lr_adaptor));
        push("lr_gauss", format!("{}", self.lr_gauss));
        push("lr_perlin", format!("{}", self.lr_perlin));
        push("theta", format!("{}", self.theta));
        push("lambda_per", format!("{}", self.lambda_per));
        push("lambda_sim", format!("{}", self.lambda_sim));
        push("noise_mean", format!("{}", self.noise_mean));
        push("noise_std", format!("{}", self.noise_std));
        push("mfic_on", self.mfic_on.to_string());
        push("gaussian_disc_on", self.gaussian_disc_on.to_string());
        push("perlin_disc_on", self.perlin_disc_on.to_string());
        push("sim_loss_on", self.sim_loss_on.to_string());
        push("pixel_mask_inside", self.pixel_mask_inside.to_string());
        push("sim_repel", self.sim_repel.to_string());
        push("loss_kind", self.loss_kind.to_string());
        push("backbone_import", self.backbone_import.clone());
        push("aggregation", self.aggregation.to_string());
        push("texture_folder", self.texture_folder.clone());
        push("perlin_threshold", format!("{}", self.perlin_threshold));
        push("beta_min", format!("{}", self.beta_min));
        push("beta_max", format!("{}", self.beta_max));
        push("data_root", self.data_root.clone());
        push("category", self.category.clone());
        push("out_dir", self.out_dir.clone());
        out
    }

    /// Sanity checks shared by all commands that train.
    pub fn validate(&self) -> Result<(), RunError> {
        if !self.gaussian_disc_on && !self.perlin_disc_on {
            return Err(RunError::Config(
                "at least one discriminator must be enabled".into(),
            ));
        }
        if self.shots == 0 || self.shots > 16 {
            return Err(RunError::Config(format!(
                "shots must be in 1..=16, got {}",
                self.shots
            )));
        }
        if self.n_augment == 0 {
            return Err(RunError::Config("n_augment must be >= 1".into()));
        }
        if self.batch == 0 {
            return Err(RunError::Config("batch must be >= 1".into()));
        }
        for (name, lr) in [
            ("lr_adaptor", self.lr_adaptor),
            ("lr_gauss", self.lr_gauss),
            ("lr_perlin", self.lr_perlin),
        ] {
            if lr <= 0.0 {
                return Err(RunError::Config(format!("{name} must be > 0, got {lr}")));
            }
        }
        if self.resolution < 32 || self.resolution % 16 != 0 {
            return Err(RunError::Config(format!(
                "resolution must be a multiple of 16 and >= 32, got {}",
                self.resolution
            )));
        }
        if self.noise_std <= 0.0 {
            return Err(RunError::Config("noise_std must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.anomaly_prob) {
            return Err(RunError::Config("anomaly_prob must be in [0,1]".into()));
        }
        if self.beta_min < 0.0 || self.beta_max > 1.0 || self.beta_min > self.beta_max {
            return Err(RunError::Config(
                "beta range must satisfy 0 <= beta_min <= beta_max <= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn texture_source(&self) -> crate::synth::TextureSource {
        if self.texture_folder.is_empty() {
            crate::synth::TextureSource::Procedural
        } else {
            crate::synth::TextureSource::Folder(PathBuf::from(&self.texture_folder))
        }
    }

    pub fn augment_policy(&self) -> crate::synth::AugmentPolicy {
        crate::synth::AugmentPolicy {
            count: self.n_augment,
            anomaly_prob: self.anomaly_prob,
            threshold: self.perlin_threshold as f32,
            beta_range: (self.beta_min as f32, self.beta_max as f32),
            texture: self.texture_source(),
            ..crate::synth::AugmentPolicy::default()
        }
    }
}
