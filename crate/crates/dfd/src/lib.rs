//! Few-shot anomaly detection with dual frequency-band discriminators.
//!
//! The library builds a complete desk-scale detector from a handful of normal
//! images: pseudo-anomalies are synthesized at image level (Perlin-masked
//! texture blending) and feature level (Gaussian perturbation), every image is
//! split into a low/high frequency pair by a one-level Gaussian pyramid, a
//! frozen convolutional backbone plus a trainable linear adaptor produce patch
//! features, and two small discriminators (a position-wise MLP and an
//! MLP + single-layer transformer) score each patch. Inference fuses the two
//! score maps into a per-pixel anomaly heat map and an image-level score.
//!
//! Modules follow the processing chain:
//!
//! * [`imagery`] — raster I/O, geometry, color, binarization
//! * [`synth`] — pseudo-anomaly generation and data augmentation
//! * [`frequency`] — pyramid frequency split and spectral analysis
//! * [`autodiff`] — reverse-mode tape, optimizer, checkpoints
//! * [`backbone`] — frozen feature extractor and the feature adaptor
//! * [`discriminators`] — the two scoring networks
//! * [`losses`] — training objectives
//! * [`pipeline`] — training loop, inference, run artifacts
//! * [`eval`] — AUROC / PRO metrics and dataset ingestion

pub mod autodiff;
pub mod backbone;
pub mod discriminators;
pub mod eval;
pub mod frequency;
pub mod gradsuite;
pub mod imagery;
pub mod losses;
pub mod pipeline;
pub mod rng;
pub mod synth;

/// Number of worker threads honored by the batch-parallel entry points.
///
/// Reads `DFD_THREADS`; falls back to the machine's available parallelism.
pub fn worker_threads() -> usize {
    std::env::var("DFD_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}
