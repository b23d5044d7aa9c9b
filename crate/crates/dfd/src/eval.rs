//! Detection metrics and dataset ingestion.
//!
//! AUROC uses the rank-based Mann-Whitney formulation with midranks for
//! ties. PRO sweeps score thresholds, measures the mean per-connected-region
//! overlap against the false-positive rate on normal pixels, and integrates
//! the curve up to an FPR limit (0.3 by default), normalized by that limit.
//! Connected components use 8-connectivity.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::imagery::Mask;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("metric undefined: {0}")]
    Undefined(String),
    #[error("dataset layout error: {0}")]
    Layout(String),
    #[error("invalid argument: {0}")]
    Argument(String),
}

pub type EvalResult<T> = Result<T, EvalError>;

/// Area under the ROC curve of `scores` against binary `labels`.
///
/// Computed as the normalized Mann-Whitney U statistic; tied scores receive
/// midranks, so constant scores give exactly 0.5.
pub fn auroc(scores: &[f64], labels: &[u8]) -> EvalResult<f64> {
    if scores.len() != labels.len() {
        return Err(EvalError::Argument(
            "scores and labels differ in length".into(),
        ));
    }
    let n_pos = labels.iter().filter(|&&l| l != 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::Undefined(
            "AUROC needs both classes present".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // midranks over tie groups
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0usize;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0; // ranks are 1-based
        for &idx in &order[i..=j] {
            if labels[idx] != 0 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// AUROC over the pooled pixel population of a test set.
pub fn pixel_auroc(maps: &[Vec<f64>], gts: &[Mask]) -> EvalResult<f64> {
    if maps.len() != gts.len() {
        return Err(EvalError::Argument("maps and masks differ in count".into()));
    }
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (map, gt) in maps.iter().zip(gts) {
        if map.len() != gt.data.len() {
            return Err(EvalError::Argument(format!(
                "score map has {} pixels, mask {}",
                map.len(),
                gt.data.len()
            )));
        }
        scores.extend_from_slice(map);
        labels.extend_from_slice(&gt.data);
    }
    auroc(&scores, &labels)
}

/// 8-connected components of a mask; returns a label grid and the count.
fn connected_components(mask: &Mask) -> (Vec<u32>, u32) {
    let (h, w) = (mask.height, mask.width);
    let mut labels = vec![0u32; h * w];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if mask.data[start] == 0 || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(p) = stack.pop() {
            let (y, x) = (p / w, p % w);
            for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    if dy == 0 && dx == 0 {
                        continue;
                    }
                    let (ny, nx) = (y as i32 + dy, x as i32 + dx);
                    if ny < 0 || nx < 0 || ny >= h as i32 || nx >= w as i32 {
                        continue;
                    }
                    let np = ny as usize * w + nx as usize;
                    if mask.data[np] != 0 && labels[np] == 0 {
                        labels[np] = next;
                        stack.push(np);
                    }
                }
            }
        }
    }
    (labels, next)
}

/// Per-region overlap integrated over false-positive rate.
///
/// Thresholds: the exact set of distinct score values when there are at most
/// `thresholds` of them, otherwise `thresholds` values evenly spaced over
/// the score range. At each threshold the prediction is `score > t` (strict,
/// so a constant map predicts nothing at its own level); the mean overlap
/// `|pred and region| / |region|` across all ground-truth regions is paired
/// with the global FPR over normal pixels, the curve is integrated by
/// trapezoid up to `fpr_limit` (extending flat past the last observed
/// point), and the area is normalized by the limit.
pub fn pro(maps: &[Vec<f64>], gts: &[Mask], fpr_limit: f64, thresholds: usize) -> EvalResult<f64> {
    if maps.len() != gts.len() {
        return Err(EvalError::Argument("maps and masks differ in count".into()));
    }
    if !(0.0..=1.0).contains(&fpr_limit) || fpr_limit == 0.0 {
        return Err(EvalError::Argument(format!(
            "fpr_limit must be in (0, 1], got {fpr_limit}"
        )));
    }
    // regions: (image index, label id, size)
    let mut region_info: Vec<(usize, u32, usize)> = Vec::new();
    let mut label_grids = Vec::with_capacity(gts.len());
    let mut n_normal_pixels = 0usize;
    for (i, gt) in gts.iter().enumerate() {
        let (labels, count) = connected_components(gt);
        for lbl in 1..=count {
            let size = labels.iter().filter(|&&l| l == lbl).count();
            region_info.push((i, lbl, size));
        }
        n_normal_pixels += gt.data.iter().filter(|&&v| v == 0).count();
        label_grids.push(labels);
    }
    if region_info.is_empty() {
        return Err(EvalError::Undefined(
            "PRO needs at least one anomalous region".into(),
        ));
    }

    // threshold set
    let mut distinct: Vec<f64> = maps.iter().flatten().copied().collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    let levels: Vec<f64> = if distinct.len() <= thresholds {
        distinct
    } else {
        let lo = distinct[0];
        let hi = *distinct.last().unwrap();
        (0..thresholds)
            .map(|i| lo + (hi - lo) * i as f64 / (thresholds - 1) as f64)
            .collect()
    };

    // sweep from the highest threshold down so FPR is non-decreasing
    let mut curve: Vec<(f64, f64)> = Vec::with_capacity(levels.len() + 2);
    curve.push((0.0, 0.0));
    for &t in levels.iter().rev() {
        let mut fp = 0usize;
        let mut overlap_sum = 0.0f64;
        for (map, gt) in maps.iter().zip(gts) {
            for (p, &s) in map.iter().enumerate() {
                if s > t && gt.data[p] == 0 {
                    fp += 1;
                }
            }
        }
        for &(img, lbl, size) in &region_info {
            let hits = label_grids[img]
                .iter()
                .zip(&maps[img])
                .filter(|&(&l, &s)| l == lbl && s > t)
                .count();
            overlap_sum += hits as f64 / size as f64;
        }
        let fpr = if n_normal_pixels == 0 {
            0.0
        } else {
            fp as f64 / n_normal_pixels as f64
        };
        let mean_overlap = overlap_sum / region_info.len() as f64;
        curve.push((fpr, mean_overlap));
    }

    // integrate overlap against fpr up to the limit
    let mut area = 0.0f64;
    for pair in curve.windows(2) {
        let (x0, y0) = pair[0];
        let (x1, y1) = pair[1];
        if x0 >= fpr_limit {
            break;
        }
        if x1 <= fpr_limit {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            // clip the last trapezoid at the limit
            let t = (fpr_limit - x0) / (x1 - x0);
            let y_at = y0 + t * (y1 - y0);
            area += (fpr_limit - x0) * (y0 + y_at) / 2.0;
            break;
        }
    }
    // if the observed curve never reaches the limit, extend flat
    if let Some(&(last_x, last_y)) = curve.last() {
        if last_x < fpr_limit {
            area += (fpr_limit - last_x) * last_y;
        }
    }
    Ok(area / fpr_limit)
}

/// One test image record of an MVTec-style category tree.
#[derive(Debug, Clone, PartialEq)]
pub struct TestRecord {
    pub image: PathBuf,
    pub label: u8,
    pub mask: Option<PathBuf>,
    pub defect: String,
}

/// Enumerated category layout: training images plus labeled test records.
#[derive(Debug, Clone)]
pub struct CategoryLayout {
    pub train_good: Vec<PathBuf>,
    pub test: Vec<TestRecord>,
}

fn sorted_images(dir: &Path) -> EvalResult<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| EvalError::Layout(format!("{dir:?}: {e}")))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("png") | Some("ppm") | Some("pgm") | Some("PNG")
            )
        })
        .collect();
    out.sort();
    Ok(out)
}

/// Walks `<root>/<category>` expecting `train/good`, `test/<defect|good>`,
/// and `ground_truth/<defect>` with `<stem>_mask.(png|pgm)` files.
pub fn ingest_mvtec_layout(root: &Path, category: &str) -> EvalResult<CategoryLayout> {
    let cat = root.join(category);
    let train_good = sorted_images(&cat.join("train").join("good"))?;
    let test_dir = cat.join("test");
    let mut defect_dirs: Vec<PathBuf> = fs::read_dir(&test_dir)
        .map_err(|e| EvalError::Layout(format!("{test_dir:?}: {e}")))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    defect_dirs.sort();
    if defect_dirs.is_empty() {
        return Err(EvalError::Layout(format!(
            "empty test directory {test_dir:?}"
        )));
    }
    let mut test = Vec::new();
    for dir in defect_dirs {
        let defect = dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("")
            .to_string();
        let images = sorted_images(&dir)?;
        if images.is_empty() {
            return Err(EvalError::Layout(format!("no images under {dir:?}")));
        }
        for img in images {
            if defect == "good" {
                test.push(TestRecord {
                    image: img,
                    label: 0,
                    mask: None,
                    defect: defect.clone(),
                });
            } else {
                let stem = img
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .ok_or_else(|| EvalError::Layout(format!("bad file name {img:?}")))?;
                let gt_dir = cat.join("ground_truth").join(&defect);
                let mask = ["pgm", "png"]
                    .iter()
                    .map(|ext| gt_dir.join(format!("{stem}_mask.{ext}")))
                    .find(|p| p.exists())
                    .ok_or_else(|| {
                        EvalError::Layout(format!(
                            "missing ground-truth mask for {img:?} under {gt_dir:?}"
                        ))
                    })?;
                test.push(TestRecord {
                    image: img,
                    label: 1,
                    mask: Some(mask),
                    defect: defect.clone(),
                });
            }
        }
    }
    Ok(CategoryLayout { train_good, test })
}

/// Metric triple of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub auroc_image: f64,
    pub auroc_pixel: f64,
    pub pro: f64,
}

impl Metrics {
    /// `metric = value` lines, one per metric.
    pub fn report(&self) -> String {
        format!(
            "auroc_image = {:.6}\nauroc_pixel = {:.6}\npro = {:.6}\n",
            self.auroc_image, self.auroc_pixel, self.pro
        )
    }
}
