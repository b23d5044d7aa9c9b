//! Training objectives.
//!
//! All losses are built on the autodiff tape so one implementation serves
//! training, hand-value tests, and gradient checks. Score maps enter as
//! `[T x 1]` tensors over the feature grid; the anomaly mask is max-pooled
//! onto the same grid.
//!
//! The per-band structure mirrors the frequency split: every loss takes a
//! slice of band tensors (two bands normally, one when the frequency split
//! is disabled) and sums its per-band terms.

use thiserror::Error;

use crate::autodiff::{AdResult, Element, Tape, Tensor, TensorId};
use crate::imagery::Mask;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Autodiff(#[from] crate::autodiff::AutodiffError),
}

pub type LossResult<T> = Result<T, LossError>;

/// Default hinge margin.
pub const DEFAULT_THETA: f64 = 0.8;

/// Which per-position penalty replaces the truncated-l1 terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Truncated l1: `max(0, theta -/+ s)`.
    Hinge,
    /// Binary cross-entropy on `sigmoid(s)`.
    CrossEntropy,
    /// Focal loss with gamma = 2 on `sigmoid(s)`.
    Focal,
    /// Squared error against the targets `+theta` / `-theta`.
    Mse,
}

impl std::str::FromStr for LossKind {
    type Err = LossError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hinge" => Ok(Self::Hinge),
            "cross-entropy" | "ce" => Ok(Self::CrossEntropy),
            "focal" => Ok(Self::Focal),
            "mse" => Ok(Self::Mse),
            other => Err(LossError::Config(format!("unknown loss kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::Hinge => "hinge",
            Self::CrossEntropy => "cross-entropy",
            Self::Focal => "focal",
            Self::Mse => "mse",
        };
        f.write_str(s)
    }
}

/// Scalar values of one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBundle {
    pub sim: f64,
    pub gau: f64,
    pub pix: f64,
    pub cls: f64,
    pub per: f64,
    pub total: f64,
}

/// Tape handles of one loss evaluation; `total` is the backward root.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub sim: TensorId,
    pub gau: TensorId,
    pub pix: TensorId,
    pub cls: TensorId,
    pub per: TensorId,
    pub total: TensorId,
}

impl LossNodes {
    pub fn values<E: Element>(&self, tape: &Tape<E>) -> LossBundle {
        let v = |id: TensorId| tape.value(id).item().to_f64().unwrap();
        LossBundle {
            sim: v(self.sim),
            gau: v(self.gau),
            pix: v(self.pix),
            cls: v(self.cls),
            per: v(self.per),
            total: v(self.total),
        }
    }
}

/// Max-pools a pixel mask onto the feature grid.
///
/// Each grid cell takes the maximum over its `(H/grid_h) x (W/grid_w)`
/// window, so any anomalous pixel marks the whole cell anomalous.
pub fn pool_mask(mask: &Mask, grid_h: usize, grid_w: usize) -> LossResult<Mask> {
    if grid_h == 0
        || grid_w == 0
        || mask.height % grid_h != 0
        || mask.width % grid_w != 0
    {
        return Err(LossError::Argument(format!(
            "mask {}x{} is not divisible into a {grid_h}x{grid_w} grid",
            mask.height, mask.width
        )));
    }
    let (bh, bw) = (mask.height / grid_h, mask.width / grid_w);
    let mut out = Mask::new(grid_h, grid_w);
    for gy in 0..grid_h {
        for gx in 0..grid_w {
            let mut any = 0u8;
            'window: for y in gy * bh..(gy + 1) * bh {
                for x in gx * bw..(gx + 1) * bw {
                    if mask.get(y, x) != 0 {
                        any = 1;
                        break 'window;
                    }
                }
            }
            out.set(gy, gx, any);
        }
    }
    Ok(out)
}

/// Mask as a `[T x 1]` constant tensor of zeros and ones.
fn mask_column<E: Element>(tape: &mut Tape<E>, mask: &Mask) -> TensorId {
    let data = mask
        .data
        .iter()
        .map(|&v| if v != 0 { E::one() } else { E::zero() })
        .collect();
    tape.leaf(Tensor::matrix(mask.data.len(), 1, data))
}

/// Mask broadcast across `c` channels as a `[T x c]` constant tensor.
fn mask_channels<E: Element>(tape: &mut Tape<E>, mask: &Mask, c: usize) -> TensorId {
    let mut data = Vec::with_capacity(mask.data.len() * c);
    for &v in &mask.data {
        let e = if v != 0 { E::one() } else { E::zero() };
        data.extend(std::iter::repeat(e).take(c));
    }
    tape.leaf(Tensor::matrix(mask.data.len(), c, data))
}

/// Per-position penalty for scores that should be positive (normal).
fn normal_term<E: Element>(
    tape: &mut Tape<E>,
    s: TensorId,
    theta: E,
    kind: LossKind,
) -> AdResult<TensorId> {
    match kind {
        LossKind::Hinge => tape.hinge_low(s, theta),
        LossKind::CrossEntropy => {
            let p = tape.sigmoid(s)?;
            let p = tape.add_const(p, E::c(1e-12))?;
            let lp = tape.ln(p)?;
            tape.scale(lp, -E::one())
        }
        LossKind::Focal => {
            let p = tape.sigmoid(s)?;
            let guarded = tape.add_const(p, E::c(1e-12))?;
            let lp = tape.ln(guarded)?;
            let neg_lp = tape.scale(lp, -E::one())?;
            let neg_p = tape.scale(p, -E::one())?;
            let one_minus = tape.add_const(neg_p, E::one())?;
            let sq = tape.mul(one_minus, one_minus)?;
            tape.mul(sq, neg_lp)
        }
        LossKind::Mse => {
            let d = tape.add_const(s, -theta)?;
            tape.mul(d, d)
        }
    }
}

/// Per-position penalty for scores that should be negative (anomalous).
fn anomalous_term<E: Element>(
    tape: &mut Tape<E>,
    s: TensorId,
    theta: E,
    kind: LossKind,
) -> AdResult<TensorId> {
    match kind {
        LossKind::Hinge => tape.hinge_high(s, theta),
        LossKind::CrossEntropy => {
            let neg = tape.scale(s, -E::one())?;
            let p = tape.sigmoid(neg)?; // P(anomalous)
            let p = tape.add_const(p, E::c(1e-12))?;
            let lp = tape.ln(p)?;
            tape.scale(lp, -E::one())
        }
        LossKind::Focal => {
            let neg = tape.scale(s, -E::one())?;
            let p = tape.sigmoid(neg)?;
            let guarded = tape.add_const(p, E::c(1e-12))?;
            let lp = tape.ln(guarded)?;
            let neg_lp = tape.scale(lp, -E::one())?;
            let neg_p = tape.scale(p, -E::one())?;
            let one_minus = tape.add_const(neg_p, E::one())?;
            let sq = tape.mul(one_minus, one_minus)?;
            tape.mul(sq, neg_lp)
        }
        LossKind::Mse => {
            let d = tape.add_const(s, theta)?;
            tape.mul(d, d)
        }
    }
}

/// Mean of `term` over the positions where `mask` is set; a constant zero
/// when no position is set.
fn masked_mean<E: Element>(
    tape: &mut Tape<E>,
    term: TensorId,
    mask: &Mask,
    polarity: u8,
) -> AdResult<TensorId> {
    let count = mask
        .data
        .iter()
        .filter(|&&v| (v != 0) == (polarity != 0))
        .count();
    if count == 0 {
        return Ok(tape.scalar(E::zero()));
    }
    let select = Mask {
        height: mask.height,
        width: mask.width,
        data: mask
            .data
            .iter()
            .map(|&v| ((v != 0) == (polarity != 0)) as u8)
            .collect(),
    };
    let sel = mask_column(tape, &select);
    let picked = tape.mul(term, sel)?;
    let sum = tape.sum_all(picked)?;
    tape.scale(sum, E::one() / E::c(count as f64))
}

/// Feature-compactness loss between anomalous and normal adapted features.
///
/// Per band: `1 - cos(mask .* q_a, mask .* q_n)` over the flattened masked
/// maps, summed across bands. A band with an empty mask contributes zero.
/// `flip_sign` turns the objective into `1 + cos(...)`.
pub fn similarity_loss<E: Element>(
    tape: &mut Tape<E>,
    bands: &[(TensorId, TensorId)],
    pooled: &Mask,
    flip_sign: bool,
) -> LossResult<TensorId> {
    let mut acc = tape.scalar(E::zero());
    if pooled.is_empty() {
        return Ok(acc);
    }
    for &(qa, qn) in bands {
        let c = tape.value(qa).cols();
        if tape.value(qa).rows() != pooled.data.len() {
            return Err(LossError::Argument(format!(
                "pooled mask covers {} positions, features have {}",
                pooled.data.len(),
                tape.value(qa).rows()
            )));
        }
        let m = mask_channels(tape, pooled, c);
        let ma = tape.mul(qa, m)?;
        let mn = tape.mul(qn, m)?;
        let cos = tape.cosine(ma, mn)?;
        let signed = if flip_sign {
            cos
        } else {
            tape.scale(cos, -E::one())?
        };
        let band = tape.add_const(signed, E::one())?;
        acc = tape.add(acc, band)?;
    }
    Ok(acc)
}

/// Margin loss of the Gaussian discriminator: normal scores are pushed above
/// `theta`, feature-noised scores below `-theta`. Each term is averaged over
/// positions, the two terms are added per band, and bands are summed.
pub fn gaussian_loss<E: Element>(
    tape: &mut Tape<E>,
    normal_scores: &[TensorId],
    noised_scores: &[TensorId],
    theta: E,
    kind: LossKind,
) -> LossResult<TensorId> {
    if normal_scores.len() != noised_scores.len() {
        return Err(LossError::Argument(
            "normal/noised band counts differ".into(),
        ));
    }
    let mut acc = tape.scalar(E::zero());
    for (&sn, &sa) in normal_scores.iter().zip(noised_scores) {
        let t1 = normal_term(tape, sn, theta, kind)?;
        let t1 = tape.mean_all(t1)?;
        let t2 = anomalous_term(tape, sa, theta, kind)?;
        let t2 = tape.mean_all(t2)?;
        let band = tape.add(t1, t2)?;
        acc = tape.add(acc, band)?;
    }
    Ok(acc)
}

/// Localization loss of the Perlin discriminator.
///
/// Default form applies the mask outside the hinge: the normal-position
/// penalty is averaged over cells where the pooled mask is zero and the
/// anomalous-position penalty over cells where it is one. The literal form
/// (`literal = true`) multiplies the score map by the mask *inside* the
/// penalty and averages over all positions.
pub fn pixel_loss<E: Element>(
    tape: &mut Tape<E>,
    anomalous_scores: &[TensorId],
    pooled: &Mask,
    theta: E,
    kind: LossKind,
    literal: bool,
) -> LossResult<TensorId> {
    let mut acc = tape.scalar(E::zero());
    for &s in anomalous_scores {
        if tape.value(s).rows() != pooled.data.len() {
            return Err(LossError::Argument(format!(
                "pooled mask covers {} positions, scores have {}",
                pooled.data.len(),
                tape.value(s).rows()
            )));
        }
        let band = if literal {
            let inv = Mask {
                height: pooled.height,
                width: pooled.width,
                data: pooled.data.iter().map(|&v| 1 - v).collect(),
            };
            let m_inv = mask_column(tape, &inv);
            let m = mask_column(tape, pooled);
            let s_norm = tape.mul(s, m_inv)?;
            let t1 = normal_term(tape, s_norm, theta, kind)?;
            let t1 = tape.mean_all(t1)?;
            let s_anom = tape.mul(s, m)?;
            let t2 = anomalous_term(tape, s_anom, theta, kind)?;
            let t2 = tape.mean_all(t2)?;
            tape.add(t1, t2)?
        } else {
            let t1 = normal_term(tape, s, theta, kind)?;
            let t1 = masked_mean(tape, t1, pooled, 0)?;
            let t2 = anomalous_term(tape, s, theta, kind)?;
            let t2 = masked_mean(tape, t2, pooled, 1)?;
            tape.add(t1, t2)?
        };
        acc = tape.add(acc, band)?;
    }
    Ok(acc)
}

/// Image-level classification loss: squared error between the abnormality
/// label `tau` and the maximum of `sigmoid(-s)` per band, summed over bands.
pub fn cls_loss<E: Element>(
    tape: &mut Tape<E>,
    anomalous_scores: &[TensorId],
    tau: E,
) -> LossResult<TensorId> {
    let mut acc = tape.scalar(E::zero());
    for &s in anomalous_scores {
        let neg = tape.scale(s, -E::one())?;
        let p = tape.sigmoid(neg)?;
        let m = tape.max_all(p)?;
        let neg_m = tape.scale(m, -E::one())?;
        let diff = tape.add_const(neg_m, tau)?;
        let sq = tape.mul(diff, diff)?;
        acc = tape.add(acc, sq)?;
    }
    Ok(acc)
}

/// Combines the component losses:
/// `per = (pix + cls) / 2`, `total = gau + lambda_per * per + lambda_sim * sim`.
pub fn total_loss<E: Element>(
    tape: &mut Tape<E>,
    sim: TensorId,
    gau: TensorId,
    pix: TensorId,
    cls: TensorId,
    lambda_per: E,
    lambda_sim: E,
) -> LossResult<LossNodes> {
    let pix_plus_cls = tape.add(pix, cls)?;
    let per = tape.scale(pix_plus_cls, E::c(0.5))?;
    let per_w = tape.scale(per, lambda_per)?;
    let sim_w = tape.scale(sim, lambda_sim)?;
    let t = tape.add(gau, per_w)?;
    let total = tape.add(t, sim_w)?;
    Ok(LossNodes {
        sim,
        gau,
        pix,
        cls,
        per,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn column<E: Element>(tape: &mut Tape<E>, vals: &[f64]) -> TensorId {
        let data = vals.iter().map(|&v| E::c(v)).collect();
        tape.leaf(Tensor::matrix(vals.len(), 1, data))
    }

    #[test]
    fn pool_mask_windows() {
        let mut m = Mask::new(8, 8);
        assert!(pool_mask(&m, 4, 4).unwrap().is_empty());
        m.set(3, 5, 1);
        let pooled = pool_mask(&m, 4, 4).unwrap();
        assert_eq!(pooled.count(), 1);
        assert_eq!(pooled.get(1, 2), 1);
        assert!(pool_mask(&m, 3, 4).is_err());
    }

    #[test]
    fn pool_mask_matches_brute_force() {
        let mut rng = crate::rng::stream(8, "pool-test", 0);
        let mut m = Mask::new(16, 12);
        for v in m.data.iter_mut() {
            *v = rng.gen_bool(0.3) as u8;
        }
        let pooled = pool_mask(&m, 4, 3).unwrap();
        for gy in 0..4 {
            for gx in 0..3 {
                let mut want = 0u8;
                for y in gy * 4..(gy + 1) * 4 {
                    for x in gx * 4..(gx + 1) * 4 {
                        want = want.max(m.get(y, x));
                    }
                }
                assert_eq!(pooled.get(gy, gx), want);
            }
        }
    }

    #[test]
    fn similarity_zero_for_identical_features() {
        let mut tape = Tape::<f64>::new();
        let q: Vec<f64> = (0..8).map(|i| 0.1 * i as f64 + 0.2).collect();
        let qa = tape.leaf(Tensor::matrix(4, 2, q.clone()));
        let qn = tape.leaf(Tensor::matrix(4, 2, q));
        let mask = Mask::filled(2, 2);
        let loss = similarity_loss(&mut tape, &[(qa, qn)], &mask, false).unwrap();
        assert!(tape.value(loss).item().abs() < 1e-9);
    }

    #[test]
    fn similarity_two_for_antiparallel_features() {
        let mut tape = Tape::<f64>::new();
        let q: Vec<f64> = (0..8).map(|i| 0.1 * i as f64 + 0.2).collect();
        let neg: Vec<f64> = q.iter().map(|v| -v).collect();
        let qa = tape.leaf(Tensor::matrix(4, 2, q));
        let qn = tape.leaf(Tensor::matrix(4, 2, neg));
        let mask = Mask::filled(2, 2);
        let loss = similarity_loss(&mut tape, &[(qa, qn)], &mask, false).unwrap();
        assert!((tape.value(loss).item() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn similarity_empty_mask_contributes_zero() {
        let mut tape = Tape::<f64>::new();
        let qa = tape.leaf(Tensor::matrix(4, 2, vec![1.0; 8]));
        let qn = tape.leaf(Tensor::matrix(4, 2, vec![-1.0; 8]));
        let mask = Mask::new(2, 2);
        let loss = similarity_loss(&mut tape, &[(qa, qn), (qa, qn)], &mask, false).unwrap();
        assert_eq!(tape.value(loss).item(), 0.0);
    }

    #[test]
    fn similarity_matches_direct_dot_oracle() {
        let mut rng = crate::rng::stream(4, "sim-test", 0);
        let t = 6usize;
        let c = 3usize;
        let qa: Vec<f64> = (0..t * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let qn: Vec<f64> = (0..t * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut mask = Mask::new(2, 3);
        mask.set(0, 1, 1);
        mask.set(1, 2, 1);

        // oracle
        let mut dot = 0.0;
        let mut na = 0.0;
        let mut nb = 0.0;
        for p in 0..t {
            if mask.data[p] == 0 {
                continue;
            }
            for i in 0..c {
                dot += qa[p * c + i] * qn[p * c + i];
                na += qa[p * c + i] * qa[p * c + i];
                nb += qn[p * c + i] * qn[p * c + i];
            }
        }
        let want = 1.0 - dot / (na.sqrt() * nb.sqrt());

        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::matrix(t, c, qa));
        let n = tape.leaf(Tensor::matrix(t, c, qn));
        let loss = similarity_loss(&mut tape, &[(a, n)], &mask, false).unwrap();
        assert!((tape.value(loss).item() - want).abs() < 1e-9);
    }

    #[test]
    fn gaussian_loss_hand_values() {
        // boundary case: normal at +theta, noised at -theta
        let mut tape = Tape::<f64>::new();
        let sn = column(&mut tape, &[0.8; 4]);
        let sa = column(&mut tape, &[-0.8; 4]);
        let loss = gaussian_loss(&mut tape, &[sn, sn], &[sa, sa], 0.8, LossKind::Hinge).unwrap();
        assert!(tape.value(loss).item().abs() < 1e-9);

        // all scores zero: each term contributes theta
        let mut tape = Tape::<f64>::new();
        let z = column(&mut tape, &[0.0; 4]);
        let loss = gaussian_loss(&mut tape, &[z, z], &[z, z], 0.8, LossKind::Hinge).unwrap();
        assert!((tape.value(loss).item() - 3.2).abs() < 1e-9);

        // saturated hinge: a normal score far above theta contributes zero
        let mut tape = Tape::<f64>::new();
        let hi = column(&mut tape, &[2.0; 4]);
        let lo = column(&mut tape, &[-2.0; 4]);
        let loss = gaussian_loss(&mut tape, &[hi], &[lo], 0.8, LossKind::Hinge).unwrap();
        assert_eq!(tape.value(loss).item(), 0.0);
    }

    #[test]
    fn pixel_loss_hand_values() {
        let theta = 0.8f64;
        // +theta on normal cells, -theta on anomalous cells: zero loss
        let mut mask = Mask::new(2, 2);
        mask.set(0, 0, 1);
        let mut tape = Tape::<f64>::new();
        let s = column(&mut tape, &[-theta, theta, theta, theta]);
        let loss = pixel_loss(&mut tape, &[s], &mask, theta, LossKind::Hinge, false).unwrap();
        assert!(tape.value(loss).item().abs() < 1e-9);

        // empty mask: anomalous term 0, normal term over all cells
        let empty = Mask::new(2, 2);
        let mut tape = Tape::<f64>::new();
        let s = column(&mut tape, &[0.0; 4]);
        let loss = pixel_loss(&mut tape, &[s], &empty, theta, LossKind::Hinge, false).unwrap();
        assert!((tape.value(loss).item() - theta).abs() < 1e-9);

        // 2x2 toy grid against a hand evaluation
        let scores = [0.5, -0.3, 0.9, -1.2];
        let mut mask = Mask::new(2, 2);
        mask.set(0, 1, 1);
        mask.set(1, 1, 1);
        let normal_mean = ((theta - 0.5).max(0.0) + (theta - 0.9).max(0.0)) / 2.0;
        let anom_mean = ((theta + -0.3).max(0.0) + (theta + -1.2).max(0.0)) / 2.0;
        let want = normal_mean + anom_mean;
        let mut tape = Tape::<f64>::new();
        let s = column(&mut tape, &scores);
        let loss = pixel_loss(&mut tape, &[s], &mask, theta, LossKind::Hinge, false).unwrap();
        assert!((tape.value(loss).item() - want).abs() < 1e-9);
    }

    #[test]
    fn pixel_loss_literal_form_matches_hand_evaluation() {
        let theta = 0.8f64;
        let scores = [0.5, -0.3];
        let mut mask = Mask::new(1, 2);
        mask.set(0, 1, 1);
        // literal: mean(max(0, theta - s*(1-m))) + mean(max(0, theta + s*m))
        let t1 = ((theta - 0.5).max(0.0) + (theta - 0.0).max(0.0)) / 2.0;
        let t2 = ((theta + 0.0).max(0.0) + (theta - 0.3).max(0.0)) / 2.0;
        let want = t1 + t2;
        let mut tape = Tape::<f64>::new();
        let s = column(&mut tape, &scores);
        let loss = pixel_loss(&mut tape, &[s], &mask, theta, LossKind::Hinge, true).unwrap();
        assert!((tape.value(loss).item() - want).abs() < 1e-9);
    }

    #[test]
    fn cls_loss_hand_values() {
        // anomalous image with one strongly negative score: near-zero loss
        let mut tape = Tape::<f64>::new();
        let s = column(&mut tape, &[-20.0, 1.0]);
        let loss = cls_loss(&mut tape, &[s, s], 1.0).unwrap();
        assert!(tape.value(loss).item() < 1e-6);

        // normal image with strongly positive scores: near-zero loss
        let mut tape = Tape::<f64>::new();
        let s = column(&mut tape, &[20.0, 20.0]);
        let loss = cls_loss(&mut tape, &[s, s], 0.0).unwrap();
        assert!(tape.value(loss).item() < 1e-6);

        // zero scores, tau = 1: 0.25 per band
        let mut tape = Tape::<f64>::new();
        let s = column(&mut tape, &[0.0]);
        let loss = cls_loss(&mut tape, &[s, s], 1.0).unwrap();
        assert!((tape.value(loss).item() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn total_loss_composition_invariants() {
        let mut tape = Tape::<f64>::new();
        let sim = tape.scalar(0.3);
        let gau = tape.scalar(1.1);
        let pix = tape.scalar(0.7);
        let cls = tape.scalar(0.2);
        let nodes = total_loss(&mut tape, sim, gau, pix, cls, 2.0, 0.02).unwrap();
        let b = nodes.values(&tape);
        assert!((b.per - (b.pix + b.cls) / 2.0).abs() < 1e-12);
        assert!((b.total - (b.gau + 2.0 * b.per + 0.02 * b.sim)).abs() < 1e-12);

        // all-zero components give zero total
        let mut tape = Tape::<f64>::new();
        let z = tape.scalar(0.0);
        let nodes = total_loss(&mut tape, z, z, z, z, 1.0, 1.0).unwrap();
        assert_eq!(nodes.values(&tape).total, 0.0);
    }

    #[test]
    fn alternative_losses_hand_values() {
        // MSE with targets +-theta and scores +-theta: zero
        let theta = 0.8f64;
        let mut tape = Tape::<f64>::new();
        let sn = column(&mut tape, &[theta]);
        let sa = column(&mut tape, &[-theta]);
        let loss = gaussian_loss(&mut tape, &[sn], &[sa], theta, LossKind::Mse).unwrap();
        assert!(tape.value(loss).item().abs() < 1e-12);

        // CE with score 0 against the normal target: ln 2 per position
        let mut tape = Tape::<f64>::new();
        let z = column(&mut tape, &[0.0]);
        let t = normal_term(&mut tape, z, theta, LossKind::CrossEntropy).unwrap();
        let m = tape.mean_all(t).unwrap();
        assert!((tape.value(m).item() - std::f64::consts::LN_2).abs() < 1e-9);

        // focal with a perfectly confident prediction: zero
        let mut tape = Tape::<f64>::new();
        let sure = column(&mut tape, &[40.0]);
        let t = normal_term(&mut tape, sure, theta, LossKind::Focal).unwrap();
        let m = tape.mean_all(t).unwrap();
        assert!(tape.value(m).item().abs() < 1e-12);
    }

    #[test]
    fn unknown_loss_kind_is_config_error() {
        let err = "hingey".parse::<LossKind>().unwrap_err();
        assert!(matches!(err, LossError::Config(_)));
        assert_eq!("ce".parse::<LossKind>().unwrap(), LossKind::CrossEntropy);
    }

    #[test]
    fn hinge_losses_are_monotone() {
        let mut rng = crate::rng::stream(5, "mono-test", 0);
        for _ in 0..50 {
            let scores: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let mut mask = Mask::new(2, 3);
            for v in mask.data.iter_mut() {
                *v = rng.gen_bool(0.5) as u8;
            }
            let idx = rng.gen_range(0..6);
            let bump = rng.gen_range(0.0..0.5);
            let mut moved = scores.clone();
            // normal positions: raising the score must not increase the loss;
            // anomalous positions: lowering it must not.
            if mask.data[idx] == 0 {
                moved[idx] += bump;
            } else {
                moved[idx] -= bump;
            }
            let eval = |vals: &[f64]| {
                let mut tape = Tape::<f64>::new();
                let s = column(&mut tape, vals);
                let loss =
                    pixel_loss(&mut tape, &[s], &mask, 0.8, LossKind::Hinge, false).unwrap();
                tape.value(loss).item()
            };
            assert!(eval(&moved) <= eval(&scores) + 1e-12);
        }
    }

    #[test]
    fn losses_are_nonnegative_and_finite() {
        let mut rng = crate::rng::stream(6, "nonneg-test", 0);
        for kind in [
            LossKind::Hinge,
            LossKind::CrossEntropy,
            LossKind::Focal,
            LossKind::Mse,
        ] {
            let scores: Vec<f64> = (0..8).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let mut mask = Mask::new(2, 4);
            for v in mask.data.iter_mut() {
                *v = rng.gen_bool(0.4) as u8;
            }
            let mut tape = Tape::<f64>::new();
            let s = column(&mut tape, &scores);
            let pix = pixel_loss(&mut tape, &[s], &mask, 0.8, kind, false).unwrap();
            let gau = gaussian_loss(&mut tape, &[s], &[s], 0.8, kind).unwrap();
            let cls = cls_loss(&mut tape, &[s], 1.0).unwrap();
            for id in [pix, gau, cls] {
                let v = tape.value(id).item();
                assert!(v.is_finite() && v >= 0.0, "{kind:?}: {v}");
            }
        }
    }
}
