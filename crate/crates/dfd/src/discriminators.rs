//! Dual-path feature discrimination.
//!
//! Both discriminators map adapted patch features to one score per grid
//! position, positive for normal and negative for anomalous features. The
//! Gaussian discriminator is a position-wise two-layer MLP; the Perlin
//! discriminator embeds the token grid with a single linear layer, adds
//! learned positional embeddings, and applies one pre-layernorm transformer
//! encoder layer before a linear head, so its scores couple globally.
//!
//! Forward passes are expressed on the autodiff tape; inference simply runs
//! a tape forward and discards it.

use rand::Rng;

use crate::autodiff::{AdResult, AutodiffError, Element, ParamStore, Tape, Tensor, TensorId};
use crate::backbone::FeatureMap;
use crate::rng;

/// Per-position abnormality scores on the feature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    pub grid_h: usize,
    pub grid_w: usize,
    pub data: Vec<f32>,
}

fn kaiming_uniform<E: Element>(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor<E> {
    let bound = (6.0 / cols as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| E::c(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::matrix(rows, cols, data)
}

fn xavier_uniform<E: Element>(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor<E> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| E::c(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::matrix(rows, cols, data)
}

fn zeros_vec<E: Element>(n: usize) -> Tensor<E> {
    Tensor::new(vec![n], vec![E::zero(); n])
}

fn ones_vec<E: Element>(n: usize) -> Tensor<E> {
    Tensor::new(vec![n], vec![E::one(); n])
}

/// Position-wise 2-layer MLP (C -> C -> 1, leaky-ReLU hidden, linear out).
#[derive(Debug, Clone)]
pub struct GaussianDisc {
    pub channels: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

/// Hidden-activation slope of the Gaussian discriminator.
pub const GAUSS_LEAKY_SLOPE: f64 = 0.2;

impl GaussianDisc {
    pub fn init<E: Element>(store: &mut ParamStore<E>, channels: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, "gauss-init", 0);
        Self {
            channels,
            w1: store.add("gauss.w1", kaiming_uniform(channels, channels, &mut r)),
            b1: store.add("gauss.b1", zeros_vec(channels)),
            w2: store.add("gauss.w2", kaiming_uniform(1, channels, &mut r)),
            b2: store.add("gauss.b2", zeros_vec(1)),
        }
    }

    /// Reconnects to parameters already present in `store` (checkpoint load).
    pub fn attach<E: Element>(store: &ParamStore<E>, channels: usize) -> AdResult<Self> {
        let find = |name: &str| -> AdResult<usize> {
            (0..store.len())
                .find(|&i| store.name(i) == name)
                .ok_or_else(|| AutodiffError::Checkpoint(format!("missing parameter '{name}'")))
        };
        Ok(Self {
            channels,
            w1: find("gauss.w1")?,
            b1: find("gauss.b1")?,
            w2: find("gauss.w2")?,
            b2: find("gauss.b2")?,
        })
    }

    /// `q` is `[T x C]`; returns `[T x 1]` scores.
    pub fn forward<E: Element>(
        &self,
        tape: &mut Tape<E>,
        store: &ParamStore<E>,
        q: TensorId,
    ) -> AdResult<TensorId> {
        if tape.value(q).cols() != self.channels {
            return Err(AutodiffError::ShapeMismatch {
                op: "gaussian_disc",
                detail: format!(
                    "features have {} channels, discriminator wants {}",
                    tape.value(q).cols(),
                    self.channels
                ),
            });
        }
        let w1 = tape.param(store, self.w1);
        let b1 = tape.param(store, self.b1);
        let w2 = tape.param(store, self.w2);
        let b2 = tape.param(store, self.b2);
        let h = tape.linear(q, w1, Some(b1))?;
        let h = tape.leaky_relu(h, E::c(GAUSS_LEAKY_SLOPE))?;
        tape.linear(h, w2, Some(b2))
    }

    /// Inference: scores a feature map outside any training tape.
    pub fn score(&self, store: &ParamStore<f32>, q: &FeatureMap) -> AdResult<ScoreMap> {
        let mut tape = Tape::<f32>::new();
        let qid = tape.leaf(Tensor::matrix(q.positions(), q.channels, q.data.clone()));
        let s = self.forward(&mut tape, store, qid)?;
        Ok(ScoreMap {
            grid_h: q.grid_h,
            grid_w: q.grid_w,
            data: tape.value(s).data.clone(),
        })
    }
}

/// Single-layer-MLP + single-layer-ViT discriminator.
#[derive(Debug, Clone)]
pub struct PerlinDisc {
    pub channels: usize,
    pub dim: usize,
    pub heads: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    embed_w: usize,
    embed_b: usize,
    pos: usize,
    ln1_g: usize,
    ln1_b: usize,
    q_w: Vec<usize>,
    q_b: Vec<usize>,
    k_w: Vec<usize>,
    k_b: Vec<usize>,
    v_w: Vec<usize>,
    v_b: Vec<usize>,
    o_w: Vec<usize>,
    ln2_g: usize,
    ln2_b: usize,
    mlp1_w: usize,
    mlp1_b: usize,
    mlp2_w: usize,
    mlp2_b: usize,
    head_w: usize,
    head_b: usize,
}

/// Token embedding width of the Perlin discriminator.
pub const PERLIN_DIM: usize = 128;
/// Attention head count.
pub const PERLIN_HEADS: usize = 4;
/// Feed-forward expansion factor.
pub const PERLIN_MLP_RATIO: usize = 2;

impl PerlinDisc {
    /// Builds the discriminator for a fixed `grid_h x grid_w` token grid.
    /// Positional embeddings are sized to this grid; inference on another
    /// grid is a configuration error.
    pub fn init<E: Element>(
        store: &mut ParamStore<E>,
        channels: usize,
        grid_h: usize,
        grid_w: usize,
        seed: u64,
    ) -> Self {
        let dim = PERLIN_DIM;
        let heads = PERLIN_HEADS;
        let head_dim = dim / heads;
        let tokens = grid_h * grid_w;
        let mut r = rng::stream(seed, "perlin-init", 0);
        let embed_w = store.add("perlin.embed.w", xavier_uniform(dim, channels, &mut r));
        let embed_b = store.add("perlin.embed.b", zeros_vec(dim));
        let pos_data = (0..tokens * dim)
            .map(|_| E::c(r.gen_range(-0.02..0.02)))
            .collect();
        let pos = store.add("perlin.pos", Tensor::matrix(tokens, dim, pos_data));
        let ln1_g = store.add("perlin.ln1.g", ones_vec(dim));
        let ln1_b = store.add("perlin.ln1.b", zeros_vec(dim));
        let mut q_w = Vec::new();
        let mut q_b = Vec::new();
        let mut k_w = Vec::new();
        let mut k_b = Vec::new();
        let mut v_w = Vec::new();
        let mut v_b = Vec::new();
        let mut o_w = Vec::new();
        for h in 0..heads {
            q_w.push(store.add(&format!("perlin.attn.q{h}.w"), xavier_uniform(head_dim, dim, &mut r)));
            q_b.push(store.add(&format!("perlin.attn.q{h}.b"), zeros_vec(head_dim)));
            k_w.push(store.add(&format!("perlin.attn.k{h}.w"), xavier_uniform(head_dim, dim, &mut r)));
            k_b.push(store.add(&format!("perlin.attn.k{h}.b"), zeros_vec(head_dim)));
            v_w.push(store.add(&format!("perlin.attn.v{h}.w"), xavier_uniform(head_dim, dim, &mut r)));
            v_b.push(store.add(&format!("perlin.attn.v{h}.b"), zeros_vec(head_dim)));
            o_w.push(store.add(&format!("perlin.attn.o{h}.w"), xavier_uniform(dim, head_dim, &mut r)));
        }
        let hidden = dim * PERLIN_MLP_RATIO;
        let ln2_g = store.add("perlin.ln2.g", ones_vec(dim));
        Self {
            channels,
            dim,
            heads,
            grid_h,
            grid_w,
            embed_w,
            embed_b,
            pos,
            ln1_g,
            ln1_b,
            q_w,
            q_b,
            k_w,
            k_b,
            v_w,
            v_b,
            o_w,
            ln2_g,
            ln2_b: store.add("perlin.ln2.b", zeros_vec(dim)),
            mlp1_w: store.add("perlin.mlp1.w", xavier_uniform(hidden, dim, &mut r)),
            mlp1_b: store.add("perlin.mlp1.b", zeros_vec(hidden)),
            mlp2_w: store.add("perlin.mlp2.w", xavier_uniform(dim, hidden, &mut r)),
            mlp2_b: store.add("perlin.mlp2.b", zeros_vec(dim)),
            head_w: store.add("perlin.head.w", xavier_uniform(1, dim, &mut r)),
            head_b: store.add("perlin.head.b", zeros_vec(1)),
        }
    }

    /// Reconnects to parameters already present in `store` (checkpoint load).
    pub fn attach<E: Element>(
        store: &ParamStore<E>,
        channels: usize,
        grid_h: usize,
        grid_w: usize,
    ) -> AdResult<Self> {
        let find = |name: String| -> AdResult<usize> {
            (0..store.len())
                .find(|&i| store.name(i) == name)
                .ok_or_else(|| AutodiffError::Checkpoint(format!("missing parameter '{name}'")))
        };
        let heads = PERLIN_HEADS;
        let mut q_w = Vec::new();
        let mut q_b = Vec::new();
        let mut k_w = Vec::new();
        let mut k_b = Vec::new();
        let mut v_w = Vec::new();
        let mut v_b = Vec::new();
        let mut o_w = Vec::new();
        for h in 0..heads {
            q_w.push(find(format!("perlin.attn.q{h}.w"))?);
            q_b.push(find(format!("perlin.attn.q{h}.b"))?);
            k_w.push(find(format!("perlin.attn.k{h}.w"))?);
            k_b.push(find(format!("perlin.attn.k{h}.b"))?);
            v_w.push(find(format!("perlin.attn.v{h}.w"))?);
            v_b.push(find(format!("perlin.attn.v{h}.b"))?);
            o_w.push(find(format!("perlin.attn.o{h}.w"))?);
        }
        let disc = Self {
            channels,
            dim: PERLIN_DIM,
            heads,
            grid_h,
            grid_w,
            embed_w: find("perlin.embed.w".into())?,
            embed_b: find("perlin.embed.b".into())?,
            pos: find("perlin.pos".into())?,
            ln1_g: find("perlin.ln1.g".into())?,
            ln1_b: find("perlin.ln1.b".into())?,
            q_w,
            q_b,
            k_w,
            k_b,
            v_w,
            v_b,
            o_w,
            ln2_g: find("perlin.ln2.g".into())?,
            ln2_b: find("perlin.ln2.b".into())?,
            mlp1_w: find("perlin.mlp1.w".into())?,
            mlp1_b: find("perlin.mlp1.b".into())?,
            mlp2_w: find("perlin.mlp2.w".into())?,
            mlp2_b: find("perlin.mlp2.b".into())?,
            head_w: find("perlin.head.w".into())?,
            head_b: find("perlin.head.b".into())?,
        };
        let want = grid_h * grid_w;
        let got = store.value(disc.pos).shape[0];
        if got != want {
            return Err(AutodiffError::Checkpoint(format!(
                "positional embeddings cover {got} tokens, grid asks for {want}"
            )));
        }
        Ok(disc)
    }

    /// `q` is `[T x C]` with `T == grid_h * grid_w`; returns `[T x 1]`.
    pub fn forward<E: Element>(
        &self,
        tape: &mut Tape<E>,
        store: &ParamStore<E>,
        q: TensorId,
    ) -> AdResult<TensorId> {
        let tokens = self.grid_h * self.grid_w;
        let vq = tape.value(q);
        if vq.cols() != self.channels || vq.rows() != tokens {
            return Err(AutodiffError::ShapeMismatch {
                op: "perlin_disc",
                detail: format!(
                    "features are {}x{}, trained grid wants {}x{} ({} tokens)",
                    vq.rows(),
                    vq.cols(),
                    self.grid_h,
                    self.grid_w,
                    tokens
                ),
            });
        }
        let head_dim = self.dim / self.heads;
        let scale = E::c(1.0 / (head_dim as f64).sqrt());

        let embed_w = tape.param(store, self.embed_w);
        let embed_b = tape.param(store, self.embed_b);
        let pos = tape.param(store, self.pos);
        let x0 = tape.linear(q, embed_w, Some(embed_b))?;
        let x0 = tape.add(x0, pos)?;

        // attention block, pre-layernorm
        let ln1_g = tape.param(store, self.ln1_g);
        let ln1_b = tape.param(store, self.ln1_b);
        let a = tape.layernorm_rows(x0, ln1_g, ln1_b)?;
        let mut attn_sum: Option<TensorId> = None;
        for h in 0..self.heads {
            let qw = tape.param(store, self.q_w[h]);
            let qb = tape.param(store, self.q_b[h]);
            let kw = tape.param(store, self.k_w[h]);
            let kb = tape.param(store, self.k_b[h]);
            let vw = tape.param(store, self.v_w[h]);
            let vb = tape.param(store, self.v_b[h]);
            let ow = tape.param(store, self.o_w[h]);
            let qh = tape.linear(a, qw, Some(qb))?;
            let kh = tape.linear(a, kw, Some(kb))?;
            let vh = tape.linear(a, vw, Some(vb))?;
            let scores = tape.linear(qh, kh, None)?; // q k^T
            let scores = tape.scale(scores, scale)?;
            let weights = tape.softmax_rows(scores)?;
            let ctx = tape.matmul(weights, vh)?;
            let proj = tape.linear(ctx, ow, None)?;
            attn_sum = Some(match attn_sum {
                Some(acc) => tape.add(acc, proj)?,
                None => proj,
            });
        }
        let x1 = tape.add(x0, attn_sum.expect("at least one head"))?;

        // feed-forward block, pre-layernorm
        let ln2_g = tape.param(store, self.ln2_g);
        let ln2_b = tape.param(store, self.ln2_b);
        let m = tape.layernorm_rows(x1, ln2_g, ln2_b)?;
        let mlp1_w = tape.param(store, self.mlp1_w);
        let mlp1_b = tape.param(store, self.mlp1_b);
        let mlp2_w = tape.param(store, self.mlp2_w);
        let mlp2_b = tape.param(store, self.mlp2_b);
        let f = tape.linear(m, mlp1_w, Some(mlp1_b))?;
        let f = tape.relu(f)?;
        let f = tape.linear(f, mlp2_w, Some(mlp2_b))?;
        let x2 = tape.add(x1, f)?;

        let head_w = tape.param(store, self.head_w);
        let head_b = tape.param(store, self.head_b);
        tape.linear(x2, head_w, Some(head_b))
    }

    /// Inference: scores a feature map outside any training tape.
    pub fn score(&self, store: &ParamStore<f32>, q: &FeatureMap) -> AdResult<ScoreMap> {
        let mut tape = Tape::<f32>::new();
        let qid = tape.leaf(Tensor::matrix(q.positions(), q.channels, q.data.clone()));
        let s = self.forward(&mut tape, store, qid)?;
        Ok(ScoreMap {
            grid_h: q.grid_h,
            grid_w: q.grid_w,
            data: tape.value(s).data.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_features(t: usize, c: usize, seed: u64) -> Tensor<f64> {
        let mut r = rng::stream(seed, "disc-test", 0);
        Tensor::matrix(t, c, (0..t * c).map(|_| r.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn gaussian_zero_weights_give_zero_scores() {
        let mut store = ParamStore::<f64>::new();
        let disc = GaussianDisc::init(&mut store, 6, 1);
        for i in 0..store.len() {
            let z = Tensor::new(store.value(i).shape.clone(), vec![0.0; store.value(i).numel()]);
            store.set_value(i, z);
        }
        let mut tape = Tape::new();
        let q = tape.leaf(random_features(4, 6, 2));
        let s = disc.forward(&mut tape, &store, q).unwrap();
        assert!(tape.value(s).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gaussian_is_position_wise() {
        let mut store = ParamStore::<f64>::new();
        let disc = GaussianDisc::init(&mut store, 8, 3);
        let base = random_features(5, 8, 4);
        let mut tape = Tape::new();
        let q = tape.leaf(base.clone());
        let s = disc.forward(&mut tape, &store, q).unwrap();
        let s0 = tape.value(s).data.clone();

        // identical feature vectors at two positions -> identical scores
        let mut tied = base.clone();
        for c in 0..8 {
            tied.data[2 * 8 + c] = tied.data[4 * 8 + c];
        }
        let mut tape = Tape::new();
        let q = tape.leaf(tied.clone());
        let s = disc.forward(&mut tape, &store, q).unwrap();
        let st = tape.value(s).data.clone();
        assert!((st[2] - st[4]).abs() < 1e-12);

        // perturbing one position changes only that score
        let mut poked = base;
        poked.data[3 * 8 + 1] += 0.5;
        let mut tape = Tape::new();
        let q = tape.leaf(poked);
        let s = disc.forward(&mut tape, &store, q).unwrap();
        let sp = tape.value(s).data.clone();
        for t in 0..5 {
            if t == 3 {
                assert!((sp[t] - s0[t]).abs() > 1e-9, "poked score must move");
            } else {
                assert!((sp[t] - s0[t]).abs() < 1e-12, "position {t} leaked");
            }
        }
    }

    #[test]
    fn gaussian_matches_direct_two_matmul_oracle() {
        let mut store = ParamStore::<f64>::new();
        let c = 5usize;
        let disc = GaussianDisc::init(&mut store, c, 7);
        let feat = random_features(1, c, 8);
        let mut tape = Tape::new();
        let q = tape.leaf(feat.clone());
        let s = disc.forward(&mut tape, &store, q).unwrap();
        let got = tape.value(s).data[0];

        let w1 = store.value(0);
        let b1 = store.value(1);
        let w2 = store.value(2);
        let b2 = store.value(3);
        let mut hidden = vec![0.0f64; c];
        for o in 0..c {
            let mut acc = b1.data[o];
            for i in 0..c {
                acc += w1.data[o * c + i] * feat.data[i];
            }
            hidden[o] = if acc > 0.0 { acc } else { acc * GAUSS_LEAKY_SLOPE };
        }
        let mut want = b2.data[0];
        for i in 0..c {
            want += w2.data[i] * hidden[i];
        }
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn gaussian_rejects_channel_mismatch() {
        let mut store = ParamStore::<f64>::new();
        let disc = GaussianDisc::init(&mut store, 6, 1);
        let mut tape = Tape::new();
        let q = tape.leaf(random_features(4, 5, 2));
        assert!(disc.forward(&mut tape, &store, q).is_err());
    }

    #[test]
    fn perlin_uniform_attention_for_equal_tokens() {
        // all-equal tokens and zero positional embeddings: every attention
        // row softmaxes constants to 1/T, so scores are equal across tokens.
        let mut store = ParamStore::<f64>::new();
        let disc = PerlinDisc::init(&mut store, 6, 2, 3, 5);
        let pos_idx = (0..store.len())
            .find(|&i| store.name(i) == "perlin.pos")
            .unwrap();
        let pos_shape = store.value(pos_idx).shape.clone();
        let n = store.value(pos_idx).numel();
        store.set_value(pos_idx, Tensor::new(pos_shape, vec![0.0; n]));

        let token: Vec<f64> = (0..6).map(|i| 0.1 * i as f64).collect();
        let mut data = Vec::new();
        for _ in 0..6 {
            data.extend_from_slice(&token);
        }
        let mut tape = Tape::new();
        let q = tape.leaf(Tensor::matrix(6, 6, data));
        let s = disc.forward(&mut tape, &store, q).unwrap();
        let scores = &tape.value(s).data;
        for &v in scores.iter() {
            assert!((v - scores[0]).abs() < 1e-10);
        }
    }

    #[test]
    fn perlin_is_permutation_equivariant_with_pos() {
        let mut store = ParamStore::<f64>::new();
        let disc = PerlinDisc::init(&mut store, 4, 2, 2, 9);
        let feats = random_features(4, 4, 11);
        let mut tape = Tape::new();
        let q = tape.leaf(feats.clone());
        let s = disc.forward(&mut tape, &store, q).unwrap();
        let base = tape.value(s).data.clone();

        // swap tokens 1 and 2 together with their positional embeddings
        let mut swapped = feats.clone();
        for c in 0..4 {
            swapped.data.swap(4 + c, 8 + c);
        }
        let pos_idx = (0..store.len())
            .find(|&i| store.name(i) == "perlin.pos")
            .unwrap();
        let mut pos = store.value(pos_idx).clone();
        for c in 0..PERLIN_DIM {
            pos.data.swap(PERLIN_DIM + c, 2 * PERLIN_DIM + c);
        }
        store.set_value(pos_idx, pos);
        let mut tape = Tape::new();
        let q = tape.leaf(swapped);
        let s = disc.forward(&mut tape, &store, q).unwrap();
        let permuted = tape.value(s).data.clone();
        assert!((permuted[1] - base[2]).abs() < 1e-9);
        assert!((permuted[2] - base[1]).abs() < 1e-9);
        assert!((permuted[0] - base[0]).abs() < 1e-9);
        assert!((permuted[3] - base[3]).abs() < 1e-9);
    }

    #[test]
    fn perlin_couples_positions_globally() {
        let mut store = ParamStore::<f64>::new();
        let disc = PerlinDisc::init(&mut store, 4, 2, 2, 13);
        let feats = random_features(4, 4, 14);
        let mut tape = Tape::new();
        let q = tape.leaf(feats.clone());
        let s = disc.forward(&mut tape, &store, q).unwrap();
        let base = tape.value(s).data.clone();

        let mut poked = feats;
        poked.data[0] += 0.7;
        let mut tape = Tape::new();
        let q = tape.leaf(poked);
        let s = disc.forward(&mut tape, &store, q).unwrap();
        let after = tape.value(s).data.clone();
        let moved_elsewhere = (1..4).any(|t| (after[t] - base[t]).abs() > 1e-9);
        assert!(moved_elsewhere, "perturbing one token must reach others");
    }

    /// Hand-computed single-head attention on a 2-token instance.
    #[test]
    fn two_token_attention_oracle() {
        let t = 2usize;
        let d = 3usize;
        // tokens
        let x = [[0.5, -0.2, 0.1], [0.3, 0.4, -0.5]];
        // head projections (identity-ish, no bias)
        let wq = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let wk = [[0.5, 0.1, 0.0], [0.0, 0.7, 0.2], [0.3, 0.0, 0.9]];
        let wv = [[1.1, 0.0, 0.2], [0.0, 0.9, 0.0], [0.1, 0.0, 0.8]];

        // oracle in plain f64
        let matv = |w: &[[f64; 3]; 3], v: &[f64; 3]| {
            let mut out = [0.0f64; 3];
            for o in 0..3 {
                for i in 0..3 {
                    out[o] += w[o][i] * v[i];
                }
            }
            out
        };
        let q: Vec<[f64; 3]> = x.iter().map(|r| matv(&wq, r)).collect();
        let k: Vec<[f64; 3]> = x.iter().map(|r| matv(&wk, r)).collect();
        let v: Vec<[f64; 3]> = x.iter().map(|r| matv(&wv, r)).collect();
        let scale = 1.0 / (d as f64).sqrt();
        let mut want = vec![[0.0f64; 3]; t];
        for i in 0..t {
            let mut logits = [0.0f64; 2];
            for j in 0..t {
                logits[j] = (0..3).map(|c| q[i][c] * k[j][c]).sum::<f64>() * scale;
            }
            let m = logits[0].max(logits[1]);
            let e = [(logits[0] - m).exp(), (logits[1] - m).exp()];
            let z = e[0] + e[1];
            for j in 0..t {
                for c in 0..3 {
                    want[i][c] += e[j] / z * v[j][c];
                }
            }
        }

        // tape route
        let mut tape = Tape::<f64>::new();
        let xs = tape.leaf(Tensor::matrix(t, d, x.concat()));
        let wq_t = tape.leaf(Tensor::matrix(d, d, wq.concat()));
        let wk_t = tape.leaf(Tensor::matrix(d, d, wk.concat()));
        let wv_t = tape.leaf(Tensor::matrix(d, d, wv.concat()));
        let qh = tape.linear(xs, wq_t, None).unwrap();
        let kh = tape.linear(xs, wk_t, None).unwrap();
        let vh = tape.linear(xs, wv_t, None).unwrap();
        let scores = tape.linear(qh, kh, None).unwrap();
        let scores = tape.scale(scores, scale).unwrap();
        let weights = tape.softmax_rows(scores).unwrap();
        let ctx = tape.matmul(weights, vh).unwrap();
        let got = &tape.value(ctx).data;
        for i in 0..t {
            for c in 0..3 {
                assert!(
                    (got[i * 3 + c] - want[i][c]).abs() < 1e-5,
                    "token {i} dim {c}: {} vs {}",
                    got[i * 3 + c],
                    want[i][c]
                );
            }
        }
    }

    #[test]
    fn perlin_rejects_grid_mismatch() {
        let mut store = ParamStore::<f64>::new();
        let disc = PerlinDisc::init(&mut store, 4, 2, 2, 1);
        let mut tape = Tape::new();
        let q = tape.leaf(random_features(6, 4, 3));
        assert!(disc.forward(&mut tape, &store, q).is_err());
    }
}
