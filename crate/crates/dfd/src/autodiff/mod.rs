//! Minimal reverse-mode differentiation on dense tensors.
//!
//! A [`Tape`] records every operation; [`Tape::backward`] sweeps the nodes in
//! reverse creation order and accumulates gradients into each node (and, for
//! parameter leaves, into the owning [`ParamStore`] slot index). The tape is
//! rebuilt every training step; tracked tensors are never mutated in place.
//!
//! Element type is generic: training and inference run in `f32`, gradient
//! checks instantiate the same code over `f64` where central finite
//! differences are trustworthy.

mod adam;
mod checkpoint;
mod gradcheck;

pub use adam::{adam_step, AdamHyper, Param, ParamStore};
pub use checkpoint::{load_dfdw, save_dfdw, NamedTensor, DFDW_MAGIC, DFDW_VERSION};
pub use gradcheck::{grad_check, GradCheckReport};

use num_traits::Float;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite output of {0}")]
    NonFinite(&'static str),
    #[error("backward root must be a scalar tensor")]
    NotScalar,
    #[error("parameter '{0}' has no gradient")]
    MissingGrad(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type AdResult<T> = Result<T, AutodiffError>;

/// Scalar element of the tape; `f32` for training, `f64` for checking.
pub trait Element: Float + std::fmt::Debug + Default + Send + Sync + 'static {
    fn c(v: f64) -> Self;
}
impl Element for f32 {
    fn c(v: f64) -> Self {
        v as f32
    }
}
impl Element for f64 {
    fn c(v: f64) -> Self {
        v
    }
}

/// Dense row-major tensor. Rank 0 (scalar), 1 (vector), or 2 (matrix).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<E> {
    pub shape: Vec<usize>,
    pub data: Vec<E>,
}

impl<E: Element> Tensor<E> {
    pub fn new(shape: Vec<usize>, data: Vec<E>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape/data length mismatch"
        );
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![E::zero(); n],
        }
    }

    pub fn scalar(v: E) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<E>) -> Self {
        Self::new(vec![rows, cols], data)
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    /// Row count when viewed as a matrix of rows over the last dimension.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    /// Length of the last dimension (1 for scalars).
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn item(&self) -> E {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

enum Op<E> {
    Leaf,
    Matmul {
        a: TensorId,
        b: TensorId,
    },
    /// `y = x * w^T (+ bias)`, the dense-layer primitive.
    Linear {
        x: TensorId,
        w: TensorId,
        bias: Option<TensorId>,
    },
    Add {
        a: TensorId,
        b: TensorId,
    },
    Sub {
        a: TensorId,
        b: TensorId,
    },
    Mul {
        a: TensorId,
        b: TensorId,
    },
    Scale {
        a: TensorId,
        factor: E,
    },
    AddConst {
        a: TensorId,
    },
    LeakyRelu {
        a: TensorId,
        slope: E,
    },
    Sigmoid {
        a: TensorId,
    },
    Ln {
        a: TensorId,
    },
    SoftmaxRows {
        a: TensorId,
    },
    LayerNormRows {
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        /// per-row (mean, reciprocal std) saved by the forward pass
        stats: Vec<(E, E)>,
    },
    MeanAll {
        a: TensorId,
    },
    SumAll {
        a: TensorId,
    },
    MaxAll {
        a: TensorId,
        argmax: usize,
    },
    Cosine {
        a: TensorId,
        b: TensorId,
        dot: E,
        norm_a: E,
        norm_b: E,
    },
    /// `max(0, theta - x)` elementwise.
    HingeLow {
        a: TensorId,
        theta: E,
    },
    /// `max(0, theta + x)` elementwise.
    HingeHigh {
        a: TensorId,
        theta: E,
    },
}

struct Node<E> {
    value: Tensor<E>,
    op: Op<E>,
    /// Accumulated gradient across backward passes.
    grad: Option<Vec<E>>,
    /// Index into the [`ParamStore`] this leaf mirrors, if any.
    param: Option<usize>,
}

/// Records operations for one forward/backward cycle.
pub struct Tape<E> {
    nodes: Vec<Node<E>>,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

/// 8-lane unrolled dot product; keeps the reduction vectorizable.
#[inline]
fn dot<E: Element>(a: &[E], b: &[E]) -> E {
    const LANES: usize = 8;
    let chunks = a.len() / LANES;
    let mut acc = [E::zero(); LANES];
    for i in 0..chunks {
        let ai = &a[i * LANES..i * LANES + LANES];
        let bi = &b[i * LANES..i * LANES + LANES];
        for l in 0..LANES {
            acc[l] = acc[l] + ai[l] * bi[l];
        }
    }
    let mut s = E::zero();
    for l in 0..LANES {
        s = s + acc[l];
    }
    for i in chunks * LANES..a.len() {
        s = s + a[i] * b[i];
    }
    s
}

/// `out[m x n] += a[m x k] * b[k x n]`.
fn mm_nn<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize, out: &mut [E]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

/// `out[m x n] += a[m x k] * b[n x k]^T` (rows dotted with rows).
fn mm_nt<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize, out: &mut [E]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (j, o) in orow.iter_mut().enumerate() {
            *o = *o + dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out[k x n] += a[m x k]^T * b[m x n]`.
fn mm_tn<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize, out: &mut [E]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: TensorId) -> &Tensor<E> {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient of a node, if any backward pass reached it.
    pub fn grad(&self, id: TensorId) -> Option<&[E]> {
        self.nodes[id.0].grad.as_deref()
    }

    fn push(&mut self, value: Tensor<E>, op: Op<E>, opname: &'static str) -> AdResult<TensorId> {
        if !value.all_finite() {
            return Err(AutodiffError::NonFinite(opname));
        }
        self.nodes.push(Node {
            value,
            op,
            grad: None,
            param: None,
        });
        Ok(TensorId(self.nodes.len() - 1))
    }

    /// Adds an input (constant) leaf.
    pub fn leaf(&mut self, value: Tensor<E>) -> TensorId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            grad: None,
            param: None,
        });
        TensorId(self.nodes.len() - 1)
    }

    /// Adds a leaf mirroring parameter `idx` of `store`.
    pub fn param(&mut self, store: &ParamStore<E>, idx: usize) -> TensorId {
        self.nodes.push(Node {
            value: store.value(idx).clone(),
            op: Op::Leaf,
            grad: None,
            param: Some(idx),
        });
        TensorId(self.nodes.len() - 1)
    }

    pub fn scalar(&mut self, v: E) -> TensorId {
        self.leaf(Tensor::scalar(v))
    }

    fn same_shape(&self, a: TensorId, b: TensorId, op: &'static str) -> AdResult<()> {
        let (sa, sb) = (&self.nodes[a.0].value.shape, &self.nodes[b.0].value.shape);
        if sa != sb {
            return Err(AutodiffError::ShapeMismatch {
                op,
                detail: format!("{sa:?} vs {sb:?}"),
            });
        }
        Ok(())
    }

    /// `a[m x k] * b[k x n]`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> AdResult<TensorId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape.len() != 2 || vb.shape.len() != 2 || va.shape[1] != vb.shape[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                detail: format!("{:?} x {:?}", va.shape, vb.shape),
            });
        }
        let (m, k, n) = (va.shape[0], va.shape[1], vb.shape[1]);
        let mut out = vec![E::zero(); m * n];
        mm_nn(&va.data, &vb.data, m, k, n, &mut out);
        self.push(Tensor::matrix(m, n, out), Op::Matmul { a, b }, "matmul")
    }

    /// Dense layer `x[m x k] * w[n x k]^T (+ bias[n])`.
    pub fn linear(&mut self, x: TensorId, w: TensorId, bias: Option<TensorId>) -> AdResult<TensorId> {
        let (vx, vw) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
        if vx.shape.len() != 2 || vw.shape.len() != 2 || vx.shape[1] != vw.shape[1] {
            return Err(AutodiffError::ShapeMismatch {
                op: "linear",
                detail: format!("x {:?}, w {:?}", vx.shape, vw.shape),
            });
        }
        let (m, k, n) = (vx.shape[0], vx.shape[1], vw.shape[0]);
        if let Some(b) = bias {
            let vb = &self.nodes[b.0].value;
            if vb.shape != vec![n] {
                return Err(AutodiffError::ShapeMismatch {
                    op: "linear",
                    detail: format!("bias {:?}, want [{n}]", vb.shape),
                });
            }
        }
        let mut out = vec![E::zero(); m * n];
        mm_nt(&vx.data, &vw.data, m, k, n, &mut out);
        if let Some(b) = bias {
            let vb = &self.nodes[b.0].value.data;
            for row in out.chunks_exact_mut(n) {
                for (o, &bv) in row.iter_mut().zip(vb) {
                    *o = *o + bv;
                }
            }
        }
        self.push(Tensor::matrix(m, n, out), Op::Linear { x, w, bias }, "linear")
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> AdResult<TensorId> {
        self.same_shape(a, b, "add")?;
        let data = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.nodes[a.0].value.shape.clone();
        self.push(Tensor::new(shape, data), Op::Add { a, b }, "add")
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> AdResult<TensorId> {
        self.same_shape(a, b, "sub")?;
        let data = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(&x, &y)| x - y)
            .collect();
        let shape = self.nodes[a.0].value.shape.clone();
        self.push(Tensor::new(shape, data), Op::Sub { a, b }, "sub")
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> AdResult<TensorId> {
        self.same_shape(a, b, "mul")?;
        let data = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.nodes[a.0].value.shape.clone();
        self.push(Tensor::new(shape, data), Op::Mul { a, b }, "mul")
    }

    pub fn scale(&mut self, a: TensorId, factor: E) -> AdResult<TensorId> {
        let data = self.nodes[a.0].value.data.iter().map(|&x| x * factor).collect();
        let shape = self.nodes[a.0].value.shape.clone();
        self.push(Tensor::new(shape, data), Op::Scale { a, factor }, "scale")
    }

    pub fn add_const(&mut self, a: TensorId, c: E) -> AdResult<TensorId> {
        let data = self.nodes[a.0].value.data.iter().map(|&x| x + c).collect();
        let shape = self.nodes[a.0].value.shape.clone();
        self.push(Tensor::new(shape, data), Op::AddConst { a }, "add_const")
    }

    pub fn relu(&mut self, a: TensorId) -> AdResult<TensorId> {
        self.leaky_relu(a, E::zero())
    }

    pub fn leaky_relu(&mut self, a: TensorId, slope: E) -> AdResult<TensorId> {
        let data = self.nodes[a.0]
            .value
            .data
            .iter()
            .map(|&x| if x > E::zero() { x } else { slope * x })
            .collect();
        let shape = self.nodes[a.0].value.shape.clone();
        self.push(
            Tensor::new(shape, data),
            Op::LeakyRelu { a, slope },
            "leaky_relu",
        )
    }

    pub fn sigmoid(&mut self, a: TensorId) -> AdResult<TensorId> {
        let data = self.nodes[a.0]
            .value
            .data
            .iter()
            .map(|&x| E::one() / (E::one() + (-x).exp()))
            .collect();
        let shape = self.nodes[a.0].value.shape.clone();
        self.push(Tensor::new(shape, data), Op::Sigmoid { a }, "sigmoid")
    }

    pub fn ln(&mut self, a: TensorId) -> AdResult<TensorId> {
        let data = self.nodes[a.0].value.data.iter().map(|&x| x.ln()).collect();
        let shape = self.nodes[a.0].value.shape.clone();
        self.push(Tensor::new(shape, data), Op::Ln { a }, "ln")
    }

    /// Row-wise softmax over the last dimension.
    pub fn softmax_rows(&mut self, a: TensorId) -> AdResult<TensorId> {
        let va = &self.nodes[a.0].value;
        let cols = va.cols();
        if cols == 0 {
            return Err(AutodiffError::ShapeMismatch {
                op: "softmax_rows",
                detail: "empty rows".into(),
            });
        }
        let mut data = va.data.clone();
        for row in data.chunks_exact_mut(cols) {
            let max = row.iter().cloned().fold(E::neg_infinity(), E::max);
            let mut sum = E::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum = sum + *v;
            }
            for v in row.iter_mut() {
                *v = *v / sum;
            }
        }
        let shape = va.shape.clone();
        self.push(Tensor::new(shape, data), Op::SoftmaxRows { a }, "softmax_rows")
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layernorm_rows(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
    ) -> AdResult<TensorId> {
        let eps = E::c(1e-5);
        let vx = &self.nodes[x.0].value;
        let cols = vx.cols();
        let rows = vx.rows();
        let (vg, vb) = (&self.nodes[gamma.0].value, &self.nodes[beta.0].value);
        if vg.shape != vec![cols] || vb.shape != vec![cols] {
            return Err(AutodiffError::ShapeMismatch {
                op: "layernorm_rows",
                detail: format!(
                    "gamma {:?} beta {:?}, want [{cols}]",
                    vg.shape, vb.shape
                ),
            });
        }
        let mut data = vec![E::zero(); vx.numel()];
        let mut stats = Vec::with_capacity(rows);
        let inv_n = E::one() / E::c(cols as f64);
        for r in 0..rows {
            let xin = &vx.data[r * cols..(r + 1) * cols];
            let mut mean = E::zero();
            for &v in xin {
                mean = mean + v;
            }
            mean = mean * inv_n;
            let mut var = E::zero();
            for &v in xin {
                var = var + (v - mean) * (v - mean);
            }
            var = var * inv_n;
            let rstd = E::one() / (var + eps).sqrt();
            stats.push((mean, rstd));
            let out = &mut data[r * cols..(r + 1) * cols];
            for i in 0..cols {
                out[i] = (xin[i] - mean) * rstd * vg.data[i] + vb.data[i];
            }
        }
        let shape = vx.shape.clone();
        self.push(
            Tensor::new(shape, data),
            Op::LayerNormRows {
                x,
                gamma,
                beta,
                stats,
            },
            "layernorm_rows",
        )
    }

    pub fn mean_all(&mut self, a: TensorId) -> AdResult<TensorId> {
        let va = &self.nodes[a.0].value;
        let n = E::c(va.numel() as f64);
        let mut sum = E::zero();
        for &v in &va.data {
            sum = sum + v;
        }
        self.push(Tensor::scalar(sum / n), Op::MeanAll { a }, "mean_all")
    }

    pub fn sum_all(&mut self, a: TensorId) -> AdResult<TensorId> {
        let mut sum = E::zero();
        for &v in &self.nodes[a.0].value.data {
            sum = sum + v;
        }
        self.push(Tensor::scalar(sum), Op::SumAll { a }, "sum_all")
    }

    /// Maximum over all positions; gradient flows to the first maximizer.
    pub fn max_all(&mut self, a: TensorId) -> AdResult<TensorId> {
        let va = &self.nodes[a.0].value;
        let mut best = va.data[0];
        let mut argmax = 0usize;
        for (i, &v) in va.data.iter().enumerate() {
            if v > best {
                best = v;
                argmax = i;
            }
        }
        self.push(Tensor::scalar(best), Op::MaxAll { a, argmax }, "max_all")
    }

    /// Cosine similarity of two flattened tensors; zero-norm inputs yield 0.
    pub fn cosine(&mut self, a: TensorId, b: TensorId) -> AdResult<TensorId> {
        self.same_shape(a, b, "cosine")?;
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let d = dot(&va.data, &vb.data);
        let na = dot(&va.data, &va.data).sqrt();
        let nb = dot(&vb.data, &vb.data).sqrt();
        let tiny = E::c(1e-12);
        let value = if na < tiny || nb < tiny {
            E::zero()
        } else {
            d / (na * nb)
        };
        self.push(
            Tensor::scalar(value),
            Op::Cosine {
                a,
                b,
                dot: d,
                norm_a: na,
                norm_b: nb,
            },
            "cosine",
        )
    }

    /// `max(0, theta - x)` elementwise.
    pub fn hinge_low(&mut self, a: TensorId, theta: E) -> AdResult<TensorId> {
        let data = self.nodes[a.0]
            .value
            .data
            .iter()
            .map(|&x| (theta - x).max(E::zero()))
            .collect();
        let shape = self.nodes[a.0].value.shape.clone();
        self.push(Tensor::new(shape, data), Op::HingeLow { a, theta }, "hinge_low")
    }

    /// `max(0, theta + x)` elementwise.
    pub fn hinge_high(&mut self, a: TensorId, theta: E) -> AdResult<TensorId> {
        let data = self.nodes[a.0]
            .value
            .data
            .iter()
            .map(|&x| (theta + x).max(E::zero()))
            .collect();
        let shape = self.nodes[a.0].value.shape.clone();
        self.push(
            Tensor::new(shape, data),
            Op::HingeHigh { a, theta },
            "hinge_high",
        )
    }

    /// Reverse sweep from a scalar root.
    ///
    /// Each call propagates a fresh unit seed and *adds* the result into the
    /// persistent per-node gradients, so two backward passes double every
    /// leaf gradient exactly.
    pub fn backward(&mut self, root: TensorId) -> AdResult<()> {
        if !self.nodes[root.0].value.is_scalar() {
            return Err(AutodiffError::NotScalar);
        }
        let n = self.nodes.len();
        let mut pass: Vec<Option<Vec<E>>> = vec![None; n];
        pass[root.0] = Some(vec![E::one()]);
        for i in (0..n).rev() {
            let Some(gout) = pass[i].take() else {
                continue;
            };
            self.accumulate_parents(i, &gout, &mut pass);
            let node = &mut self.nodes[i];
            match node.grad.as_mut() {
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&gout) {
                        *a = *a + *g;
                    }
                }
                None => node.grad = Some(gout),
            }
        }
        Ok(())
    }

    fn seed<'a>(pass: &'a mut [Option<Vec<E>>], id: TensorId, len: usize) -> &'a mut Vec<E> {
        pass[id.0].get_or_insert_with(|| vec![E::zero(); len])
    }

    fn accumulate_parents(&self, i: usize, gout: &[E], pass: &mut [Option<Vec<E>>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k, n) = (va.shape[0], va.shape[1], vb.shape[1]);
                {
                    let ga = Self::seed(pass, *a, m * k);
                    mm_nt(gout, &vb.data, m, n, k, ga);
                }
                let gb = Self::seed(pass, *b, k * n);
                mm_tn(&va.data, gout, m, k, n, gb);
            }
            Op::Linear { x, w, bias } => {
                let (vx, vw) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
                let (m, k, n) = (vx.shape[0], vx.shape[1], vw.shape[0]);
                {
                    let gx = Self::seed(pass, *x, m * k);
                    mm_nn(gout, &vw.data, m, n, k, gx);
                }
                {
                    let gw = Self::seed(pass, *w, n * k);
                    mm_tn(gout, &vx.data, m, n, k, gw);
                }
                if let Some(b) = bias {
                    let gb = Self::seed(pass, *b, n);
                    for row in gout.chunks_exact(n) {
                        for (g, &r) in gb.iter_mut().zip(row) {
                            *g = *g + r;
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for id in [a, b] {
                    let g = Self::seed(pass, *id, gout.len());
                    for (gi, &go) in g.iter_mut().zip(gout) {
                        *gi = *gi + go;
                    }
                }
            }
            Op::Sub { a, b } => {
                {
                    let ga = Self::seed(pass, *a, gout.len());
                    for (gi, &go) in ga.iter_mut().zip(gout) {
                        *gi = *gi + go;
                    }
                }
                let gb = Self::seed(pass, *b, gout.len());
                for (gi, &go) in gb.iter_mut().zip(gout) {
                    *gi = *gi - go;
                }
            }
            Op::Mul { a, b } => {
                let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                {
                    let ga = Self::seed(pass, *a, gout.len());
                    for i in 0..gout.len() {
                        ga[i] = ga[i] + gout[i] * vb.data[i];
                    }
                }
                let gb = Self::seed(pass, *b, gout.len());
                for i in 0..gout.len() {
                    gb[i] = gb[i] + gout[i] * va.data[i];
                }
            }
            Op::Scale { a, factor } => {
                let ga = Self::seed(pass, *a, gout.len());
                for (gi, &go) in ga.iter_mut().zip(gout) {
                    *gi = *gi + go * *factor;
                }
            }
            Op::AddConst { a } => {
                let ga = Self::seed(pass, *a, gout.len());
                for (gi, &go) in ga.iter_mut().zip(gout) {
                    *gi = *gi + go;
                }
            }
            Op::LeakyRelu { a, slope } => {
                let va = &self.nodes[a.0].value;
                let ga = Self::seed(pass, *a, gout.len());
                for i in 0..gout.len() {
                    let d = if va.data[i] > E::zero() {
                        E::one()
                    } else {
                        *slope
                    };
                    ga[i] = ga[i] + gout[i] * d;
                }
            }
            Op::Sigmoid { a } => {
                let y = &self.nodes[i].value;
                let ga = Self::seed(pass, *a, gout.len());
                for j in 0..gout.len() {
                    ga[j] = ga[j] + gout[j] * y.data[j] * (E::one() - y.data[j]);
                }
            }
            Op::Ln { a } => {
                let va = &self.nodes[a.0].value;
                let ga = Self::seed(pass, *a, gout.len());
                for j in 0..gout.len() {
                    ga[j] = ga[j] + gout[j] / va.data[j];
                }
            }
            Op::SoftmaxRows { a } => {
                let y = &self.nodes[i].value;
                let cols = y.cols();
                let ga = Self::seed(pass, *a, gout.len());
                for r in 0..y.rows() {
                    let yr = &y.data[r * cols..(r + 1) * cols];
                    let gr = &gout[r * cols..(r + 1) * cols];
                    let inner = dot(gr, yr);
                    let gar = &mut ga[r * cols..(r + 1) * cols];
                    for j in 0..cols {
                        gar[j] = gar[j] + yr[j] * (gr[j] - inner);
                    }
                }
            }
            Op::LayerNormRows {
                x,
                gamma,
                beta,
                stats,
            } => {
                let vx = &self.nodes[x.0].value;
                let vg = &self.nodes[gamma.0].value;
                let cols = vx.cols();
                let inv_n = E::one() / E::c(cols as f64);
                {
                    let gb = Self::seed(pass, *beta, cols);
                    for row in gout.chunks_exact(cols) {
                        for (g, &r) in gb.iter_mut().zip(row) {
                            *g = *g + r;
                        }
                    }
                }
                {
                    let gg = Self::seed(pass, *gamma, cols);
                    for (r, row) in gout.chunks_exact(cols).enumerate() {
                        let (mean, rstd) = stats[r];
                        let xr = &vx.data[r * cols..(r + 1) * cols];
                        for j in 0..cols {
                            gg[j] = gg[j] + row[j] * (xr[j] - mean) * rstd;
                        }
                    }
                }
                let gx = Self::seed(pass, *x, vx.numel());
                for (r, row) in gout.chunks_exact(cols).enumerate() {
                    let (mean, rstd) = stats[r];
                    let xr = &vx.data[r * cols..(r + 1) * cols];
                    // dxhat = dy * gamma; dx = rstd*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
                    let mut sum_dxhat = E::zero();
                    let mut sum_dxhat_xhat = E::zero();
                    for j in 0..cols {
                        let xhat = (xr[j] - mean) * rstd;
                        let dxhat = row[j] * vg.data[j];
                        sum_dxhat = sum_dxhat + dxhat;
                        sum_dxhat_xhat = sum_dxhat_xhat + dxhat * xhat;
                    }
                    let m1 = sum_dxhat * inv_n;
                    let m2 = sum_dxhat_xhat * inv_n;
                    let gxr = &mut gx[r * cols..(r + 1) * cols];
                    for j in 0..cols {
                        let xhat = (xr[j] - mean) * rstd;
                        let dxhat = row[j] * vg.data[j];
                        gxr[j] = gxr[j] + rstd * (dxhat - m1 - xhat * m2);
                    }
                }
            }
            Op::MeanAll { a } => {
                let n = self.nodes[a.0].value.numel();
                let g = gout[0] / E::c(n as f64);
                let ga = Self::seed(pass, *a, n);
                for gi in ga.iter_mut() {
                    *gi = *gi + g;
                }
            }
            Op::SumAll { a } => {
                let n = self.nodes[a.0].value.numel();
                let ga = Self::seed(pass, *a, n);
                for gi in ga.iter_mut() {
                    *gi = *gi + gout[0];
                }
            }
            Op::MaxAll { a, argmax } => {
                let n = self.nodes[a.0].value.numel();
                let ga = Self::seed(pass, *a, n);
                ga[*argmax] = ga[*argmax] + gout[0];
            }
            Op::Cosine {
                a,
                b,
                dot: d,
                norm_a,
                norm_b,
            } => {
                let tiny = E::c(1e-12);
                if *norm_a < tiny || *norm_b < tiny {
                    return; // defined as constant 0; no gradient
                }
                let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let g = gout[0];
                let inv_ab = E::one() / (*norm_a * *norm_b);
                let cos = *d * inv_ab;
                {
                    let ga = Self::seed(pass, *a, va.numel());
                    let inv_na2 = E::one() / (*norm_a * *norm_a);
                    for j in 0..va.numel() {
                        ga[j] = ga[j] + g * (vb.data[j] * inv_ab - cos * va.data[j] * inv_na2);
                    }
                }
                let gb = Self::seed(pass, *b, vb.numel());
                let inv_nb2 = E::one() / (*norm_b * *norm_b);
                for j in 0..vb.numel() {
                    gb[j] = gb[j] + g * (va.data[j] * inv_ab - cos * vb.data[j] * inv_nb2);
                }
            }
            Op::HingeLow { a, theta } => {
                let va = &self.nodes[a.0].value;
                let ga = Self::seed(pass, *a, gout.len());
                for j in 0..gout.len() {
                    if *theta - va.data[j] > E::zero() {
                        ga[j] = ga[j] - gout[j];
                    }
                }
            }
            Op::HingeHigh { a, theta } => {
                let va = &self.nodes[a.0].value;
                let ga = Self::seed(pass, *a, gout.len());
                for j in 0..gout.len() {
                    if *theta + va.data[j] > E::zero() {
                        ga[j] = ga[j] + gout[j];
                    }
                }
            }
        }
    }

    /// Collects accumulated gradients of parameter leaves, grouped by the
    /// parameter index they mirror.
    pub fn param_grads(&self, n_params: usize) -> Vec<Option<Vec<E>>> {
        let mut out: Vec<Option<Vec<E>>> = vec![None; n_params];
        for node in &self.nodes {
            let (Some(idx), Some(grad)) = (node.param, node.grad.as_ref()) else {
                continue;
            };
            match out[idx].as_mut() {
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(grad) {
                        *a = *a + *g;
                    }
                }
                None => out[idx] = Some(grad.clone()),
            }
        }
        out
    }
}
