//! Named gradient checks over every differentiable primitive, the adaptor,
//! both discriminators, and each training loss.
//!
//! Everything runs in 64-bit with central differences (step 1e-4). Inputs
//! are seeded and kept away from the kinks of relu/hinge/max so the
//! difference quotient is trustworthy. Primitives must agree to 1e-4,
//! full network/loss compositions to 1e-3.

use rand::Rng;

use crate::autodiff::{grad_check, AdResult, ParamStore, Tape, Tensor, TensorId};
use crate::discriminators::{GaussianDisc, PerlinDisc};
use crate::imagery::Mask;
use crate::losses::{
    cls_loss, gaussian_loss, pixel_loss, similarity_loss, LossKind,
};
use crate::rng;

/// One line of the suite report.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

const STEP: f64 = 1e-4;
const TOL_PRIMITIVE: f64 = 1e-4;
const TOL_COMPOSITE: f64 = 1e-3;

fn tensor(rows: usize, cols: usize, seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut r = rng::stream(seed, "gradsuite", 0);
    let data = (0..rows * cols).map(|_| r.gen_range(lo..hi)).collect();
    Tensor::matrix(rows, cols, data)
}

/// Random values bounded away from zero (relu/leaky-relu kink).
fn tensor_off_zero(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
    let mut t = tensor(rows, cols, seed, -1.0, 1.0);
    for v in t.data.iter_mut() {
        if v.abs() < 0.05 {
            *v += if *v >= 0.0 { 0.1 } else { -0.1 };
        }
    }
    t
}

fn run<F>(name: &str, tol: f64, x0: Tensor<f64>, f: F) -> CheckOutcome
where
    F: Fn(&mut Tape<f64>, TensorId) -> AdResult<TensorId>,
{
    match grad_check(f, &x0, STEP, tol) {
        Ok(report) => CheckOutcome {
            name: name.to_string(),
            max_rel_err: report.max_rel_err,
            tolerance: tol,
            passed: report.passed,
        },
        Err(e) => CheckOutcome {
            name: format!("{name} (failed to run: {e})"),
            max_rel_err: f64::INFINITY,
            tolerance: tol,
            passed: false,
        },
    }
}

/// Runs the whole suite and returns one outcome per component.
pub fn gradient_suite() -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let theta = 0.8f64;

    // --- primitives ---
    out.push(run("matmul", TOL_PRIMITIVE, tensor(3, 4, 1, -1.0, 1.0), |t, x| {
        let b = t.leaf(tensor(4, 2, 2, -1.0, 1.0));
        let y = t.matmul(x, b)?;
        let y2 = t.mul(y, y)?;
        t.sum_all(y2)
    }));
    out.push(run(
        "matmul (right operand)",
        TOL_PRIMITIVE,
        tensor(4, 2, 3, -1.0, 1.0),
        |t, x| {
            let a = t.leaf(tensor(3, 4, 4, -1.0, 1.0));
            let y = t.matmul(a, x)?;
            let y2 = t.mul(y, y)?;
            t.sum_all(y2)
        },
    ));
    out.push(run(
        "linear (input)",
        TOL_PRIMITIVE,
        tensor(3, 5, 5, -1.0, 1.0),
        |t, x| {
            let w = t.leaf(tensor(2, 5, 6, -1.0, 1.0));
            let b = t.leaf(Tensor::new(vec![2], vec![0.3, -0.2]));
            let y = t.linear(x, w, Some(b))?;
            let y2 = t.mul(y, y)?;
            t.sum_all(y2)
        },
    ));
    out.push(run(
        "linear (weights)",
        TOL_PRIMITIVE,
        tensor(2, 5, 7, -1.0, 1.0),
        |t, w| {
            let x = t.leaf(tensor(3, 5, 8, -1.0, 1.0));
            let y = t.linear(x, w, None)?;
            let y2 = t.mul(y, y)?;
            t.sum_all(y2)
        },
    ));
    out.push(run("add", TOL_PRIMITIVE, tensor(2, 3, 9, -1.0, 1.0), |t, x| {
        let b = t.leaf(tensor(2, 3, 10, -1.0, 1.0));
        let y = t.add(x, b)?;
        let y2 = t.mul(y, y)?;
        t.sum_all(y2)
    }));
    out.push(run("sub", TOL_PRIMITIVE, tensor(2, 3, 11, -1.0, 1.0), |t, x| {
        let b = t.leaf(tensor(2, 3, 12, -1.0, 1.0));
        let y = t.sub(b, x)?;
        let y2 = t.mul(y, y)?;
        t.sum_all(y2)
    }));
    out.push(run("mul", TOL_PRIMITIVE, tensor(2, 3, 13, -1.0, 1.0), |t, x| {
        let b = t.leaf(tensor(2, 3, 14, -1.0, 1.0));
        let y = t.mul(x, b)?;
        t.sum_all(y)
    }));
    out.push(run(
        "scale / add_const",
        TOL_PRIMITIVE,
        tensor(2, 3, 15, -1.0, 1.0),
        |t, x| {
            let y = t.scale(x, -1.7)?;
            let y = t.add_const(y, 0.4)?;
            let y2 = t.mul(y, y)?;
            t.sum_all(y2)
        },
    ));
    out.push(run(
        "relu",
        TOL_PRIMITIVE,
        tensor_off_zero(3, 4, 16),
        |t, x| {
            let y = t.relu(x)?;
            t.sum_all(y)
        },
    ));
    out.push(run(
        "leaky_relu",
        TOL_PRIMITIVE,
        tensor_off_zero(3, 4, 17),
        |t, x| {
            let y = t.leaky_relu(x, 0.2)?;
            let y2 = t.mul(y, y)?;
            t.sum_all(y2)
        },
    ));
    out.push(run("sigmoid", TOL_PRIMITIVE, tensor(3, 4, 18, -2.0, 2.0), |t, x| {
        let y = t.sigmoid(x)?;
        let y2 = t.mul(y, y)?;
        t.sum_all(y2)
    }));
    out.push(run("ln", TOL_PRIMITIVE, tensor(2, 3, 19, 0.2, 2.0), |t, x| {
        let y = t.ln(x)?;
        t.sum_all(y)
    }));
    out.push(run(
        "softmax_rows",
        TOL_PRIMITIVE,
        tensor(3, 5, 20, -1.5, 1.5),
        |t, x| {
            let y = t.softmax_rows(x)?;
            let w = t.leaf(tensor(3, 5, 21, -1.0, 1.0));
            let y2 = t.mul(y, w)?;
            t.sum_all(y2)
        },
    ));
    out.push(run(
        "layernorm_rows",
        TOL_PRIMITIVE,
        tensor(3, 6, 22, -1.5, 1.5),
        |t, x| {
            let g = t.leaf(Tensor::new(vec![6], tensor(1, 6, 23, 0.5, 1.5).data));
            let b = t.leaf(Tensor::new(vec![6], vec![0.1; 6]));
            let y = t.layernorm_rows(x, g, b)?;
            let y2 = t.mul(y, y)?;
            t.sum_all(y2)
        },
    ));
    out.push(run("mean_all", TOL_PRIMITIVE, tensor(3, 4, 24, -1.0, 1.0), |t, x| {
        let y2 = t.mul(x, x)?;
        t.mean_all(y2)
    }));
    out.push(run(
        "max_over_positions",
        TOL_PRIMITIVE,
        {
            // distinct entries keep the maximizer unique under perturbation
            let mut t = tensor(3, 4, 25, -1.0, 1.0);
            for (i, v) in t.data.iter_mut().enumerate() {
                *v += i as f64 * 0.05;
            }
            t
        },
        |t, x| {
            let y2 = t.mul(x, x)?;
            t.max_all(y2)
        },
    ));
    out.push(run(
        "cosine_similarity",
        TOL_PRIMITIVE,
        tensor(2, 4, 26, 0.2, 1.0),
        |t, x| {
            let b = t.leaf(tensor(2, 4, 27, 0.2, 1.0));
            t.cosine(x, b)
        },
    ));
    out.push(run(
        "hinge (theta - x)",
        TOL_PRIMITIVE,
        tensor(2, 4, 28, -0.6, 0.6),
        |t, x| {
            let y = t.hinge_low(x, theta)?;
            t.mean_all(y)
        },
    ));
    out.push(run(
        "hinge (theta + x)",
        TOL_PRIMITIVE,
        tensor(2, 4, 29, -0.6, 0.6),
        |t, x| {
            let y = t.hinge_high(x, theta)?;
            t.mean_all(y)
        },
    ));

    // --- adaptor (input and weight sides) ---
    let c = 8usize;
    out.push(run(
        "adaptor (features)",
        TOL_COMPOSITE,
        tensor(6, c, 30, -1.0, 1.0),
        move |t, x| {
            let w = t.leaf(tensor(c, c, 31, -0.5, 0.5));
            let q = t.linear(x, w, None)?;
            let q2 = t.mul(q, q)?;
            t.sum_all(q2)
        },
    ));
    out.push(run(
        "adaptor (weights)",
        TOL_COMPOSITE,
        tensor(c, c, 32, -0.5, 0.5),
        move |t, w| {
            let x = t.leaf(tensor(6, c, 33, -1.0, 1.0));
            let q = t.linear(x, w, None)?;
            let q2 = t.mul(q, q)?;
            t.sum_all(q2)
        },
    ));

    // --- discriminators (gradient w.r.t. input features and one weight) ---
    let mut g_store = ParamStore::<f64>::new();
    let g_disc = GaussianDisc::init(&mut g_store, c, 77);
    let gs = g_store.clone();
    let gd = g_disc.clone();
    out.push(run(
        "gaussian discriminator (features)",
        TOL_COMPOSITE,
        tensor_off_zero(6, c, 34),
        move |t, x| {
            let s = gd.forward(t, &gs, x)?;
            let s2 = t.mul(s, s)?;
            t.sum_all(s2)
        },
    ));
    let gs = g_store.clone();
    out.push(run(
        "gaussian discriminator (hidden weights)",
        TOL_COMPOSITE,
        tensor(c, c, 35, -0.4, 0.4),
        move |t, w1| {
            // same composition as the discriminator forward, differentiated
            // with the hidden weight matrix as the input
            let x = t.leaf(tensor_off_zero(6, c, 36));
            let b1 = t.leaf(gs.value(1).clone());
            let w2 = t.leaf(gs.value(2).clone());
            let b2 = t.leaf(gs.value(3).clone());
            let h = t.linear(x, w1, Some(b1))?;
            let h = t.leaky_relu(h, crate::discriminators::GAUSS_LEAKY_SLOPE)?;
            let s = t.linear(h, w2, Some(b2))?;
            let s2 = t.mul(s, s)?;
            t.sum_all(s2)
        },
    ));

    let (gh, gw) = (2usize, 3usize);
    let mut p_store = ParamStore::<f64>::new();
    let p_disc = PerlinDisc::init(&mut p_store, c, gh, gw, 88);
    let ps = p_store.clone();
    let pd = p_disc.clone();
    out.push(run(
        "perlin discriminator (features)",
        TOL_COMPOSITE,
        tensor(gh * gw, c, 37, -1.0, 1.0),
        move |t, x| {
            let s = pd.forward(t, &ps, x)?;
            let s2 = t.mul(s, s)?;
            t.sum_all(s2)
        },
    ));

    // --- losses through the discriminator composition ---
    let mask = {
        let mut m = Mask::new(gh, gw);
        m.set(0, 1, 1);
        m.set(1, 2, 1);
        m
    };
    let m2 = mask.clone();
    out.push(run(
        "similarity loss",
        TOL_COMPOSITE,
        tensor(gh * gw, c, 38, 0.1, 1.0),
        move |t, x| {
            let qn = t.leaf(tensor(gh * gw, c, 39, 0.1, 1.0));
            similarity_loss(t, &[(x, qn)], &m2, false).map_err(loss_to_ad)
        },
    ));
    let gs = g_store.clone();
    let gd = g_disc.clone();
    out.push(run(
        "gaussian loss",
        TOL_COMPOSITE,
        tensor_off_zero(gh * gw, c, 40),
        move |t, x| {
            let noise = t.leaf(tensor(gh * gw, c, 41, -0.1, 0.1));
            let noised = t.add(x, noise)?;
            let sn = gd.forward(t, &gs, x)?;
            let sa = gd.forward(t, &gs, noised)?;
            gaussian_loss(t, &[sn], &[sa], theta, LossKind::Hinge).map_err(loss_to_ad)
        },
    ));
    let ps = p_store.clone();
    let pd = p_disc.clone();
    let m3 = mask.clone();
    out.push(run(
        "pixel loss",
        TOL_COMPOSITE,
        // seed chosen so no discriminator score sits near the hinge kink,
        // where central differences are invalid
        tensor(gh * gw, c, 43, -1.0, 1.0),
        move |t, x| {
            let s = pd.forward(t, &ps, x)?;
            pixel_loss(t, &[s], &m3, theta, LossKind::Hinge, false).map_err(loss_to_ad)
        },
    ));
    let ps = p_store.clone();
    let pd = p_disc.clone();
    out.push(run(
        "classification loss",
        TOL_COMPOSITE,
        tensor(gh * gw, c, 43, -1.0, 1.0),
        move |t, x| {
            let s = pd.forward(t, &ps, x)?;
            cls_loss(t, &[s], 1.0).map_err(loss_to_ad)
        },
    ));

    out
}

fn loss_to_ad(e: crate::losses::LossError) -> crate::autodiff::AutodiffError {
    match e {
        crate::losses::LossError::Autodiff(inner) => inner,
        other => crate::autodiff::AutodiffError::ShapeMismatch {
            op: "loss",
            detail: other.to_string(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whole_suite_passes() {
        for outcome in gradient_suite() {
            assert!(
                outcome.passed,
                "{}: max rel err {} over tolerance {}",
                outcome.name, outcome.max_rel_err, outcome.tolerance
            );
        }
    }
}

