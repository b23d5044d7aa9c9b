//! Central finite-difference gradient verification.

use super::{AdResult, Tape, Tensor, TensorId};

/// Outcome of a gradient check; `max_rel_err` compares each analytic
/// coordinate against its central difference, relative to
/// `max(|analytic|, |numeric|, 1e-4)`.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub worst_coord: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub passed: bool,
}

/// Checks the gradient of a scalar-valued tape function at `x0`.
///
/// `f` must deterministically rebuild the same computation on any tape it is
/// handed; it is re-run `2 * numel + 1` times.
pub fn grad_check<F>(f: F, x0: &Tensor<f64>, step: f64, tol: f64) -> AdResult<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, TensorId) -> AdResult<TensorId>,
{
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(x0.clone());
    let loss = f(&mut tape, x)?;
    tape.backward(loss)?;
    let analytic = tape
        .grad(x)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x0.numel()]);

    let eval = |xt: Tensor<f64>| -> AdResult<f64> {
        let mut t = Tape::<f64>::new();
        let xi = t.leaf(xt);
        let l = f(&mut t, xi)?;
        Ok(t.value(l).item())
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst_coord: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        passed: true,
    };
    for i in 0..x0.numel() {
        let mut plus = x0.clone();
        plus.data[i] += step;
        let mut minus = x0.clone();
        minus.data[i] -= step;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * step);
        let a = analytic[i];
        let abs_err = (a - numeric).abs();
        let rel = abs_err / a.abs().max(numeric.abs()).max(1e-4);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_coord = i;
            report.analytic_at_worst = a;
            report.numeric_at_worst = numeric;
        }
        report.max_abs_err = report.max_abs_err.max(abs_err);
    }
    report.passed = report.max_rel_err < tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three_has_gradient_six() {
        let report = grad_check(
            |tape, x| {
                let y = tape.mul(x, x)?;
                tape.sum_all(y)
            },
            &Tensor::scalar(3.0),
            1e-4,
            1e-6,
        )
        .unwrap();
        assert!(report.passed, "rel err {}", report.max_rel_err);
        assert!((report.analytic_at_worst - 6.0).abs() < 1e-8 || report.max_abs_err < 1e-8);
    }

    #[test]
    fn layernorm_then_sum_passes() {
        let x0 = Tensor::matrix(2, 4, vec![0.3, -1.2, 0.8, 2.1, -0.4, 0.9, 1.7, -2.2]);
        let report = grad_check(
            |tape, x| {
                let gamma = tape.leaf(Tensor::new(vec![4], vec![1.1, 0.9, 1.3, 0.7]));
                let beta = tape.leaf(Tensor::new(vec![4], vec![0.1, -0.1, 0.2, 0.0]));
                let y = tape.layernorm_rows(x, gamma, beta)?;
                let y2 = tape.mul(y, y)?;
                tape.sum_all(y2)
            },
            &x0,
            1e-4,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn checker_flags_a_rule_that_disagrees_with_differences() {
        // max_all at an exact tie routes the whole gradient to the first
        // maximizer, while the central difference sees half a unit on each
        // coordinate. The checker must report the disagreement.
        let report = grad_check(
            |tape, x| tape.max_all(x),
            &Tensor::new(vec![2], vec![1.0, 1.0]),
            1e-4,
            1e-6,
        )
        .unwrap();
        assert!(
            !report.passed,
            "subgradient/difference mismatch went undetected: {report:?}"
        );
    }
}
