//! Parameter storage and the Adam update.

use super::{AdResult, AutodiffError, Element, Tensor};

/// One trainable tensor plus its optimizer state.
#[derive(Debug, Clone)]
pub struct Param<E> {
    pub name: String,
    pub value: Tensor<E>,
    m: Vec<E>,
    v: Vec<E>,
    steps: u64,
}

/// Flat, index-addressed set of trainable parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<E> {
    entries: Vec<Param<E>>,
}

impl<E: Element> ParamStore<E> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn add(&mut self, name: &str, value: Tensor<E>) -> usize {
        let n = value.numel();
        self.entries.push(Param {
            name: name.to_string(),
            value,
            m: vec![E::zero(); n],
            v: vec![E::zero(); n],
            steps: 0,
        });
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, idx: usize) -> &Tensor<E> {
        &self.entries[idx].value
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.entries[idx].name
    }

    pub fn set_value(&mut self, idx: usize, value: Tensor<E>) {
        assert_eq!(self.entries[idx].value.shape, value.shape);
        self.entries[idx].value = value;
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<E>> {
        self.entries.iter()
    }

    /// Concatenated little-endian bytes of all values, for integrity hashes
    /// and frozen-weights assertions.
    pub fn value_bytes(&self) -> Vec<u8>
    where
        E: Into<f64>,
    {
        let mut out = Vec::new();
        for p in &self.entries {
            for &v in &p.value.data {
                let f: f64 = v.into();
                out.extend_from_slice(&f.to_le_bytes());
            }
        }
        out
    }
}

/// Adam hyperparameters with the conventional defaults.
#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update over every parameter of the store.
///
/// `grads` must hold one gradient per parameter (a missing entry is a state
/// error); `lr_for` maps a parameter name to its learning rate, which lets
/// the three sub-networks train at their own rates. Gradients are consumed
/// by the step.
pub fn adam_step<E: Element>(
    store: &mut ParamStore<E>,
    grads: Vec<Option<Vec<E>>>,
    lr_for: impl Fn(&str) -> f64,
    hp: AdamHyper,
) -> AdResult<()> {
    if grads.len() != store.entries.len() {
        return Err(AutodiffError::MissingGrad(format!(
            "gradient vector covers {} of {} parameters",
            grads.len(),
            store.entries.len()
        )));
    }
    for (param, grad) in store.entries.iter_mut().zip(grads) {
        let Some(grad) = grad else {
            return Err(AutodiffError::MissingGrad(param.name.clone()));
        };
        let lr = E::c(lr_for(&param.name));
        let beta1 = E::c(hp.beta1);
        let beta2 = E::c(hp.beta2);
        let eps = E::c(hp.eps);
        param.steps += 1;
        let t = param.steps as i32;
        let bc1 = E::one() - beta1.powi(t);
        let bc2 = E::one() - beta2.powi(t);
        for i in 0..grad.len() {
            let g = grad[i];
            param.m[i] = beta1 * param.m[i] + (E::one() - beta1) * g;
            param.v[i] = beta2 * param.v[i] + (E::one() - beta2) * g * g;
            let m_hat = param.m[i] / bc1;
            let v_hat = param.v[i] / bc2;
            param.value.data[i] = param.value.data[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
