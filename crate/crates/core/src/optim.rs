//! Bias-corrected Adam.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::nn::Parameterized;
use crate::scalar::Scalar;

/// Per-parameter Adam accumulators, paired with the parameter by name and
/// visitation order. Serialized into checkpoints so training resumes exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamEntry<S> {
    pub name: String,
    pub m: Vec<S>,
    pub v: Vec<S>,
    pub step: u64,
}

/// Adam optimizer over everything a [`Parameterized`] network exposes.
#[derive(Debug, Clone)]
pub struct Adam<S> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    entries: Vec<AdamEntry<S>>,
}

impl<S: Scalar> Adam<S> {
    /// β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new(lr: S) -> Self {
        Adam {
            lr,
            beta1: S::cast(0.9),
            beta2: S::cast(0.999),
            eps: S::cast(1e-8),
            entries: Vec::new(),
        }
    }

    /// One update over all parameters of `net`, consuming the accumulated
    /// gradients (which the caller zeroes at the start of the next step).
    ///
    /// A non-finite gradient rejects the whole step and names the parameter;
    /// training aborts rather than spreading NaNs through the weights.
    pub fn step(&mut self, net: &mut dyn Parameterized<S>) -> Result<()> {
        if self.entries.is_empty() {
            net.visit_params(&mut |name, p| {
                self.entries.push(AdamEntry {
                    name: String::from(name),
                    m: vec![S::zero(); p.len()],
                    v: vec![S::zero(); p.len()],
                    step: 0,
                });
            });
        }

        let mut idx = 0usize;
        let mut failure: Option<CoreError> = None;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let entries = &mut self.entries;
        net.visit_params_mut(&mut |name, p| {
            if failure.is_some() {
                return;
            }
            let Some(entry) = entries.get_mut(idx) else {
                failure = Some(CoreError::InvalidArgument {
                    what: "Adam::step",
                    detail: alloc::format!("unexpected extra parameter {name}"),
                });
                return;
            };
            idx += 1;
            if entry.name != name || entry.m.len() != p.len() {
                failure = Some(CoreError::InvalidArgument {
                    what: "Adam::step",
                    detail: alloc::format!(
                        "optimizer state mismatch: expected {} ({} entries), got {} ({} entries)",
                        entry.name,
                        entry.m.len(),
                        name,
                        p.len()
                    ),
                });
                return;
            }
            if let Err(e) = p.ensure_grad_finite(name) {
                failure = Some(e);
                return;
            }

            entry.step += 1;
            let t = entry.step as i32;
            let corr1 = S::one() - b1.powi(t);
            let corr2 = S::one() - b2.powi(t);
            for ((w, &g), (m, v)) in p
                .value
                .iter_mut()
                .zip(p.grad.iter())
                .zip(entry.m.iter_mut().zip(entry.v.iter_mut()))
            {
                *m = b1 * *m + (S::one() - b1) * g;
                *v = b2 * *v + (S::one() - b2) * g * g;
                let m_hat = *m / corr1;
                let v_hat = *v / corr2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        if idx != entries.len() {
            return Err(CoreError::InvalidArgument {
                what: "Adam::step",
                detail: alloc::format!(
                    "optimizer tracked {} parameters but network exposed {idx}",
                    entries.len()
                ),
            });
        }
        Ok(())
    }

    pub fn entries(&self) -> &[AdamEntry<S>] {
        &self.entries
    }

    /// Restore accumulators from a checkpoint; validated on the next step.
    pub fn set_entries(&mut self, entries: Vec<AdamEntry<S>>) {
        self.entries = entries;
    }
}
