//! First-order optimizers over named parameter groups.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::params::{Gradients, ParamGroups};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "lowercase"))]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer plus its per-group moment estimates.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    optimizer: Optimizer,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl OptimizerState {
    pub fn new(optimizer: Optimizer) -> Self {
        OptimizerState {
            optimizer,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Updates every group of `params` that has an entry in `grads`.
    pub fn step<P: ParamGroups + ?Sized>(&mut self, params: &mut P, grads: &Gradients, learning_rate: f64) {
        self.step += 1;
        let t = self.step;
        let optimizer = self.optimizer;
        let moments = &mut self.moments;
        params.visit_mut("", &mut |name, _, theta| {
            let Some(g) = grads.get(name) else { return };
            debug_assert_eq!(g.len(), theta.len(), "gradient shape for {name}");
            match optimizer {
                Optimizer::Sgd => {
                    for (p, &gi) in theta.iter_mut().zip(g) {
                        *p -= learning_rate * gi;
                    }
                }
                Optimizer::Adam { beta1, beta2, eps } => {
                    let (m, v) = moments
                        .entry(String::from(name))
                        .or_insert_with(|| (vec![0.0; theta.len()], vec![0.0; theta.len()]));
                    let c1 = 1.0 - math::powf(beta1, t as f64);
                    let c2 = 1.0 - math::powf(beta2, t as f64);
                    for i in 0..theta.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        theta[i] -= learning_rate * m_hat / (math::sqrt(v_hat) + eps);
                    }
                }
            }
        });
    }
}
