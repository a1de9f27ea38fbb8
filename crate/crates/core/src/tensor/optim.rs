//! Gradient-ascent optimizers over named parameter sets.

use std::collections::HashMap;

use thiserror::Error;

use super::ParamSet;

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("non-finite gradient in parameter {0:?}")]
    NonFiniteGrad(String),
}

enum Kind {
    /// `param += lr * grad`.
    Sgd,
    /// Bias-corrected adaptive moments, ascent form.
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        first: HashMap<String, Vec<f64>>,
        second: HashMap<String, Vec<f64>>,
    },
}

pub struct Optimizer {
    kind: Kind,
    lr: f64,
    step: u64,
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Optimizer {
        Optimizer { kind: Kind::Sgd, lr, step: 0 }
    }

    /// Defaults: decays 0.9/0.999, stabilizer 1e-8.
    pub fn adam(lr: f64) -> Optimizer {
        Optimizer {
            kind: Kind::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                first: HashMap::new(),
                second: HashMap::new(),
            },
            lr,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// One ascent step using each parameter's accumulated `grad`; parameters
    /// without a gradient are treated as zero-gradient. Grads are cleared.
    pub fn ascent_step(&mut self, params: &ParamSet) -> Result<(), OptimizerError> {
        self.step += 1;
        for (name, t) in params.iter() {
            let grad = match t.grad() {
                Some(g) => g,
                None => vec![0.0; t.len()],
            };
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(OptimizerError::NonFiniteGrad(name.to_string()));
            }
            let mut vals = t.to_vec();
            match &mut self.kind {
                Kind::Sgd => {
                    for (v, g) in vals.iter_mut().zip(&grad) {
                        *v += self.lr * g;
                    }
                }
                Kind::Adam { beta1, beta2, eps, first, second } => {
                    let m = first.entry(name.to_string()).or_insert_with(|| vec![0.0; t.len()]);
                    let v2 = second.entry(name.to_string()).or_insert_with(|| vec![0.0; t.len()]);
                    let bc1 = 1.0 - beta1.powi(self.step as i32);
                    let bc2 = 1.0 - beta2.powi(self.step as i32);
                    for i in 0..vals.len() {
                        m[i] = *beta1 * m[i] + (1.0 - *beta1) * grad[i];
                        v2[i] = *beta2 * v2[i] + (1.0 - *beta2) * grad[i] * grad[i];
                        let m_hat = m[i] / bc1;
                        let v_hat = v2[i] / bc2;
                        vals[i] += self.lr * m_hat / (v_hat.sqrt() + *eps);
                    }
                }
            }
            t.set_values(&vals);
            t.zero_grad();
        }
        Ok(())
    }
}
