use crate::error::{Error, Result};
use crate::nn::MlpModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParameters {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParameters {
    fn default() -> Self {
        AdamParameters {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamParameters {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("bad Adam parameters {self:?}")))
        }
    }
}

/// Moment estimates of a bias-corrected Adam optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub hyper: AdamParameters,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl AdamState {
    pub fn new(len: usize, hyper: AdamParameters) -> AdamState {
        AdamState {
            hyper,
            m: vec![0.0; len],
            v: vec![0.0; len],
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One update of `theta` along `grads`.
    pub fn step(&mut self, theta: &mut [f64], grads: &[f64]) -> Result<()> {
        if theta.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                expected: self.m.len(),
                actual: if theta.len() != self.m.len() { theta.len() } else { grads.len() },
            });
        }
        self.steps += 1;
        let AdamParameters {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.hyper;
        let t = self.steps as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, &g), m), v) in theta.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= learning_rate * (*m / c1) / ((*v / c2).sqrt() + epsilon);
        }
        Ok(())
    }
}

pub fn adam_step(model: &mut MlpModel, grads: &[f64], opt: &mut AdamState) -> Result<()> {
    opt.step(model.params_mut(), grads)
}
