use serde::{Deserialize, Serialize};

use super::mlp::{MlpParams, ParamGrads};
use crate::error::{Error, Result};

/// Adam moment accumulators, laid out like the flattened parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(params: &MlpParams, lr: f64) -> Self {
        let n = params.n_params();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// Clears moments and the step counter, keeping hyperparameters.
    pub fn reset(&mut self) {
        self.step = 0;
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut MlpParams, grads: &ParamGrads) -> Result<()> {
        if params.n_params() != self.m.len()
            || grads.weights.len() != params.weights.len()
            || grads
                .weights
                .iter()
                .zip(&params.weights)
                .any(|(g, w)| g.dim() != w.dim())
        {
            return Err(Error::Shape(
                "gradient does not match parameter layout".into(),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let flat_g = grads.flatten();
        let mut k = 0;
        let (m, v) = (&mut self.m, &mut self.v);
        params.for_each_mut(|p| {
            let g = flat_g[k];
            m[k] = b1 * m[k] + (1.0 - b1) * g;
            v[k] = b2 * v[k] + (1.0 - b2) * g * g;
            let mh = m[k] / bc1;
            let vh = v[k] / bc2;
            *p -= lr * mh / (vh.sqrt() + eps);
            k += 1;
        });
        Ok(())
    }
}
