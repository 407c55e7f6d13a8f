use std::collections::BTreeMap;

use renormlab_tensor::Tensor;

use super::config::AdamConfig;
use crate::error::{LabError, Result};
use crate::model::ModelState;

/// Bias-corrected Adam over named parameters.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    t: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update to every parameter in `grads`.
    pub fn step(&mut self, state: &mut ModelState, grads: &BTreeMap<String, Tensor>, lr: f64) -> Result<()> {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (name, g) in grads {
            if !g.is_finite() {
                return Err(LabError::Diverged(format!("non-finite gradient for {name}")));
            }
            let mut p = state.parameter(name)?;
            let n = g.numel();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            for (i, (&gi, pi)) in g.data().iter().zip(p.data_mut()).enumerate() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                *pi -= lr * mh / (vh.sqrt() + eps);
            }
            state.set_parameter(name, p)?;
        }
        Ok(())
    }
}
