use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};

use crate::error::{Error, Result};

const EPS: f64 = 1e-8;

/// Adam without weight decay. Moment estimates are keyed by parameter name
/// so they can be checkpointed and restored exactly.
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    /// Updates applied so far (drives bias correction).
    pub t: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(Error::Config(format!("Adam betas must lie in [0, 1), got ({beta1}, {beta2})")));
        }
        Ok(Adam {
            beta1,
            beta2,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        })
    }

    /// One update of every parameter that received a gradient.
    pub fn step(&mut self, params: &[(String, Var)], grads: &GradStore, lr: f64) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, var) in params {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            // Gradients carry op history; keeping it in the moments would
            // retain every step's graph.
            let g = &g.detach();
            let m = match self.m.get(name) {
                Some(m) => ((m * self.beta1)? + (g * (1.0 - self.beta1))?)?,
                None => (g * (1.0 - self.beta1))?,
            };
            let v = match self.v.get(name) {
                Some(v) => ((v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?,
                None => (g.sqr()? * (1.0 - self.beta2))?,
            };
            let denom = ((&v / bc2)?.sqrt()? + EPS)?;
            let update = ((&m / bc1)? / denom)?;
            var.set(&(var.as_tensor() - (update * lr)?)?)?;
            self.m.insert(name.clone(), m);
            self.v.insert(name.clone(), v);
        }
        Ok(())
    }

    /// Moments as `adam.m.<name>` / `adam.v.<name>` entries.
    pub fn state_tensors(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (k, t) in &self.m {
            out.insert(format!("adam.m.{k}"), t.clone());
        }
        for (k, t) in &self.v {
            out.insert(format!("adam.v.{k}"), t.clone());
        }
        out
    }

    pub fn load_state(&mut self, tensors: &BTreeMap<String, Tensor>, t: u64) -> Result<()> {
        self.m.clear();
        self.v.clear();
        for (k, v) in tensors {
            if let Some(name) = k.strip_prefix("adam.m.") {
                self.m.insert(name.to_string(), v.clone());
            } else if let Some(name) = k.strip_prefix("adam.v.") {
                self.v.insert(name.to_string(), v.clone());
            }
        }
        if self.m.len() != self.v.len() {
            return Err(Error::Checkpoint("optimizer state has unpaired moments".into()));
        }
        self.t = t;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn first_step_moves_by_learning_rate_against_gradient_sign() {
        let w = Var::from_tensor(&Tensor::new(&[1.0f64, -2.0], &Device::Cpu).unwrap()).unwrap();
        let loss = (w.as_tensor() * 3.0).unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        let mut adam = Adam::new(0.9, 0.999).unwrap();
        adam.step(&[("w".into(), w.clone())], &grads, 0.1).unwrap();
        let v = w.as_tensor().to_vec1::<f64>().unwrap();
        assert!((v[0] - 0.9).abs() < 1e-6 && (v[1] + 2.1).abs() < 1e-6);
        assert_eq!(adam.state_tensors().len(), 2);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let w = Var::zeros(3, DType::F64, &Device::Cpu).unwrap();
        let target = Tensor::new(&[1.0f64, -1.0, 0.5], &Device::Cpu).unwrap();
        let mut adam = Adam::new(0.9, 0.999).unwrap();
        for _ in 0..500 {
            let loss = (w.as_tensor() - &target).unwrap().sqr().unwrap().sum_all().unwrap();
            let g = loss.backward().unwrap();
            adam.step(&[("w".into(), w.clone())], &g, 0.05).unwrap();
        }
        let v = w.as_tensor().to_vec1::<f64>().unwrap();
        assert!((v[0] - 1.0).abs() < 1e-2 && (v[1] + 1.0).abs() < 1e-2);
    }

    #[test]
    fn rejects_bad_betas() {
        assert!(Adam::new(1.0, 0.999).is_err());
    }
}
