use std::collections::HashMap;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};

use crate::model::ParamStore;
use crate::{Error, Result};

pub const ADAM_EPS: f64 = 1e-8;

/// Adam over a fixed group of variables, with moments keyed by parameter
/// name so they can be checkpointed.
#[derive(Debug)]
pub struct Adam {
    params: Vec<(String, Var)>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Adam {
    pub fn new(stores: &[&ParamStore], lr: f64, beta1: f64, beta2: f64) -> Result<Self> {
        let params: Vec<(String, Var)> = stores
            .iter()
            .flat_map(|s| s.iter().map(|(k, v)| (k.clone(), v.clone())))
            .collect();
        let zeros = params
            .iter()
            .map(|(_, v)| Ok(v.as_tensor().zeros_like()?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { m: zeros.clone(), v: zeros, params, t: 0, lr, beta1, beta2 })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Gradients of this group, in parameter order; missing ones are `None`.
    pub fn gradients(&self, grads: &GradStore) -> Vec<Option<Tensor>> {
        self.params.iter().map(|(_, v)| grads.get(v.as_tensor()).cloned()).collect()
    }

    /// Rescales gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip(grads: &mut [Option<Tensor>], max_norm: f64) -> Result<f64> {
        let mut sq = 0.0;
        for g in grads.iter().flatten() {
            sq += g.sqr()?.sum_all()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
        }
        let norm = sq.sqrt();
        if norm > max_norm {
            let scale = max_norm / norm;
            for g in grads.iter_mut().flatten() {
                *g = g.affine(scale, 0.0)?;
            }
        }
        Ok(norm)
    }

    /// One bias-corrected Adam update.
    pub fn step(&mut self, grads: &[Option<Tensor>]) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::shape("adam gradients", self.params.len(), grads.len()));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, ((_, var), g)) in self.params.iter().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            let m = (self.m[i].affine(self.beta1, 0.0)? + g.affine(1.0 - self.beta1, 0.0)?)?;
            let v = (self.v[i].affine(self.beta2, 0.0)? + g.sqr()?.affine(1.0 - self.beta2, 0.0)?)?;
            let denom = v.affine(1.0 / bc2, 0.0)?.sqrt()?.affine(1.0, ADAM_EPS)?;
            let update = m.affine(self.lr / bc1, 0.0)?.div(&denom)?;
            var.set(&var.as_tensor().sub(&update)?)?;
            self.m[i] = m;
            self.v[i] = v;
        }
        Ok(())
    }

    /// Moments as `optim.<group>.m.<name>` / `optim.<group>.v.<name>`.
    pub fn state_tensors(&self, group: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(2 * self.params.len());
        for (i, (name, _)) in self.params.iter().enumerate() {
            out.push((format!("optim.{group}.m.{name}"), self.m[i].clone()));
            out.push((format!("optim.{group}.v.{name}"), self.v[i].clone()));
        }
        out
    }

    pub fn load_state(&mut self, group: &str, tensors: &HashMap<String, Tensor>, t: u64) -> Result<()> {
        for (i, (name, var)) in self.params.iter().enumerate() {
            for (kind, slot) in [("m", &mut self.m[i]), ("v", &mut self.v[i])] {
                let key = format!("optim.{group}.{kind}.{name}");
                let src = tensors
                    .get(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer tensor {key}")))?;
                if src.dims() != var.dims() {
                    return Err(Error::Checkpoint(format!("optimizer tensor {key} has wrong shape")));
                }
                *slot = src.to_dtype(var.dtype())?;
            }
        }
        self.t = t;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Init;
    use candle_core::DType;

    #[test]
    fn first_step_moves_each_parameter_by_lr() {
        let mut store = ParamStore::new(DType::F64, 0);
        let w = store.create("w".into(), 3, Init::Const(1.0)).unwrap();
        let mut adam = Adam::new(&[&store], 0.1, 0.5, 0.999).unwrap();
        let loss = w.mul(&Tensor::new(&[2.0f64, -3.0, 0.5], w.device()).unwrap()).unwrap().sum_all().unwrap();
        let grads = adam.gradients(&loss.backward().unwrap());
        adam.step(&grads).unwrap();
        let after = store.get("w").unwrap().as_tensor().to_vec1::<f64>().unwrap();
        // Bias-corrected first step is lr · sign(g) up to eps.
        for (a, e) in after.iter().zip([0.9, 1.1, 0.9]) {
            assert!((a - e).abs() < 1e-6, "{a} vs {e}");
        }
    }

    #[test]
    fn matches_scalar_adam_over_several_steps() {
        let mut store = ParamStore::new(DType::F64, 0);
        let w = store.create("w".into(), 1, Init::Const(2.0)).unwrap();
        let (lr, b1, b2) = (0.05, 0.5, 0.999);
        let mut adam = Adam::new(&[&store], lr, b1, b2).unwrap();
        let (mut p, mut m, mut v) = (2.0f64, 0.0, 0.0);
        for t in 1..=5 {
            let loss = w.sqr().unwrap().sum_all().unwrap();
            let grads = adam.gradients(&loss.backward().unwrap());
            adam.step(&grads).unwrap();
            let g = 2.0 * p;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            p -= lr * mh / (vh.sqrt() + ADAM_EPS);
            let got = store.get("w").unwrap().as_tensor().to_vec1::<f64>().unwrap()[0];
            assert!((got - p).abs() < 1e-12);
        }
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let dev = candle_core::Device::Cpu;
        let mut g = vec![Some(Tensor::new(&[3.0f64, 4.0], &dev).unwrap()), None];
        let n = Adam::clip(&mut g, 1.0).unwrap();
        assert_eq!(n, 5.0);
        let v = g[0].as_ref().unwrap().to_vec1::<f64>().unwrap();
        assert!((v[0] - 0.6).abs() < 1e-12 && (v[1] - 0.8).abs() < 1e-12);
    }
}
