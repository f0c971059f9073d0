use std::collections::BTreeMap;

use crate::error::{shape_err, usage_err, Result};
use crate::tensor::{Scalar, Tensor};
use crate::unet::ParamStore;

pub const DEFAULT_LR: f64 = 0.0005;

/// Adam moments for every parameter, keyed by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    m: BTreeMap<String, Tensor<T>>,
    v: BTreeMap<String, Tensor<T>>,
    t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    /// Zeroed moments shaped like `params`; β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new(params: &ParamStore<T>, lr: f64) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(n, p)| (n.to_string(), Tensor::zeros(p.shape())))
                .collect()
        };
        AdamState {
            m: zeros(),
            v: zeros(),
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Number of updates applied so far.
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor<T>> {
        self.m.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor<T>> {
        self.v.get(name)
    }

    /// One bias-corrected Adam update. `grads` must hold a tensor for every
    /// parameter, shaped like it.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        for (name, p) in params.iter() {
            let g = grads
                .get(name)
                .ok_or_else(|| usage_err!("missing gradient for parameter {name}"))?;
            if g.shape() != p.shape() {
                return Err(shape_err!(
                    "gradient for {name} has shape {:?}, parameter has {:?}",
                    g.shape(),
                    p.shape()
                ));
            }
            if !self.m.contains_key(name) {
                return Err(usage_err!("optimizer has no state for parameter {name}"));
            }
        }
        if params.len() != self.m.len() {
            return Err(usage_err!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                params.len()
            ));
        }

        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (name, p) in params.iter_mut() {
            let g = grads[name].data();
            let m = self.m.get_mut(name).expect("checked above").data_mut();
            let v = self.v.get_mut(name).expect("checked above").data_mut();
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m).zip(v) {
                let gi = gi.as_f64();
                let m_new = b1 * mi.as_f64() + (1.0 - b1) * gi;
                let v_new = b2 * vi.as_f64() + (1.0 - b2) * gi * gi;
                *mi = T::from_f64(m_new);
                *vi = T::from_f64(v_new);
                let m_hat = m_new / c1;
                let v_hat = v_new / c2;
                *pi = T::from_f64(pi.as_f64() - self.lr * m_hat / (v_hat.sqrt() + self.eps));
            }
        }
        Ok(())
    }
}
