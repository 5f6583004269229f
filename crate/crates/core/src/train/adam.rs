use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamStore};
use crate::tensor::Scalar;

/// Bias-corrected Adam moments for every tensor of a parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros = || -> Vec<Vec<T>> {
            store
                .entries()
                .iter()
                .map(|e| vec![T::zero(); e.tensor.numel()])
                .collect()
        };
        AdamState {
            m: zeros(),
            v: zeros(),
            t: 0,
            beta1: Self::BETA1,
            beta2: Self::BETA2,
            eps: Self::EPS,
        }
    }

    /// One update of every parameter that has a gradient; `t` advances once.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Vec<T>)], lr: f64) -> Result<()> {
        for (id, g) in grads {
            let i = id.index();
            if i >= self.m.len() || store.len() <= i {
                return Err(Error::Dimension(format!(
                    "gradient for parameter {i} but the optimizer tracks {}",
                    self.m.len()
                )));
            }
            let n = store.get(*id).numel();
            if g.len() != n || self.m[i].len() != n {
                return Err(Error::Dimension(format!(
                    "{}: gradient has {} values, parameter has {n}",
                    store.entry(*id).name,
                    g.len()
                )));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - self.beta1), T::lit(1.0 - self.beta2));
        let c1 = T::lit(1.0 - self.beta1.powi(t));
        let c2 = T::lit(1.0 - self.beta2.powi(t));
        let (lr, eps) = (T::lit(lr), T::lit(self.eps));
        for (id, g) in grads {
            let i = id.index();
            let p = store.get_mut(*id).data_mut();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..g.len() {
                m[k] = b1 * m[k] + one_b1 * g[k];
                v[k] = b2 * v[k] + one_b2 * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] = p[k] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
