//! Adam with bias-corrected moment estimates.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            alpha: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if self.alpha.is_nan() || self.alpha < 0.0 || !unit(self.beta1) || !unit(self.beta2) || self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::InvalidArgument(format!("invalid Adam hyperparameters {self:?}")));
        }
        Ok(())
    }
}

/// First and second moments per parameter tensor, plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Real = f32> {
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let first: Vec<Tensor<T>> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            second: first.clone(),
            first,
            t: 0,
        }
    }

    /// One update. Shapes are checked and gradients screened for non-finite
    /// values before anything is written, so a rejected step leaves both the
    /// parameters and the state untouched.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>], hyper: &AdamHyper) -> Result<()> {
        hyper.validate()?;
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::Shape(format!(
                "Adam state tracks {} tensors, got {} parameters and {} gradients",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.first[i].shape() || g.shape() != p.shape() {
                return Err(Error::Shape(format!(
                    "parameter {i}: shape {:?}, gradient {:?}, state {:?}",
                    p.shape(),
                    g.shape(),
                    self.first[i].shape()
                )));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter {i}")));
            }
        }

        self.t += 1;
        let t = self.t as i32;
        let b1 = T::from_f64(hyper.beta1);
        let b2 = T::from_f64(hyper.beta2);
        let one_minus_b1 = T::from_f64(1.0 - hyper.beta1);
        let one_minus_b2 = T::from_f64(1.0 - hyper.beta2);
        let correct1 = T::from_f64(1.0 - hyper.beta1.powi(t));
        let correct2 = T::from_f64(1.0 - hyper.beta2.powi(t));
        let alpha = T::from_f64(hyper.alpha);
        let eps = T::from_f64(hyper.epsilon);

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let iter = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((theta, &grad), (m, v)) in iter {
                *m = b1 * *m + one_minus_b1 * grad;
                *v = b2 * *v + one_minus_b2 * grad * grad;
                let m_hat = *m / correct1;
                let v_hat = *v / correct2;
                *theta -= alpha * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
