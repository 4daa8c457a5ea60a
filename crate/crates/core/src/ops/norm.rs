//! Per-channel batch normalization over the N·H·W population.

use crate::error::{Error, Result};
use crate::ops::Mode;
use crate::real::Real;
use crate::tensor::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.9;

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams<T: Real = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    /// Weight of the previous running value in the moving average.
    pub momentum: f64,
    pub epsilon: f64,
}

impl<T: Real> BatchNormParams<T> {
    /// gamma 1, beta 0, running statistics (0, 1), default momentum and epsilon.
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(&[channels], T::ONE),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::ONE),
            momentum: DEFAULT_MOMENTUM,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.gamma.len();
        for (name, t) in [
            ("gamma", &self.gamma),
            ("beta", &self.beta),
            ("running_mean", &self.running_mean),
            ("running_var", &self.running_var),
        ] {
            if t.shape() != [c] {
                return Err(Error::Shape(format!(
                    "batch-norm {name} has shape {:?}, expected [{c}]",
                    t.shape()
                )));
            }
        }
        if !(self.momentum > 0.0 && self.momentum < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "batch-norm momentum {} outside (0, 1)",
                self.momentum
            )));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "batch-norm epsilon {} must be positive",
                self.epsilon
            )));
        }
        if self.running_var.data().iter().any(|&v| v < T::ZERO) {
            return Err(Error::InvalidArgument(
                "batch-norm running variance has negative entries".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct NormTape<T: Real = f32> {
    mode: Mode,
    /// Normalized input, `M × C` in NHWC order.
    x_hat: Vec<T>,
    inv_std: Vec<T>,
    shape: Vec<usize>,
}

#[derive(Debug)]
pub struct NormGrads<T: Real = f32> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

fn channels_of<T: Real>(input: &Tensor<T>, params: &BatchNormParams<T>) -> Result<usize> {
    params.validate()?;
    let c = *input.shape().last().unwrap();
    if input.rank() < 2 {
        return Err(Error::Shape(format!(
            "batch_norm input must have a leading batch axis, got {:?}",
            input.shape()
        )));
    }
    if c != params.channels() {
        return Err(Error::Shape(format!(
            "batch_norm input has {c} channels, parameters have {}",
            params.channels()
        )));
    }
    Ok(c)
}

/// Normalize `input` (channels last). In [`Mode::Train`] the running
/// statistics in `params` are updated; in [`Mode::Infer`] nothing is mutated.
pub fn batch_norm<T: Real>(
    input: &Tensor<T>,
    params: &mut BatchNormParams<T>,
    mode: Mode,
) -> Result<(Tensor<T>, NormTape<T>)> {
    let c = channels_of(input, params)?;
    let m = input.len() / c;
    let x = input.data();

    let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
        Mode::Train => {
            if m < 2 {
                return Err(Error::Shape(format!(
                    "batch_norm in train mode needs at least 2 values per channel, got {m}"
                )));
            }
            let mut sum = vec![0.0f64; c];
            for row in x.chunks(c) {
                for (s, v) in sum.iter_mut().zip(row) {
                    *s += v.to_f64();
                }
            }
            let mean: Vec<f64> = sum.iter().map(|s| s / m as f64).collect();
            let mut sq = vec![0.0f64; c];
            for row in x.chunks(c) {
                for ((s, v), mu) in sq.iter_mut().zip(row).zip(&mean) {
                    let d = v.to_f64() - mu;
                    *s += d * d;
                }
            }
            let var: Vec<f64> = sq.iter().map(|s| s / m as f64).collect();

            // Moving averages track the unbiased variance estimate.
            let keep = params.momentum;
            let unbias = m as f64 / (m as f64 - 1.0);
            for ch in 0..c {
                let rm = &mut params.running_mean.data_mut()[ch];
                *rm = T::from_f64(keep * rm.to_f64() + (1.0 - keep) * mean[ch]);
                let rv = &mut params.running_var.data_mut()[ch];
                *rv = T::from_f64(keep * rv.to_f64() + (1.0 - keep) * var[ch] * unbias);
            }
            (mean, var)
        }
        Mode::Infer => (
            params.running_mean.data().iter().map(|v| v.to_f64()).collect(),
            params.running_var.data().iter().map(|v| v.to_f64()).collect(),
        ),
    };

    let inv_std: Vec<T> = var
        .iter()
        .map(|v| T::from_f64(1.0 / (v + params.epsilon).sqrt()))
        .collect();
    let mean: Vec<T> = mean.into_iter().map(T::from_f64).collect();
    let gamma = params.gamma.data();
    let beta = params.beta.data();

    let mut x_hat = Vec::with_capacity(x.len());
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(c) {
        for ch in 0..c {
            let xh = (row[ch] - mean[ch]) * inv_std[ch];
            x_hat.push(xh);
            out.push(gamma[ch] * xh + beta[ch]);
        }
    }
    Ok((
        Tensor::new(input.shape(), out)?,
        NormTape {
            mode,
            x_hat,
            inv_std,
            shape: input.shape().to_vec(),
        },
    ))
}

impl<T: Real> NormTape<T> {
    pub fn backward(self, params: &BatchNormParams<T>, grad_out: &Tensor<T>) -> Result<NormGrads<T>> {
        if grad_out.shape() != self.shape.as_slice() {
            return Err(Error::Shape(format!(
                "batch_norm output gradient has shape {:?}, expected {:?}",
                grad_out.shape(),
                self.shape
            )));
        }
        let c = params.channels();
        let m = grad_out.len() / c;
        let dy = grad_out.data();
        let gamma = params.gamma.data();

        let mut d_beta = vec![T::ZERO; c];
        let mut d_gamma = vec![T::ZERO; c];
        for (dy_row, xh_row) in dy.chunks(c).zip(self.x_hat.chunks(c)) {
            for ch in 0..c {
                d_beta[ch] += dy_row[ch];
                d_gamma[ch] += dy_row[ch] * xh_row[ch];
            }
        }

        let mut dx = Vec::with_capacity(dy.len());
        match self.mode {
            Mode::Train => {
                // dx = γ·σ⁻¹/M · (M·dy − Σdy − x̂·Σ(dy·x̂))
                let scale: Vec<T> = (0..c)
                    .map(|ch| gamma[ch] * self.inv_std[ch] / T::from_f64(m as f64))
                    .collect();
                let m_t = T::from_f64(m as f64);
                for (dy_row, xh_row) in dy.chunks(c).zip(self.x_hat.chunks(c)) {
                    for ch in 0..c {
                        dx.push(scale[ch] * (m_t * dy_row[ch] - d_beta[ch] - xh_row[ch] * d_gamma[ch]));
                    }
                }
            }
            Mode::Infer => {
                for dy_row in dy.chunks(c) {
                    for ch in 0..c {
                        dx.push(dy_row[ch] * gamma[ch] * self.inv_std[ch]);
                    }
                }
            }
        }
        Ok(NormGrads {
            input: Tensor::new(&self.shape, dx)?,
            gamma: Tensor::new(&[c], d_gamma)?,
            beta: Tensor::new(&[c], d_beta)?,
        })
    }
}
