use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug)]
pub struct ReluTape {
    active: Vec<bool>,
    shape: Vec<usize>,
}

/// Elementwise `max(x, 0)`. The gradient at exactly zero is zero.
pub fn relu<T: Real>(input: &Tensor<T>) -> (Tensor<T>, ReluTape) {
    let active: Vec<bool> = input.data().iter().map(|&x| x > T::ZERO).collect();
    let out = input.map(|x| if x > T::ZERO { x } else { T::ZERO });
    (
        out,
        ReluTape {
            active,
            shape: input.shape().to_vec(),
        },
    )
}

impl ReluTape {
    pub fn backward<T: Real>(self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        if grad_out.shape() != self.shape.as_slice() {
            return Err(Error::Shape(format!(
                "relu output gradient has shape {:?}, expected {:?}",
                grad_out.shape(),
                self.shape
            )));
        }
        let data = grad_out
            .data()
            .iter()
            .zip(&self.active)
            .map(|(&g, &on)| if on { g } else { T::ZERO })
            .collect();
        Tensor::new(&self.shape, data)
    }
}

#[derive(Debug)]
pub struct SoftmaxTape<T: Real = f32> {
    probs: Tensor<T>,
}

/// Row-wise softmax of an `N × K` logit matrix, shifted by the row maximum.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Result<(Tensor<T>, SoftmaxTape<T>)> {
    let s = logits.shape();
    if s.len() != 2 {
        return Err(Error::Shape(format!("softmax input must be N×K, got {s:?}")));
    }
    if let Some(pos) = logits.data().iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!(
            "softmax logit at row {} column {} is {}",
            pos / s[1],
            pos % s[1],
            logits.data()[pos]
        )));
    }
    let k = s[1];
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks(k) {
        let max = row.iter().copied().fold(row[0], |a, b| if b > a { b } else { a });
        let start = out.len();
        let mut total = T::ZERO;
        for &x in row {
            let e = (x - max).exp();
            total += e;
            out.push(e);
        }
        for p in &mut out[start..] {
            *p = *p / total;
        }
    }
    let probs = Tensor::new(s, out)?;
    Ok((
        probs.clone(),
        SoftmaxTape { probs },
    ))
}

impl<T: Real> SoftmaxTape<T> {
    /// `dx = p ⊙ (dy − Σ dy·p)` per row.
    pub fn backward(self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        if grad_out.shape() != self.probs.shape() {
            return Err(Error::Shape(format!(
                "softmax output gradient has shape {:?}, expected {:?}",
                grad_out.shape(),
                self.probs.shape()
            )));
        }
        let k = self.probs.shape()[1];
        let mut dx = Vec::with_capacity(self.probs.len());
        for (p, g) in self.probs.data().chunks(k).zip(grad_out.data().chunks(k)) {
            let dot: T = p.iter().zip(g).map(|(&a, &b)| a * b).sum();
            dx.extend(p.iter().zip(g).map(|(&a, &b)| a * (b - dot)));
        }
        Tensor::new(self.probs.shape(), dx)
    }
}
