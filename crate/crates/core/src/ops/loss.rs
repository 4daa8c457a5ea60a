use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Probability floor applied before the logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// Tolerance on row sums accepted as a probability distribution.
const ROW_SUM_TOLERANCE: f64 = 1e-4;

#[derive(Debug)]
pub struct CrossEntropyTape<T: Real = f32> {
    probs: Tensor<T>,
    labels: Vec<usize>,
    weights: Vec<T>,
}

/// Mean class-weighted negative log-likelihood:
/// `(1/N) Σᵢ w[yᵢ] · −ln max(p[i, yᵢ], 1e-12)`.
pub fn weighted_cross_entropy<T: Real>(
    probs: &Tensor<T>,
    labels: &[usize],
    class_weights: &[T],
) -> Result<(T, CrossEntropyTape<T>)> {
    let s = probs.shape();
    if s.len() != 2 {
        return Err(Error::Shape(format!("cross-entropy expects N×K probabilities, got {s:?}")));
    }
    let (n, k) = (s[0], s[1]);
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for {n} probability rows",
            labels.len()
        )));
    }
    if class_weights.len() != k {
        return Err(Error::Shape(format!(
            "{} class weights for {k} classes",
            class_weights.len()
        )));
    }
    for (i, row) in probs.data().chunks(k).enumerate() {
        let total: f64 = row.iter().map(|p| p.to_f64()).sum();
        if (total - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "probability row {i} sums to {total}"
            )));
        }
    }
    if let Some(&label) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }

    let floor = T::from_f64(LOG_FLOOR);
    let mut total = T::ZERO;
    for (row, &y) in probs.data().chunks(k).zip(labels) {
        let p = if row[y] > floor { row[y] } else { floor };
        total += class_weights[y] * -p.ln();
    }
    let loss = total / T::from_f64(n as f64);
    Ok((
        loss,
        CrossEntropyTape {
            probs: probs.clone(),
            labels: labels.to_vec(),
            weights: class_weights.to_vec(),
        },
    ))
}

/// Unweighted mean negative log-likelihood.
pub fn cross_entropy<T: Real>(probs: &Tensor<T>, labels: &[usize]) -> Result<T> {
    let k = *probs.shape().last().unwrap_or(&1);
    weighted_cross_entropy(probs, labels, &vec![T::ONE; k]).map(|(loss, _)| loss)
}

impl<T: Real> CrossEntropyTape<T> {
    /// Gradient with respect to the logits that produced `probs` through
    /// softmax: `(p − onehot(y)) · w[y] / N` per row.
    pub fn backward(self) -> Tensor<T> {
        let (n, k) = (self.probs.shape()[0], self.probs.shape()[1]);
        let inv_n = T::ONE / T::from_f64(n as f64);
        let mut grad = self.probs;
        for (row, &y) in grad.data_mut().chunks_mut(k).zip(&self.labels) {
            let scale = self.weights[y] * inv_n;
            row[y] -= T::ONE;
            for g in row.iter_mut() {
                *g *= scale;
            }
        }
        grad
    }
}
