//! Central finite-difference verification of backward passes, in f64.
//!
//! The op under test is reduced to a scalar `L = Σ r ⊙ f(x)` with a fixed
//! random projection `r`; analytic gradients come from feeding `r` to the
//! backward pass and are compared elementwise against
//! `(L(x + h·eᵢ) − L(x − h·eᵢ)) / 2h`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-4;

/// Largest input accepted, in scalars.
pub const MAX_SCALARS: usize = 10_000;

/// Denominator floor of the relative error, so gradients that are zero up to
/// rounding are compared absolutely.
pub const MAGNITUDE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct ParamError {
    pub name: String,
    pub max_relative_error: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamError>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.max_relative_error < self.tolerance)
    }

    pub fn max_relative_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_relative_error)
            .fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamError> {
        self.params
            .iter()
            .filter(|p| p.max_relative_error >= self.tolerance)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

/// Check `backward` against finite differences of `forward`.
///
/// `forward` maps the named inputs to an output tensor; `backward` receives
/// the inputs and the upstream gradient of that output and must return one
/// gradient per input, in order.
pub fn grad_check<F, B>(
    inputs: &[(&str, Tensor<f64>)],
    forward: F,
    backward: B,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
    B: Fn(&[Tensor<f64>], &Tensor<f64>) -> Result<Vec<Tensor<f64>>>,
{
    let total: usize = inputs.iter().map(|(_, t)| t.len()).sum();
    if total > MAX_SCALARS {
        return Err(Error::InvalidArgument(format!(
            "grad_check limited to {MAX_SCALARS} scalars, got {total}"
        )));
    }
    let mut values: Vec<Tensor<f64>> = inputs.iter().map(|(_, t)| t.clone()).collect();

    let out = forward(&values)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let projection = Tensor::from_fn(out.shape(), |_| rng.random_range(-1.0..1.0));
    let objective = |vals: &[Tensor<f64>]| -> Result<f64> {
        let y = forward(vals)?;
        Ok(y.data().iter().zip(projection.data()).map(|(a, b)| a * b).sum())
    };

    let analytic = backward(&values, &projection)?;
    if analytic.len() != inputs.len() {
        return Err(Error::InvalidArgument(format!(
            "backward returned {} gradients for {} inputs",
            analytic.len(),
            inputs.len()
        )));
    }

    let mut params = Vec::with_capacity(inputs.len());
    for (slot, ((name, _), grad)) in inputs.iter().zip(&analytic).enumerate() {
        if grad.shape() != values[slot].shape() {
            return Err(Error::Shape(format!(
                "gradient for {name} has shape {:?}, input has {:?}",
                grad.shape(),
                values[slot].shape()
            )));
        }
        let mut worst = ParamError {
            name: (*name).to_string(),
            max_relative_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..values[slot].len() {
            let original = values[slot].data()[i];
            values[slot].data_mut()[i] = original + STEP;
            let plus = objective(&values)?;
            values[slot].data_mut()[i] = original - STEP;
            let minus = objective(&values)?;
            values[slot].data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * STEP);
            let a = grad.data()[i];
            let err = relative_error(a, numeric);
            if err > worst.max_relative_error || i == 0 {
                worst = ParamError {
                    name: worst.name,
                    max_relative_error: err,
                    worst_index: i,
                    analytic: a,
                    numeric,
                };
            }
        }
        params.push(worst);
    }
    Ok(GradCheckReport { tolerance, params })
}
