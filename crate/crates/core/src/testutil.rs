//! Helpers shared by unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ops::ConvParams;
use crate::real::Real;
use crate::tensor::Tensor;

/// Uniform values in [-1, 1).
pub fn random_tensor<T: Real>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| T::from_f64(rng.random_range(-1.0..1.0)))
}

/// Direct six-loop valid cross-correlation, accumulated in f64.
pub fn naive_conv2d(input: &Tensor<f32>, params: &ConvParams<f32>) -> Tensor<f32> {
    let (n, h, w, cin) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    let (k, cout) = (params.kernel.shape()[0], params.kernel.shape()[3]);
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut out = Tensor::zeros(&[n, ho, wo, cout]);
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                for co in 0..cout {
                    let mut acc = params.bias.data()[co] as f64;
                    for ky in 0..k {
                        for kx in 0..k {
                            for ci in 0..cin {
                                let x = input.get(&[b, oy + ky, ox + kx, ci]).unwrap();
                                let wgt = params.kernel.get(&[ky, kx, ci, co]).unwrap();
                                acc += x as f64 * wgt as f64;
                            }
                        }
                    }
                    out.set(&[b, oy, ox, co], acc as f32).unwrap();
                }
            }
        }
    }
    out
}
