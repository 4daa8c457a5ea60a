//! 2×2 max-pooling, stride 2, floor on odd extents.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug)]
pub struct PoolTape {
    input_shape: Vec<usize>,
    /// Flat input offset of the selected element, one per output element.
    argmax: Vec<usize>,
}

pub fn maxpool2<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolTape)> {
    let s = input.shape();
    if s.len() != 4 {
        return Err(Error::Shape(format!(
            "maxpool2 input must be N×H×W×C, got {s:?}"
        )));
    }
    let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
    if h < 2 || w < 2 {
        return Err(Error::Shape(format!(
            "maxpool2 needs H ≥ 2 and W ≥ 2, got H={h} W={w}"
        )));
    }
    let (ho, wo) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(n * ho * wo * c);
    let mut argmax = Vec::with_capacity(n * ho * wo * c);
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                for ch in 0..c {
                    let at = |dy: usize, dx: usize| ((b * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                    // Row-major window order; strict comparison keeps the first maximum.
                    let mut best = at(0, 0);
                    for idx in [at(0, 1), at(1, 0), at(1, 1)] {
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
    }
    Ok((
        Tensor::new(&[n, ho, wo, c], out)?,
        PoolTape {
            input_shape: s.to_vec(),
            argmax,
        },
    ))
}

impl PoolTape {
    pub fn backward<T: Real>(self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        if grad_out.len() != self.argmax.len() {
            return Err(Error::Shape(format!(
                "maxpool2 output gradient has {} elements, expected {}",
                grad_out.len(),
                self.argmax.len()
            )));
        }
        let mut dx = Tensor::zeros(&self.input_shape);
        let data = dx.data_mut();
        for (&idx, &g) in self.argmax.iter().zip(grad_out.data()) {
            data[idx] += g;
        }
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn max_of_four() {
        let x = Tensor::<f32>::new(&[1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = maxpool2(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn constant_input_halves_resolution() {
        let x = Tensor::<f32>::full(&[2, 6, 4, 3], 0.7);
        let (y, _) = maxpool2(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3, 2, 3]);
        assert!(y.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn odd_extent_drops_trailing_row_and_column() {
        // Put the global maximum in the dropped fifth row/column.
        let mut x = Tensor::<f32>::from_fn(&[1, 5, 5, 1], |i| i as f32 * 0.01);
        x.set(&[0, 4, 4, 0], 100.0).unwrap();
        let (y, _) = maxpool2(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 1]);
        assert!(y.data().iter().all(|&v| v < 1.0));
    }

    #[test]
    fn ties_route_to_first_in_window() {
        let x = Tensor::<f32>::full(&[1, 2, 2, 1], 1.0);
        let (_, tape) = maxpool2(&x).unwrap();
        let dx = tape.backward(&Tensor::<f32>::full(&[1, 1, 1, 1], 5.0)).unwrap();
        assert_eq!(dx.data(), &[5.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_tiny_inputs() {
        assert!(maxpool2(&Tensor::<f32>::zeros(&[1, 1, 4, 1])).is_err());
        assert!(maxpool2(&Tensor::<f32>::zeros(&[1, 4, 1, 1])).is_err());
    }

    proptest! {
        #[test]
        fn backward_conserves_gradient_mass(
            n in 1usize..3, h in 2usize..9, w in 2usize..9, c in 1usize..4,
            xs in prop::collection::vec(-1000i32..1000, 2 * 8 * 8 * 3),
            gs in prop::collection::vec(-1000i32..1000, 2 * 4 * 4 * 3),
        ) {
            let x = Tensor::<f32>::from_fn(&[n, h, w, c], |i| xs[i] as f32);
            let (y, tape) = maxpool2(&x).unwrap();
            prop_assert_eq!(y.shape(), &[n, h / 2, w / 2, c][..]);
            let g = Tensor::<f32>::from_fn(y.shape(), |i| gs[i] as f32);
            let dx = tape.backward(&g).unwrap();
            let routed: f32 = dx.data().iter().sum();
            let incoming: f32 = g.data().iter().sum();
            prop_assert_eq!(routed, incoming);
        }
    }
}
