use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug)]
pub struct DenseTape<T: Real = f32> {
    input: Tensor<T>,
}

#[derive(Debug)]
pub struct DenseGrads<T: Real = f32> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

fn dims<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (xs, ws) = (input.shape(), weight.shape());
    if xs.len() != 2 {
        return Err(Error::Shape(format!("dense input must be N×Din, got {xs:?}")));
    }
    if ws.len() != 2 {
        return Err(Error::Shape(format!("dense weight must be Din×Dout, got {ws:?}")));
    }
    if xs[1] != ws[0] {
        return Err(Error::Shape(format!(
            "dense input width {} does not match weight rows {}",
            xs[1], ws[0]
        )));
    }
    if bias.shape() != [ws[1]] {
        return Err(Error::Shape(format!(
            "dense bias shape {:?} does not match output width {}",
            bias.shape(),
            ws[1]
        )));
    }
    Ok((xs[0], ws[0], ws[1]))
}

/// `input · weight + bias`.
pub fn dense<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<(Tensor<T>, DenseTape<T>)> {
    let out = dense_forward(input, weight, bias)?;
    Ok((
        out,
        DenseTape {
            input: input.clone(),
        },
    ))
}

pub fn dense_forward<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, din, dout) = dims(input, weight, bias)?;
    let mut out = Vec::with_capacity(n * dout);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    T::gemm(
        n,
        din,
        dout,
        T::ONE,
        input.data(),
        (din as isize, 1),
        weight.data(),
        (dout as isize, 1),
        T::ONE,
        &mut out,
    );
    Tensor::new(&[n, dout], out)
}

impl<T: Real> DenseTape<T> {
    pub fn backward(self, weight: &Tensor<T>, grad_out: &Tensor<T>) -> Result<DenseGrads<T>> {
        let (n, din, dout) = (self.input.shape()[0], weight.shape()[0], weight.shape()[1]);
        if grad_out.shape() != [n, dout] {
            return Err(Error::Shape(format!(
                "dense output gradient has shape {:?}, expected [{n}, {dout}]",
                grad_out.shape()
            )));
        }
        let dy = grad_out.data();

        // dW = Xᵀ · dY
        let mut dw = vec![T::ZERO; din * dout];
        T::gemm(
            din,
            n,
            dout,
            T::ONE,
            self.input.data(),
            (1, din as isize),
            dy,
            (dout as isize, 1),
            T::ZERO,
            &mut dw,
        );
        // dX = dY · Wᵀ
        let mut dx = vec![T::ZERO; n * din];
        T::gemm(
            n,
            dout,
            din,
            T::ONE,
            dy,
            (dout as isize, 1),
            weight.data(),
            (1, dout as isize),
            T::ZERO,
            &mut dx,
        );
        let mut db = vec![T::ZERO; dout];
        for row in dy.chunks(dout) {
            for (b, &d) in db.iter_mut().zip(row) {
                *b += d;
            }
        }
        Ok(DenseGrads {
            input: Tensor::new(&[n, din], dx)?,
            weight: Tensor::new(&[din, dout], dw)?,
            bias: Tensor::new(&[dout], db)?,
        })
    }
}
