//! Valid (unpadded), stride-1 2-D cross-correlation over NHWC tensors.
//!
//! Each sample is lowered to an im2col matrix of shape `(Ho·Wo) × (K·K·Cin)`.
//! Because the kernel is stored `K×K×Cin×Cout` row-major, it is already the
//! `(K·K·Cin) × Cout` right-hand matrix, and the product is the NHWC output.

use crate::error::{Error, Result};
use crate::par;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T: Real = f32> {
    /// `K × K × Cin × Cout`
    pub kernel: Tensor<T>,
    /// `Cout`
    pub bias: Tensor<T>,
}

impl<T: Real> ConvParams<T> {
    pub fn new(kernel: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let p = Self { kernel, bias };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ks = self.kernel.shape();
        if ks.len() != 4 {
            return Err(Error::Shape(format!(
                "conv kernel must be rank 4 (K×K×Cin×Cout), got {ks:?}"
            )));
        }
        if ks[0] != ks[1] {
            return Err(Error::Shape(format!(
                "conv kernel height {} differs from width {}",
                ks[0], ks[1]
            )));
        }
        if self.bias.shape() != [ks[3]] {
            return Err(Error::Shape(format!(
                "conv bias shape {:?} does not match output channels {}",
                self.bias.shape(),
                ks[3]
            )));
        }
        Ok(())
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[3]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputGrad {
    Compute,
    /// The input is data, not an activation; skip the col2im pass.
    Skip,
}

#[derive(Debug)]
pub struct ConvTape<T: Real = f32> {
    input: Tensor<T>,
}

#[derive(Debug)]
pub struct ConvGrads<T: Real = f32> {
    pub input: Option<Tensor<T>>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Copy)]
struct Geometry {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    k: usize,
    cout: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.k * self.k * self.cin
    }
    fn pixels_out(&self) -> usize {
        self.ho * self.wo
    }
}

fn geometry<T: Real>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<Geometry> {
    params.validate()?;
    let s = input.shape();
    if s.len() != 4 {
        return Err(Error::Shape(format!(
            "conv2d input must be N×H×W×C, got {s:?}"
        )));
    }
    let (k, cin, cout) = (
        params.kernel_size(),
        params.in_channels(),
        params.out_channels(),
    );
    if s[3] != cin {
        return Err(Error::Shape(format!(
            "conv2d input channels {} do not match kernel input channels {cin}",
            s[3]
        )));
    }
    if s[1] < k {
        return Err(Error::Shape(format!(
            "conv2d input height {} is smaller than kernel size {k}",
            s[1]
        )));
    }
    if s[2] < k {
        return Err(Error::Shape(format!(
            "conv2d input width {} is smaller than kernel size {k}",
            s[2]
        )));
    }
    Ok(Geometry {
        n: s[0],
        h: s[1],
        w: s[2],
        cin,
        k,
        cout,
        ho: s[1] - k + 1,
        wo: s[2] - k + 1,
    })
}

/// Unroll one sample into `cols` (`Ho·Wo × K·K·Cin`).
fn im2col<T: Real>(g: &Geometry, sample: &[T], cols: &mut [T]) {
    let span = g.k * g.cin;
    let patch = g.patch();
    for oy in 0..g.ho {
        for ox in 0..g.wo {
            let row = &mut cols[(oy * g.wo + ox) * patch..][..patch];
            for ky in 0..g.k {
                let src = ((oy + ky) * g.w + ox) * g.cin;
                row[ky * span..(ky + 1) * span].copy_from_slice(&sample[src..src + span]);
            }
        }
    }
}

/// Scatter-add `cols` back onto one sample's input gradient.
fn col2im<T: Real>(g: &Geometry, cols: &[T], sample: &mut [T]) {
    let span = g.k * g.cin;
    let patch = g.patch();
    for oy in 0..g.ho {
        for ox in 0..g.wo {
            let row = &cols[(oy * g.wo + ox) * patch..][..patch];
            for ky in 0..g.k {
                let dst = ((oy + ky) * g.w + ox) * g.cin;
                for (d, &s) in sample[dst..dst + span]
                    .iter_mut()
                    .zip(&row[ky * span..(ky + 1) * span])
                {
                    *d += s;
                }
            }
        }
    }
}

pub fn conv2d<T: Real>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<(Tensor<T>, ConvTape<T>)> {
    let out = conv2d_forward(input, params)?;
    Ok((
        out,
        ConvTape {
            input: input.clone(),
        },
    ))
}

/// Forward pass without recording a tape.
pub fn conv2d_forward<T: Real>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<Tensor<T>> {
    let g = geometry(input, params)?;
    let in_stride = g.h * g.w * g.cin;
    let out_stride = g.pixels_out() * g.cout;
    let mut out = vec![T::ZERO; g.n * out_stride];
    let kernel = params.kernel.data();
    let bias = params.bias.data();
    let x = input.data();

    par::for_each_chunk(&mut out, out_stride, |i, dst| {
        let mut cols = vec![T::ZERO; g.pixels_out() * g.patch()];
        im2col(&g, &x[i * in_stride..(i + 1) * in_stride], &mut cols);
        for row in dst.chunks_mut(g.cout) {
            row.copy_from_slice(bias);
        }
        T::gemm(
            g.pixels_out(),
            g.patch(),
            g.cout,
            T::ONE,
            &cols,
            (g.patch() as isize, 1),
            kernel,
            (g.cout as isize, 1),
            T::ONE,
            dst,
        );
    });
    Tensor::new(&[g.n, g.ho, g.wo, g.cout], out)
}

impl<T: Real> ConvTape<T> {
    pub fn backward(
        self,
        params: &ConvParams<T>,
        grad_out: &Tensor<T>,
        input_grad: InputGrad,
    ) -> Result<ConvGrads<T>> {
        let g = geometry(&self.input, params)?;
        let expected = [g.n, g.ho, g.wo, g.cout];
        if grad_out.shape() != expected {
            return Err(Error::Shape(format!(
                "conv2d output gradient has shape {:?}, expected {expected:?}",
                grad_out.shape()
            )));
        }
        let in_stride = g.h * g.w * g.cin;
        let out_stride = g.pixels_out() * g.cout;
        let x = self.input.data();
        let dy = grad_out.data();
        let kernel = params.kernel.data();

        let per_sample = par::map_indexed(g.n, |i| {
            let dy_s = &dy[i * out_stride..(i + 1) * out_stride];
            let mut cols = vec![T::ZERO; g.pixels_out() * g.patch()];
            im2col(&g, &x[i * in_stride..(i + 1) * in_stride], &mut cols);

            // dK = colsᵀ · dY
            let mut d_kernel = vec![T::ZERO; g.patch() * g.cout];
            T::gemm(
                g.patch(),
                g.pixels_out(),
                g.cout,
                T::ONE,
                &cols,
                (1, g.patch() as isize),
                dy_s,
                (g.cout as isize, 1),
                T::ZERO,
                &mut d_kernel,
            );

            let mut d_bias = vec![T::ZERO; g.cout];
            for row in dy_s.chunks(g.cout) {
                for (b, &d) in d_bias.iter_mut().zip(row) {
                    *b += d;
                }
            }

            let d_input = (input_grad == InputGrad::Compute).then(|| {
                // dCols = dY · Kᵀ, reusing the cols buffer.
                T::gemm(
                    g.pixels_out(),
                    g.cout,
                    g.patch(),
                    T::ONE,
                    dy_s,
                    (g.cout as isize, 1),
                    kernel,
                    (1, g.cout as isize),
                    T::ZERO,
                    &mut cols,
                );
                let mut d_sample = vec![T::ZERO; in_stride];
                col2im(&g, &cols, &mut d_sample);
                d_sample
            });
            (d_kernel, d_bias, d_input)
        });

        let mut d_kernel = vec![T::ZERO; g.patch() * g.cout];
        let mut d_bias = vec![T::ZERO; g.cout];
        let mut d_input = (input_grad == InputGrad::Compute).then(|| Vec::with_capacity(g.n * in_stride));
        for (dk, db, dx) in per_sample {
            for (a, b) in d_kernel.iter_mut().zip(dk) {
                *a += b;
            }
            for (a, b) in d_bias.iter_mut().zip(db) {
                *a += b;
            }
            if let (Some(acc), Some(dx)) = (d_input.as_mut(), dx) {
                acc.extend(dx);
            }
        }

        Ok(ConvGrads {
            input: d_input
                .map(|d| Tensor::new(self.input.shape(), d))
                .transpose()?,
            kernel: Tensor::new(params.kernel.shape(), d_kernel)?,
            bias: Tensor::new(&[g.cout], d_bias)?,
        })
    }
}
