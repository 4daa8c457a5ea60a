//! Concrete models assembled from a [`ModelSpec`].

pub mod ferw;
mod predict;
mod spec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ops::{self, BatchNormParams, ConvParams, InputGrad, Mode};
use crate::tensor::Tensor;

pub use predict::ClassificationResult;
pub use spec::{LayerSpec, ModelSpec, ShapeTrace, INPUT_CHANNELS, INPUT_SIDE, TABLE1_FLATTEN_WIDTH};

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Layer {
    Conv(ConvParams),
    Relu,
    MaxPool,
    BatchNorm(BatchNormParams),
    Flatten,
    Dense { weight: Tensor, bias: Tensor },
    Softmax,
}

/// A network: its manifest plus parameter tensors and batch-norm statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    layers: Vec<Layer>,
}

/// Per-layer state recorded by a training forward pass.
#[derive(Debug)]
enum LayerTape {
    Conv(ops::ConvTape),
    Relu(ops::ReluTape),
    Pool(ops::PoolTape),
    Norm(ops::NormTape),
    Flatten(Vec<usize>),
    Dense(ops::DenseTape),
    Softmax,
}

/// Tape for a whole-model training forward pass.
#[derive(Debug)]
pub struct ForwardTape {
    layers: Vec<LayerTape>,
}

/// Gradients of the trainable tensors, in [`Model::trainable`] order.
#[derive(Clone, Debug)]
pub struct Gradients(pub Vec<Tensor>);

/// Build the reference network with seeded fan-in Gaussian weights.
pub fn build_table1_model(seed: u64) -> Model {
    Model::init(ModelSpec::table1(), seed).expect("reference spec is valid")
}

impl Model {
    /// Fresh parameters: weights ~ N(0, 2/fan_in), zero biases, γ = 1, β = 0,
    /// running statistics (0, 1).
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.trace()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gaussian = |shape: &[usize], fan_in: usize| {
            let normal = Normal::new(0.0f64, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            Tensor::from_fn(shape, |_| normal.sample(&mut rng) as f32)
        };
        let layers = spec
            .layers
            .iter()
            .map(|l| match l {
                LayerSpec::Conv2d {
                    kernel_size: k,
                    in_channels,
                    out_channels,
                    ..
                } => Layer::Conv(ConvParams {
                    kernel: gaussian(&[*k, *k, *in_channels, *out_channels], k * k * in_channels),
                    bias: Tensor::zeros(&[*out_channels]),
                }),
                LayerSpec::Dense { inputs, outputs, .. } => Layer::Dense {
                    weight: gaussian(&[*inputs, *outputs], *inputs),
                    bias: Tensor::zeros(&[*outputs]),
                },
                LayerSpec::BatchNorm {
                    channels,
                    momentum,
                    epsilon,
                    ..
                } => Layer::BatchNorm(BatchNormParams {
                    momentum: *momentum,
                    epsilon: *epsilon,
                    ..BatchNormParams::identity(*channels)
                }),
                other => Self::stateless(other),
            })
            .collect();
        Ok(Self { spec, layers })
    }

    fn stateless(spec: &LayerSpec) -> Layer {
        match spec {
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::Maxpool2 => Layer::MaxPool,
            LayerSpec::Flatten => Layer::Flatten,
            LayerSpec::Softmax => Layer::Softmax,
            _ => unreachable!("layer {} carries parameters", spec.kind()),
        }
    }

    /// Assemble a model from a manifest and its tensors in manifest order,
    /// validating every name and shape.
    pub fn from_tensors(spec: ModelSpec, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        spec.trace()?;
        let expected = spec.tensor_shapes();
        if expected.len() != tensors.len() {
            return Err(Error::Shape(format!(
                "manifest declares {} tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for ((want_name, want_shape), (name, t)) in expected.iter().zip(&tensors) {
            if want_name != name {
                return Err(Error::Shape(format!(
                    "expected tensor {want_name}, found {name}"
                )));
            }
            if want_shape.as_slice() != t.shape() {
                return Err(Error::Shape(format!(
                    "tensor {name} has shape {:?}, manifest declares {want_shape:?}",
                    t.shape()
                )));
            }
        }
        let mut it = tensors.into_iter().map(|(_, t)| t);
        let mut next = || it.next().expect("count checked above");
        let layers = spec
            .layers
            .iter()
            .map(|l| match l {
                LayerSpec::Conv2d { .. } => Layer::Conv(ConvParams {
                    kernel: next(),
                    bias: next(),
                }),
                LayerSpec::Dense { .. } => Layer::Dense {
                    weight: next(),
                    bias: next(),
                },
                LayerSpec::BatchNorm { momentum, epsilon, .. } => Layer::BatchNorm(BatchNormParams {
                    gamma: next(),
                    beta: next(),
                    running_mean: next(),
                    running_var: next(),
                    momentum: *momentum,
                    epsilon: *epsilon,
                }),
                other => Self::stateless(other),
            })
            .collect::<Vec<_>>();
        for layer in &layers {
            if let Layer::BatchNorm(p) = layer {
                p.validate()?;
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// All stored tensors with their manifest names, in file order.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let names = self.spec.tensor_shapes().into_iter().map(|(n, _)| n);
        let values = self.layers.iter().flat_map(|l| -> Vec<&Tensor> {
            match l {
                Layer::Conv(p) => vec![&p.kernel, &p.bias],
                Layer::Dense { weight, bias } => vec![weight, bias],
                Layer::BatchNorm(p) => vec![&p.gamma, &p.beta, &p.running_mean, &p.running_var],
                _ => Vec::new(),
            }
        });
        names.zip(values).collect()
    }

    /// Optimizer-visible tensors: conv kernel/bias, batch-norm γ/β, dense
    /// weight/bias, in layer order.
    pub fn trainable(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| -> Vec<&Tensor> {
                match l {
                    Layer::Conv(p) => vec![&p.kernel, &p.bias],
                    Layer::Dense { weight, bias } => vec![weight, bias],
                    Layer::BatchNorm(p) => vec![&p.gamma, &p.beta],
                    _ => Vec::new(),
                }
            })
            .collect()
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| -> Vec<&mut Tensor> {
                match l {
                    Layer::Conv(p) => vec![&mut p.kernel, &mut p.bias],
                    Layer::Dense { weight, bias } => vec![weight, bias],
                    Layer::BatchNorm(p) => vec![&mut p.gamma, &mut p.beta],
                    _ => Vec::new(),
                }
            })
            .collect()
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let s = batch.shape();
        if s.len() != self.spec.input_shape.len() + 1 || s[1..] != self.spec.input_shape[..] {
            return Err(Error::Shape(format!(
                "model expects input N×{}, got {s:?}",
                self.spec
                    .input_shape
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join("×")
            )));
        }
        Ok(())
    }

    /// Inference forward pass: batch-norm uses running statistics and nothing
    /// is mutated. Returns `N × classes` probabilities.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        let mut x = batch.clone();
        for layer in &self.layers {
            x = match layer {
                Layer::Conv(p) => ops::conv2d_forward(&x, p)?,
                Layer::Relu => ops::relu(&x).0,
                Layer::MaxPool => ops::maxpool2(&x)?.0,
                Layer::BatchNorm(p) => ops::batch_norm(&x, &mut p.clone(), Mode::Infer)?.0,
                Layer::Flatten => flatten(x)?,
                Layer::Dense { weight, bias } => ops::dense_forward(&x, weight, bias)?,
                Layer::Softmax => ops::softmax(&x)?.0,
            };
        }
        Ok(x)
    }

    /// Forward pass in the given mode. Train mode updates batch-norm running
    /// statistics and records a tape for [`ForwardTape::backward`].
    pub fn forward_mode(&mut self, batch: &Tensor, mode: Mode) -> Result<(Tensor, ForwardTape)> {
        self.check_batch(batch)?;
        let mut x = batch.clone();
        let mut tapes = Vec::with_capacity(self.layers.len());
        for layer in &mut self.layers {
            let (y, tape) = match layer {
                Layer::Conv(p) => {
                    let (y, t) = ops::conv2d(&x, p)?;
                    (y, LayerTape::Conv(t))
                }
                Layer::Relu => {
                    let (y, t) = ops::relu(&x);
                    (y, LayerTape::Relu(t))
                }
                Layer::MaxPool => {
                    let (y, t) = ops::maxpool2(&x)?;
                    (y, LayerTape::Pool(t))
                }
                Layer::BatchNorm(p) => {
                    let (y, t) = ops::batch_norm(&x, p, mode)?;
                    (y, LayerTape::Norm(t))
                }
                Layer::Flatten => {
                    let shape = x.shape().to_vec();
                    (flatten(x)?, LayerTape::Flatten(shape))
                }
                Layer::Dense { weight, bias } => {
                    let (y, t) = ops::dense(&x, weight, bias)?;
                    (y, LayerTape::Dense(t))
                }
                Layer::Softmax => (ops::softmax(&x)?.0, LayerTape::Softmax),
            };
            tapes.push(tape);
            x = y;
        }
        Ok((x, ForwardTape { layers: tapes }))
    }

    /// Training-mode forward pass.
    pub fn forward_train(&mut self, batch: &Tensor) -> Result<(Tensor, ForwardTape)> {
        self.forward_mode(batch, Mode::Train)
    }

    /// Per-sample shapes observed by running a single input through the
    /// model in inference mode.
    pub fn trace_shapes(&self, sample: &Tensor) -> Result<ShapeTrace> {
        let batch = sample.clone().reshape(&prepend(1, sample.shape()))?;
        self.check_batch(&batch)?;
        let mut x = batch;
        let mut layers = Vec::with_capacity(self.layers.len());
        for (layer, spec) in self.layers.iter().zip(&self.spec.layers) {
            x = match layer {
                Layer::Conv(p) => ops::conv2d_forward(&x, p)?,
                Layer::Relu => ops::relu(&x).0,
                Layer::MaxPool => ops::maxpool2(&x)?.0,
                Layer::BatchNorm(p) => ops::batch_norm(&x, &mut p.clone(), Mode::Infer)?.0,
                Layer::Flatten => flatten(x)?,
                Layer::Dense { weight, bias } => ops::dense_forward(&x, weight, bias)?,
                Layer::Softmax => ops::softmax(&x)?.0,
            };
            layers.push((spec.kind(), x.shape()[1..].to_vec()));
        }
        Ok(ShapeTrace {
            input: sample.shape().to_vec(),
            layers,
        })
    }
}

impl ForwardTape {
    /// Backpropagate from the gradient with respect to the final softmax's
    /// input (the logits), as produced by the cross-entropy tape.
    pub fn backward(self, model: &Model, grad_logits: &Tensor) -> Result<Gradients> {
        let mut grads: Vec<Vec<Tensor>> = Vec::with_capacity(model.layers.len());
        let mut dy = grad_logits.clone();
        let n_layers = self.layers.len();
        for (i, (tape, layer)) in self.layers.into_iter().zip(&model.layers).enumerate().rev() {
            let (dx, mut params) = match (tape, layer) {
                (LayerTape::Softmax, Layer::Softmax) => {
                    if i + 1 != n_layers {
                        return Err(Error::Shape("softmax must be the final layer".into()));
                    }
                    (dy, Vec::new())
                }
                (LayerTape::Dense(t), Layer::Dense { weight, .. }) => {
                    let g = t.backward(weight, &dy)?;
                    (g.input, vec![g.weight, g.bias])
                }
                (LayerTape::Flatten(shape), Layer::Flatten) => (dy.reshape(&shape)?, Vec::new()),
                (LayerTape::Norm(t), Layer::BatchNorm(p)) => {
                    let g = t.backward(p, &dy)?;
                    (g.input, vec![g.gamma, g.beta])
                }
                (LayerTape::Pool(t), Layer::MaxPool) => (t.backward(&dy)?, Vec::new()),
                (LayerTape::Relu(t), Layer::Relu) => (t.backward(&dy)?, Vec::new()),
                (LayerTape::Conv(t), Layer::Conv(p)) => {
                    let wanted = if i == 0 { InputGrad::Skip } else { InputGrad::Compute };
                    let g = t.backward(p, &dy, wanted)?;
                    let dx = g.input.unwrap_or_else(|| Tensor::zeros(&[1]));
                    (dx, vec![g.kernel, g.bias])
                }
                _ => return Err(Error::Shape(format!("tape does not match layer {i}"))),
            };
            params.reverse();
            grads.push(params);
            dy = dx;
        }
        let mut flat: Vec<Tensor> = grads.into_iter().flatten().collect();
        flat.reverse();
        Ok(Gradients(flat))
    }
}

fn prepend(n: usize, shape: &[usize]) -> Vec<usize> {
    let mut s = vec![n];
    s.extend_from_slice(shape);
    s
}

fn flatten(x: Tensor) -> Result<Tensor> {
    let n = x.shape()[0];
    let width = x.len() / n;
    x.reshape(&[n, width])
}
