//! Layer manifests and static shape propagation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::EmotionLabel;
use crate::ops::{DEFAULT_EPSILON, DEFAULT_MOMENTUM};

/// Side length of the square RGB network input.
pub const INPUT_SIDE: usize = 224;
pub const INPUT_CHANNELS: usize = 3;

/// Width of the flattened feature vector in the reference architecture:
/// 224 →conv9 216 →pool 108 →conv7 102 →pool 51 →conv5 47 →pool 23
/// →conv3 21 →pool 10 →conv3 8 →pool 4, and 4·4·128 = 2048.
pub const TABLE1_FLATTEN_WIDTH: usize = 2048;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        name: String,
        kernel_size: usize,
        in_channels: usize,
        out_channels: usize,
    },
    Relu,
    Maxpool2,
    BatchNorm {
        name: String,
        channels: usize,
        momentum: f64,
        epsilon: f64,
    },
    Flatten,
    Dense {
        name: String,
        inputs: usize,
        outputs: usize,
    },
    Softmax,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Relu => "relu",
            LayerSpec::Maxpool2 => "maxpool2",
            LayerSpec::BatchNorm { .. } => "batch_norm",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Softmax => "softmax",
        }
    }

    /// Named tensors owned by this layer, in file order.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        match self {
            LayerSpec::Conv2d {
                name,
                kernel_size: k,
                in_channels,
                out_channels,
            } => vec![
                (format!("{name}.kernel"), vec![*k, *k, *in_channels, *out_channels]),
                (format!("{name}.bias"), vec![*out_channels]),
            ],
            LayerSpec::BatchNorm { name, channels, .. } => ["gamma", "beta", "running_mean", "running_var"]
                .iter()
                .map(|t| (format!("{name}.{t}"), vec![*channels]))
                .collect(),
            LayerSpec::Dense {
                name,
                inputs,
                outputs,
            } => vec![
                (format!("{name}.weight"), vec![*inputs, *outputs]),
                (format!("{name}.bias"), vec![*outputs]),
            ],
            LayerSpec::Relu | LayerSpec::Maxpool2 | LayerSpec::Flatten | LayerSpec::Softmax => Vec::new(),
        }
    }

    /// Number of tensors updated by the optimizer (running statistics excluded).
    pub fn trainable_count(&self) -> usize {
        match self {
            LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. } | LayerSpec::BatchNorm { .. } => 2,
            _ => 0,
        }
    }

    /// Output shape (per sample) for a given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let fail = |msg: String| Err(Error::Shape(format!("{} layer: {msg}", self.kind())));
        match self {
            LayerSpec::Conv2d {
                kernel_size: k,
                in_channels,
                out_channels,
                ..
            } => {
                let &[h, w, c] = input else {
                    return fail(format!("expects H×W×C input, got {input:?}"));
                };
                if c != *in_channels {
                    return fail(format!("input has {c} channels, layer expects {in_channels}"));
                }
                if *k == 0 || h < *k || w < *k {
                    return fail(format!("{h}×{w} input is smaller than {k}×{k} kernel"));
                }
                Ok(vec![h - k + 1, w - k + 1, *out_channels])
            }
            LayerSpec::Maxpool2 => {
                let &[h, w, c] = input else {
                    return fail(format!("expects H×W×C input, got {input:?}"));
                };
                if h < 2 || w < 2 {
                    return fail(format!("{h}×{w} input is smaller than the 2×2 window"));
                }
                Ok(vec![h / 2, w / 2, c])
            }
            LayerSpec::BatchNorm { channels, momentum, epsilon, .. } => {
                if input.last() != Some(channels) {
                    return fail(format!("input {input:?} does not end in {channels} channels"));
                }
                if !(0.0..1.0).contains(momentum) || *momentum == 0.0 || epsilon.is_nan() || *epsilon <= 0.0 {
                    return fail(format!("momentum {momentum} / epsilon {epsilon} out of range"));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dense { inputs, outputs, .. } => {
                if input != [*inputs] {
                    return fail(format!("expects a flat vector of {inputs}, got {input:?}"));
                }
                Ok(vec![*outputs])
            }
            LayerSpec::Softmax => {
                if input.len() != 1 {
                    return fail(format!("expects a flat vector, got {input:?}"));
                }
                Ok(input.to_vec())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    /// Per-sample input shape, H×W×C.
    pub input_shape: Vec<usize>,
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

/// Shapes observed while propagating a single sample through a spec.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeTrace {
    pub input: Vec<usize>,
    /// `(layer kind, output shape)` per layer.
    pub layers: Vec<(&'static str, Vec<usize>)>,
}

impl ShapeTrace {
    /// Input width of the first flatten layer, if any.
    pub fn flatten_width(&self) -> Option<usize> {
        self.layers
            .iter()
            .find(|(kind, _)| *kind == "flatten")
            .map(|(_, shape)| shape[0])
    }
}

impl ModelSpec {
    /// The five-block reference network: each block is
    /// conv → ReLU → 2×2 max-pool → batch-norm with kernels 9, 7, 5, 3, 3 and
    /// widths 16, 32, 64, 128, 128; then flatten (2048), two ReLU dense layers
    /// of 1024 and an 8-way softmax.
    pub fn table1() -> Self {
        let blocks = [(9, 16), (7, 32), (5, 64), (3, 128), (3, 128)];
        let mut layers = Vec::new();
        let mut channels = INPUT_CHANNELS;
        for (i, &(k, out)) in blocks.iter().enumerate() {
            layers.push(LayerSpec::Conv2d {
                name: format!("conv{}", i + 1),
                kernel_size: k,
                in_channels: channels,
                out_channels: out,
            });
            layers.push(LayerSpec::Relu);
            layers.push(LayerSpec::Maxpool2);
            layers.push(LayerSpec::BatchNorm {
                name: format!("bn{}", i + 1),
                channels: out,
                momentum: DEFAULT_MOMENTUM,
                epsilon: DEFAULT_EPSILON,
            });
            channels = out;
        }
        layers.push(LayerSpec::Flatten);
        let head = [(TABLE1_FLATTEN_WIDTH, 1024), (1024, 1024), (1024, EmotionLabel::COUNT)];
        for (i, &(inputs, outputs)) in head.iter().enumerate() {
            layers.push(LayerSpec::Dense {
                name: format!("dense{}", i + 1),
                inputs,
                outputs,
            });
            layers.push(if i + 1 < head.len() {
                LayerSpec::Relu
            } else {
                LayerSpec::Softmax
            });
        }
        Self {
            name: "table1".into(),
            input_shape: vec![INPUT_SIDE, INPUT_SIDE, INPUT_CHANNELS],
            classes: EmotionLabel::COUNT,
            layers,
        }
    }

    /// Propagate the input shape through every layer, checking that adjacent
    /// layers compose and that the network ends in a softmax over `classes`.
    pub fn trace(&self) -> Result<ShapeTrace> {
        if self.input_shape.is_empty() || self.input_shape.len() > 3 || self.input_shape.contains(&0) {
            return Err(Error::Shape(format!(
                "model input shape {:?} must have 1 to 3 positive extents",
                self.input_shape
            )));
        }
        if self.classes == 0 {
            return Err(Error::Shape("model must have at least one class".into()));
        }
        let mut shape = self.input_shape.clone();
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut names = std::collections::HashSet::new();
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, _) in layer.tensor_shapes() {
                if !names.insert(name.clone()) {
                    return Err(Error::Shape(format!("duplicate tensor name {name}")));
                }
            }
            if matches!(layer, LayerSpec::Softmax) && i + 1 != self.layers.len() {
                return Err(Error::Shape(format!("softmax at layer {i} must be the final layer")));
            }
            shape = layer
                .output_shape(&shape)
                .map_err(|e| Error::Shape(format!("layer {i}: {e}")))?;
            layers.push((layer.kind(), shape.clone()));
        }
        match self.layers.last() {
            Some(LayerSpec::Softmax) if shape == [self.classes] => {}
            _ => {
                return Err(Error::Shape(format!(
                    "model must end in a softmax over {} classes, final shape is {shape:?}",
                    self.classes
                )))
            }
        }
        Ok(ShapeTrace {
            input: self.input_shape.clone(),
            layers,
        })
    }

    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.layers.iter().flat_map(LayerSpec::tensor_shapes).collect()
    }

    /// Scalar count over all stored tensors, running statistics included.
    pub fn parameter_count(&self) -> usize {
        self.tensor_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    pub fn trainable_parameter_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| {
                let n = l.trainable_count();
                l.tensor_shapes().into_iter().take(n)
            })
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}
