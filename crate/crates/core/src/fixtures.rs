//! Small hand-weighted models and synthetic datasets with known behavior,
//! for exercising the evaluator, service and tooling without a trained net.
//!
//! Every fixture model takes the production 224×224×3 input. Five 2×2 max
//! pools reduce it to 7×7×3 before the dense head, which keeps the weight
//! files tiny.

use std::path::Path;

use crate::error::{Error, Result};
use crate::label::EmotionLabel;
use crate::model::{LayerSpec, Model, ModelSpec, INPUT_CHANNELS, INPUT_SIDE};
use crate::preprocess::RgbImage;
use crate::tensor::Tensor;

const POOLS: usize = 5;
const POOLED_SIDE: usize = INPUT_SIDE >> POOLS;
const POOLED_WIDTH: usize = POOLED_SIDE * POOLED_SIDE * INPUT_CHANNELS;
const CLASSES: usize = EmotionLabel::COUNT;

/// The distribution returned by [`stub_happy_model`].
pub const STUB_HAPPY_DISTRIBUTION: [f32; CLASSES] = [0.002, 0.97, 0.002, 0.009, 0.002, 0.002, 0.002, 0.011];

fn pooled_spec(name: &str, head: Vec<LayerSpec>) -> ModelSpec {
    let mut layers = vec![LayerSpec::Maxpool2; POOLS];
    layers.push(LayerSpec::Flatten);
    layers.extend(head);
    layers.push(LayerSpec::Softmax);
    ModelSpec {
        name: name.into(),
        input_shape: vec![INPUT_SIDE, INPUT_SIDE, INPUT_CHANNELS],
        classes: CLASSES,
        layers,
    }
}

fn dense(name: &str, inputs: usize, outputs: usize) -> LayerSpec {
    LayerSpec::Dense {
        name: name.into(),
        inputs,
        outputs,
    }
}

/// Emits the given distribution for every input: zero weights, bias = ln p.
pub fn fixed_distribution_model(distribution: &[f32; CLASSES]) -> Result<Model> {
    if distribution.iter().any(|&p| p.is_nan() || p <= 0.0) {
        return Err(Error::InvalidArgument("distribution entries must be positive".into()));
    }
    let spec = pooled_spec("fixed-distribution", vec![dense("out", POOLED_WIDTH, CLASSES)]);
    let bias = Tensor::new(&[CLASSES], distribution.iter().map(|p| p.ln()).collect())?;
    Model::from_tensors(
        spec,
        vec![
            ("out.weight".into(), Tensor::zeros(&[POOLED_WIDTH, CLASSES])),
            ("out.bias".into(), bias),
        ],
    )
}

/// Uniform 1/8 output for every input.
pub fn uniform_model() -> Model {
    fixed_distribution_model(&[0.125; CLASSES]).expect("valid distribution")
}

/// Happy 0.97, contempt 0.011, surprise 0.009, the rest 0.002.
pub fn stub_happy_model() -> Model {
    fixed_distribution_model(&STUB_HAPPY_DISTRIBUTION).expect("valid distribution")
}

/// Red channel value that [`color_oracle_model`] associates with `label`.
pub fn class_color(label: EmotionLabel) -> [u8; 3] {
    [16 + 32 * label.index() as u8, 90, 160]
}

/// Classifies uniform images painted with [`class_color`] correctly with
/// confidence above 0.99, by scoring `-|mean red - class red|`.
pub fn color_oracle_model() -> Model {
    const SHARPNESS: f32 = 60.0;
    let spec = pooled_spec(
        "color-oracle",
        vec![
            dense("distance", POOLED_WIDTH, 2 * CLASSES),
            LayerSpec::Relu,
            dense("score", 2 * CLASSES, CLASSES),
        ],
    );
    let mean_red = 1.0 / (POOLED_SIDE * POOLED_SIDE) as f32;
    let mut w1 = Tensor::zeros(&[POOLED_WIDTH, 2 * CLASSES]);
    let mut b1 = Tensor::zeros(&[2 * CLASSES]);
    let mut w2 = Tensor::zeros(&[2 * CLASSES, CLASSES]);
    for label in EmotionLabel::ALL {
        let c = label.index();
        let v = class_color(label)[0] as f32 / 255.0;
        for pixel in 0..POOLED_SIDE * POOLED_SIDE {
            let red = pixel * INPUT_CHANNELS;
            w1.set(&[red, 2 * c], mean_red).unwrap();
            w1.set(&[red, 2 * c + 1], -mean_red).unwrap();
        }
        b1.set(&[2 * c], -v).unwrap();
        b1.set(&[2 * c + 1], v).unwrap();
        w2.set(&[2 * c, c], -SHARPNESS).unwrap();
        w2.set(&[2 * c + 1, c], -SHARPNESS).unwrap();
    }
    Model::from_tensors(
        spec,
        vec![
            ("distance.weight".into(), w1),
            ("distance.bias".into(), b1),
            ("score.weight".into(), w2),
            ("score.bias".into(), Tensor::zeros(&[CLASSES])),
        ],
    )
    .expect("fixture tensors match the spec")
}

/// A uniform PNG in the oracle color of `label`.
pub fn class_png(label: EmotionLabel, side: u32) -> Result<Vec<u8>> {
    RgbImage::filled(side, side, class_color(label))?.to_png()
}

/// Write `counts[c]` small PNGs of the class-`c` color under `root/<label>/`.
pub fn write_color_dataset(root: &Path, counts: &[usize; CLASSES]) -> Result<()> {
    for label in EmotionLabel::ALL {
        let n = counts[label.index()];
        if n == 0 {
            continue;
        }
        let dir = root.join(label.name());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let png = class_png(label, 16)?;
        for i in 0..n {
            let path = dir.join(format!("{i:05}.png"));
            std::fs::write(&path, &png).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}
