use serde::Serialize;

use crate::error::{Error, Result};
use crate::label::EmotionLabel;
use crate::model::Model;
use crate::tensor::Tensor;

/// Labels ranked by confidence plus the full distribution.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassificationResult {
    /// Descending confidence; ties resolved by ascending label index.
    pub ranked: Vec<(EmotionLabel, f32)>,
    pub distribution: [f32; EmotionLabel::COUNT],
}

impl ClassificationResult {
    pub const DEFAULT_K: usize = 3;

    pub fn from_distribution(distribution: &[f32], k: usize) -> Result<Self> {
        if distribution.len() != EmotionLabel::COUNT {
            return Err(Error::Shape(format!(
                "expected {} class probabilities, got {}",
                EmotionLabel::COUNT,
                distribution.len()
            )));
        }
        if !(1..=EmotionLabel::COUNT).contains(&k) {
            return Err(Error::InvalidArgument(format!(
                "k must be in 1..={}, got {k}",
                EmotionLabel::COUNT
            )));
        }
        let mut order: Vec<usize> = (0..EmotionLabel::COUNT).collect();
        // Stable sort keeps ascending index among equal confidences.
        order.sort_by(|&a, &b| distribution[b].total_cmp(&distribution[a]));
        let ranked = order
            .into_iter()
            .take(k)
            .map(|i| (EmotionLabel::ALL[i], distribution[i]))
            .collect();
        let mut dist = [0.0; EmotionLabel::COUNT];
        dist.copy_from_slice(distribution);
        Ok(Self {
            ranked,
            distribution: dist,
        })
    }

    pub fn top(&self) -> (EmotionLabel, f32) {
        self.ranked[0]
    }

    pub fn contains(&self, label: EmotionLabel) -> bool {
        self.ranked.iter().any(|&(l, _)| l == label)
    }
}

impl Model {
    fn check_emotion_head(&self) -> Result<()> {
        if self.spec().classes != EmotionLabel::COUNT {
            return Err(Error::Shape(format!(
                "model has {} output classes, emotion prediction needs {}",
                self.spec().classes,
                EmotionLabel::COUNT
            )));
        }
        Ok(())
    }

    /// Inference on one image tensor, returning the `k` most confident labels.
    pub fn predict_topk(&self, input: &Tensor, k: usize) -> Result<ClassificationResult> {
        Ok(self.predict_batch(std::slice::from_ref(input), k)?.remove(0))
    }

    /// Inference on several images at once.
    pub fn predict_batch(&self, inputs: &[Tensor], k: usize) -> Result<Vec<ClassificationResult>> {
        self.check_emotion_head()?;
        if !(1..=EmotionLabel::COUNT).contains(&k) {
            return Err(Error::InvalidArgument(format!(
                "k must be in 1..={}, got {k}",
                EmotionLabel::COUNT
            )));
        }
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let batch = Tensor::stack(&inputs.iter().collect::<Vec<_>>())?;
        let probs = self.forward(&batch)?;
        probs
            .data()
            .chunks(EmotionLabel::COUNT)
            .map(|row| ClassificationResult::from_distribution(row, k))
            .collect()
    }
}
