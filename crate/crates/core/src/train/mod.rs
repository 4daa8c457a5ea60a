//! Minibatch training with class-weighted cross-entropy and Adam.

mod adam;
mod weights;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::ops;
use crate::par;
use crate::tensor::Tensor;

pub use adam::{AdamHyper, AdamState};
pub use weights::compute_class_weights;

/// Indexed labelled samples, loaded on demand.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn label(&self, index: usize) -> usize;

    /// The input tensor of one sample, shaped like the model input.
    fn load(&self, index: usize) -> Result<Tensor>;

    fn class_counts(&self, classes: usize) -> Vec<u64> {
        let mut counts = vec![0u64; classes];
        for i in 0..self.len() {
            if let Some(c) = counts.get_mut(self.label(i)) {
                *c += 1;
            }
        }
        counts
    }
}

/// Samples already decoded into tensors.
#[derive(Clone, Debug, Default)]
pub struct InMemorySamples {
    pub inputs: Vec<Tensor>,
    pub labels: Vec<usize>,
}

impl InMemorySamples {
    pub fn new(inputs: Vec<Tensor>, labels: Vec<usize>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::Dataset(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }
}

impl SampleSource for InMemorySamples {
    fn len(&self) -> usize {
        self.inputs.len()
    }

    fn label(&self, index: usize) -> usize {
        self.labels[index]
    }

    fn load(&self, index: usize) -> Result<Tensor> {
        Ok(self.inputs[index].clone())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CheckpointPolicy {
    /// Return the parameters from the epoch with the best eval top-1.
    #[default]
    Peak,
    /// Return the parameters after the final epoch.
    Last,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub class_weighting: bool,
    pub checkpoint: CheckpointPolicy,
    pub adam: AdamHyper,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 13,
            batch_size: 64,
            seed: 0,
            class_weighting: true,
            checkpoint: CheckpointPolicy::Peak,
            adam: AdamHyper::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        self.adam.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub eval_top1: f64,
    pub eval_top3: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    /// Index of the epoch with the highest eval top-1; earliest on ties.
    pub fn peak_index(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, e) in self.epochs.iter().enumerate() {
            if best.is_none_or(|b| e.eval_top1 > self.epochs[b].eval_top1) {
                best = Some(i);
            }
        }
        best
    }

    pub fn peak(&self) -> Option<&EpochRecord> {
        self.peak_index().map(|i| &self.epochs[i])
    }

    /// CSV rows `epoch,train_loss,train_acc,eval_top1,eval_top3` with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,eval_top1,eval_top3\n");
        for e in &self.epochs {
            writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6}",
                e.epoch, e.train_loss, e.train_accuracy, e.eval_top1, e.eval_top3
            )
            .unwrap();
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    /// Samples whose arg-max prediction equals the label.
    pub correct: usize,
}

/// Owns a model and its optimizer state; one [`Trainer::step`] per minibatch.
#[derive(Clone, Debug)]
pub struct Trainer {
    model: Model,
    state: AdamState,
    hyper: AdamHyper,
    class_weights: Vec<f32>,
}

impl Trainer {
    pub fn new(model: Model, hyper: AdamHyper, class_weights: Vec<f32>) -> Result<Self> {
        hyper.validate()?;
        if class_weights.len() != model.spec().classes {
            return Err(Error::InvalidArgument(format!(
                "{} class weights for a {}-class model",
                class_weights.len(),
                model.spec().classes
            )));
        }
        let state = AdamState::new(model.trainable());
        Ok(Self {
            model,
            state,
            hyper,
            class_weights,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn steps_taken(&self) -> u64 {
        self.state.t
    }

    /// Forward (train mode), weighted cross-entropy, backward, one Adam update.
    pub fn step(&mut self, batch: &Tensor, labels: &[usize]) -> Result<StepStats> {
        let (probs, tape) = self.model.forward_train(batch)?;
        let (loss, ce) = ops::weighted_cross_entropy(&probs, labels, &self.class_weights)?;
        let correct = argmax_rows(&probs)
            .iter()
            .zip(labels)
            .filter(|(p, y)| p == y)
            .count();
        let grads = tape.backward(&self.model, &ce.backward())?;
        let mut params = self.model.trainable_mut();
        self.state.step(&mut params, &grads.0, &self.hyper)?;
        Ok(StepStats {
            loss: loss as f64,
            correct,
        })
    }
}

fn argmax_rows(probs: &Tensor) -> Vec<usize> {
    let k = probs.shape()[1];
    probs
        .data()
        .chunks(k)
        .map(|row| (0..k).fold(0, |best, i| if row[i] > row[best] { i } else { best }))
        .collect()
}

fn load_batch(source: &dyn SampleSource, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
    let inputs: Vec<Tensor> = par::map_indexed(indices.len(), |i| source.load(indices[i]))
        .into_iter()
        .collect::<Result<_>>()?;
    let labels = indices.iter().map(|&i| source.label(i)).collect();
    Ok((Tensor::stack(&inputs.iter().collect::<Vec<_>>())?, labels))
}

/// Top-1 and top-3 accuracy of `model` on `source`, in inference mode.
pub fn accuracy(model: &Model, source: &dyn SampleSource, batch_size: usize) -> Result<(f64, f64)> {
    if source.is_empty() {
        return Err(Error::Dataset("cannot evaluate on an empty set".into()));
    }
    let k = model.spec().classes;
    let (mut top1, mut top3) = (0usize, 0usize);
    let indices: Vec<usize> = (0..source.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (batch, labels) = load_batch(source, chunk)?;
        let probs = model.forward(&batch)?;
        for (row, &y) in probs.data().chunks(k).zip(&labels) {
            // Rank of the true class: how many classes beat it, with ties
            // resolved toward the lower index.
            let rank = (0..k)
                .filter(|&c| row[c] > row[y] || (row[c] == row[y] && c < y))
                .count();
            top1 += usize::from(rank == 0);
            top3 += usize::from(rank < 3);
        }
    }
    let n = source.len() as f64;
    Ok((top1 as f64 / n, top3 as f64 / n))
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub history: TrainHistory,
    /// Snapshot selected by the checkpoint policy.
    pub model: Model,
}

/// Run the full training loop. Deterministic for a fixed `config.seed`.
pub fn train(
    model: Model,
    train_set: &dyn SampleSource,
    eval_set: &dyn SampleSource,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_progress(model, train_set, eval_set, config, |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with_progress(
    model: Model,
    train_set: &dyn SampleSource,
    eval_set: &dyn SampleSource,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    if eval_set.is_empty() {
        return Err(Error::Dataset("evaluation set is empty".into()));
    }
    let classes = model.spec().classes;
    for i in 0..train_set.len() {
        let label = train_set.label(i);
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
    }
    let class_weights: Vec<f32> = if config.class_weighting {
        compute_class_weights(&train_set.class_counts(classes))?
            .into_iter()
            .map(|w| w as f32)
            .collect()
    } else {
        vec![1.0; classes]
    };

    let mut trainer = Trainer::new(model, config.adam, class_weights)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Model)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let wrap = |e: Error| Error::Batch {
                batch: b,
                source: Box::new(e),
            };
            let (batch, labels) = load_batch(train_set, chunk).map_err(wrap)?;
            let stats = trainer.step(&batch, &labels).map_err(wrap)?;
            loss_sum += stats.loss * chunk.len() as f64;
            correct += stats.correct;
        }
        let (eval_top1, eval_top3) = accuracy(trainer.model(), eval_set, config.batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: correct as f64 / train_set.len() as f64,
            eval_top1,
            eval_top3,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} train acc {:.4} eval top-1 {:.4} top-3 {:.4}",
            record.train_loss,
            record.train_accuracy,
            record.eval_top1,
            record.eval_top3
        );
        on_epoch(&record);
        if best.as_ref().is_none_or(|(acc, _)| eval_top1 > *acc) {
            best = Some((eval_top1, trainer.model().clone()));
        }
        history.epochs.push(record);
    }

    let model = match config.checkpoint {
        CheckpointPolicy::Peak => best.expect("at least one epoch").1,
        CheckpointPolicy::Last => trainer.into_model(),
    };
    Ok(TrainOutcome { history, model })
}
