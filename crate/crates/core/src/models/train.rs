use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClassifierM, Model};
use crate::autodiff::{Tape, Var};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    /// Cosine-anneal the learning rate towards zero over the run.
    pub cosine_decay: bool,
    /// Share of the target mass spread uniformly over all classes. Keeps the
    /// softmax away from saturation, where score gradients vanish in `f32`.
    pub label_smoothing: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            adam: AdamConfig::with_lr(3e-3),
            seed: 0,
            cosine_decay: true,
            label_smoothing: 0.1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean cross-entropy per epoch.
    pub epoch_losses: Vec<f64>,
    /// Training-set accuracy measured during each epoch (before each update).
    pub epoch_accuracy: Vec<f64>,
}

/// Minibatch cross-entropy training with Adam. The model must not be frozen.
pub fn train_classifier(m: &mut ClassifierM, samples: &[Sample], config: &TrainConfig) -> Result<TrainReport> {
    if m.is_frozen() {
        return Err(Error::ModelFrozen);
    }
    if samples.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if !(0.0..1.0).contains(&config.label_smoothing) {
        return Err(Error::InvalidArgument("label smoothing must be in [0,1)".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    if let Some(s) = samples.iter().find(|s| s.label >= m.classes()) {
        return Err(Error::InvalidArgument(format!(
            "label {} out of range for {} classes",
            s.label,
            m.classes()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(config.adam);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut report = TrainReport::default();
    for epoch in 0..config.epochs {
        if config.cosine_decay {
            let progress = epoch as f64 / config.epochs as f64;
            adam.set_lr(config.adam.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
        }
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let mut acc: Vec<Tensor> = m.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
            for &i in batch {
                let s = &samples[i];
                let mut tape = Tape::<f32>::new();
                let params = tape.bind(&m.params(), true)?;
                let x = tape.constant(s.x.clone())?;
                let y = m.forward(&mut tape, &params, x)?;
                if tape.value(y).argmax() == s.label {
                    correct += 1;
                }
                let loss = smoothed_cross_entropy(&mut tape, y, s.label, config.label_smoothing)?;
                loss_sum += tape.value(loss).item()? as f64;
                let grads = tape.backward(loss)?;
                for (a, &p) in acc.iter_mut().zip(&params) {
                    for (av, &gv) in a.data_mut().iter_mut().zip(grads.expect(p)?.data()) {
                        *av += gv;
                    }
                }
            }
            let inv = 1.0 / batch.len() as f32;
            for a in &mut acc {
                a.data_mut().iter_mut().for_each(|v| *v *= inv);
            }
            let grads: Vec<&Tensor> = acc.iter().collect();
            adam.adam_step(&mut m.params_mut(), &grads)?;
        }
        report.epoch_losses.push(loss_sum / samples.len() as f64);
        report.epoch_accuracy.push(correct as f64 / samples.len() as f64);
    }
    Ok(report)
}

/// `(1 − ε)·CE(label) + ε·mean over classes of CE(class)`
pub fn smoothed_cross_entropy<R: Real>(tape: &mut Tape<R>, probs: Var, label: usize, eps: f64) -> Result<Var> {
    let hard = tape.cross_entropy(probs, label)?;
    if eps == 0.0 {
        return Ok(hard);
    }
    let classes = tape.value(probs).numel();
    let mut loss = tape.scale(hard, 1.0 - eps)?;
    for c in 0..classes {
        let ce = tape.cross_entropy(probs, c)?;
        let ce = tape.scale(ce, eps / classes as f64)?;
        loss = tape.add(loss, ce)?;
    }
    Ok(loss)
}

/// Fraction of samples whose argmax prediction equals the label.
pub fn accuracy(m: &ClassifierM, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    let mut correct = 0usize;
    for s in samples {
        if m.predict(&s.x)?.argmax() == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}
