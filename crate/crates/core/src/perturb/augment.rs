use serde::{Deserialize, Serialize};

use super::{optimize_perturbation, sparsity_metrics, PerturbConfig};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::models::{accuracy, train_classifier, ClassifierM, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub rounds: usize,
    pub perturb: PerturbConfig,
    pub finetune: TrainConfig,
    /// Stop once fewer than this share of perturbation runs converge.
    pub stop_fraction: f64,
    /// Fine-tune on the clean training samples as well as the perturbed ones.
    pub include_clean: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rounds: 1,
            perturb: PerturbConfig::default(),
            finetune: TrainConfig {
                epochs: 2,
                cosine_decay: false,
                adam: crate::optim::AdamConfig::with_lr(3e-4),
                ..TrainConfig::default()
            },
            stop_fraction: 0.05,
            include_clean: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub attempted: usize,
    pub converged: usize,
    /// `converged / attempted`
    pub convergence_rate: f64,
    pub mean_best_loss: f64,
    /// False when the round stopped before fine-tuning.
    pub finetuned: bool,
    pub finetune_losses: Vec<f64>,
    pub clean_accuracy: f64,
}

/// One perturbed sample listed for manual inspection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewEntry {
    pub round: usize,
    pub sample: usize,
    pub label: usize,
    pub converged: bool,
    pub best_loss: f64,
    pub mean_abs_delta: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentReport {
    pub initial_accuracy: f64,
    pub rounds: Vec<RoundReport>,
    pub stopped_early: bool,
    pub review: Vec<ReviewEntry>,
}

/// Rounds of: perturb every training sample against the frozen classifier,
/// fine-tune on the converged perturbed samples with their original labels,
/// re-evaluate on the clean test set. The classifier's frozen flag is
/// restored on return.
pub fn augment_retrain(
    m: &mut ClassifierM,
    train: &[Sample],
    test: &[Sample],
    config: &AugmentConfig,
) -> Result<AugmentReport> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidArgument("augmentation needs training and test samples".into()));
    }
    let was_frozen = m.is_frozen();
    let mut report = AugmentReport {
        initial_accuracy: accuracy(m, test)?,
        ..AugmentReport::default()
    };
    let outcome = run_rounds(m, train, test, config, &mut report);
    if was_frozen {
        m.freeze();
    } else {
        m.unfreeze();
    }
    outcome.map(|()| report)
}

fn run_rounds(
    m: &mut ClassifierM,
    train: &[Sample],
    test: &[Sample],
    config: &AugmentConfig,
    report: &mut AugmentReport,
) -> Result<()> {
    for round in 0..config.rounds {
        m.freeze();
        let mut adversarial = Vec::new();
        let mut loss_sum = 0.0;
        for (i, s) in train.iter().enumerate() {
            let r = optimize_perturbation(m, &s.x, &config.perturb)?;
            loss_sum += r.best_loss;
            report.review.push(ReviewEntry {
                round,
                sample: i,
                label: s.label,
                converged: r.converged,
                best_loss: r.best_loss,
                mean_abs_delta: sparsity_metrics(&r.delta, 0.01)?.mean_abs,
            });
            if r.converged {
                // the generator output is unconstrained; keep the fine-tuning input in range
                adversarial.push(Sample {
                    x: r.perturbed.clamp(0.0, 1.0),
                    label: s.label,
                });
            }
        }
        let converged = adversarial.len();
        let rate = converged as f64 / train.len() as f64;
        let mut round_report = RoundReport {
            round,
            attempted: train.len(),
            converged,
            convergence_rate: rate,
            mean_best_loss: loss_sum / train.len() as f64,
            finetuned: false,
            finetune_losses: Vec::new(),
            clean_accuracy: accuracy(m, test)?,
        };
        if rate < config.stop_fraction {
            report.rounds.push(round_report);
            report.stopped_early = round + 1 < config.rounds;
            return Ok(());
        }
        if config.include_clean {
            adversarial.extend(train.iter().cloned());
        }
        m.unfreeze();
        let finetune = TrainConfig {
            seed: config.finetune.seed.wrapping_add(round as u64),
            ..config.finetune.clone()
        };
        let tr = train_classifier(m, &adversarial, &finetune)?;
        round_report.finetuned = true;
        round_report.finetune_losses = tr.epoch_losses;
        round_report.clean_accuracy = accuracy(m, test)?;
        report.rounds.push(round_report);
    }
    Ok(())
}
