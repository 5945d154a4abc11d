//! Per-sample optimization of a perturbation generator against a frozen
//! classifier, difference maps, and adversarial fine-tuning.

mod augment;

pub use augment::{augment_retrain, AugmentConfig, AugmentReport, ReviewEntry, RoundReport};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::models::{build_generator, ClassifierM, GeneratorP, Model};
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::{Real, Tensor};

/// What the optimization pushes the classifier towards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LossMode {
    /// Minimize the summed scores of the original sample's `k` top classes.
    SuppressTopK { k: usize },
    /// Maximize the score of class `m`.
    MaximizeClass { m: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbConfig {
    pub mode: LossMode,
    /// Weight of the mean absolute difference between sample and perturbed sample.
    pub lambda: f64,
    pub epochs: usize,
    /// A run converged when its minimum loss falls below this.
    pub threshold: f64,
    pub adam: AdamConfig,
    /// Rows in the score tables.
    pub report_k: usize,
    /// Echoed into results; the procedure itself draws no random numbers.
    pub seed: u64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            mode: LossMode::SuppressTopK { k: 5 },
            lambda: 1.0,
            epochs: 500,
            threshold: 0.2,
            // a short second-moment memory lets the proximity term take
            // full-size steps once the early score gradients have faded
            adam: AdamConfig {
                beta2: 0.9,
                ..AdamConfig::default()
            },
            report_k: 5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub class: usize,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationResult {
    pub original: Tensor,
    pub perturbed: Tensor,
    /// `original - perturbed`
    pub delta: Tensor,
    pub abs_delta: Tensor,
    pub loss_history: Vec<f64>,
    pub best_epoch: usize,
    pub best_loss: f64,
    /// Indices the loss was built on: the frozen top-K, or the single target.
    pub objective_indices: Vec<usize>,
    pub original_scores: Tensor,
    pub perturbed_scores: Tensor,
    /// Original sample's top classes with their original scores.
    pub original_top: Vec<ScoreEntry>,
    /// Perturbed sample's own top classes with their perturbed scores.
    pub perturbed_top: Vec<ScoreEntry>,
    pub converged: bool,
    pub config: PerturbConfig,
}

impl PerturbationResult {
    /// Perturbed scores summed over the original top-`k` classes.
    pub fn suppressed_score_sum(&self, k: usize) -> Result<f64> {
        let idx = top_k_indices(&self.original_scores, k)?;
        Ok(idx.iter().map(|&i| self.perturbed_scores.data()[i] as f64).sum())
    }
}

/// Indices of the `k` largest scores, largest first; equal scores keep the
/// lower index first.
pub fn top_k_indices<R: Real>(y: &Tensor<R>, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > y.numel() {
        return Err(Error::InvalidArgument(format!(
            "k must be in 1..={}, got {k}",
            y.numel()
        )));
    }
    let mut idx: Vec<usize> = (0..y.numel()).collect();
    let d = y.data();
    idx.sort_by(|&a, &b| d[b].partial_cmp(&d[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

fn table(scores: &Tensor, indices: &[usize]) -> Vec<ScoreEntry> {
    indices
        .iter()
        .map(|&class| ScoreEntry {
            class,
            score: scores.data()[class] as f64,
        })
        .collect()
}

/// Graph handles for one evaluation of the objective.
pub struct Objective {
    pub loss: Var,
    pub perturbed: Var,
    pub scores: Var,
}

fn proximity<R: Real>(tape: &mut Tape<R>, x: Var, perturbed: Var, lambda: f64) -> Result<Var> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be finite and non-negative, got {lambda}")));
    }
    let l1 = tape.l1_distance(x, perturbed)?;
    tape.scale(l1, lambda)
}

/// Builds `Σᵢ M(P(X))_{kᵢ} + λ·mean|X − P(X)|` on `tape`.
#[allow(clippy::too_many_arguments)]
pub fn suppress_objective<R: Real>(
    tape: &mut Tape<R>,
    m: &ClassifierM,
    m_params: &[Var],
    p: &GeneratorP,
    p_params: &[Var],
    x: Var,
    indices: &[usize],
    lambda: f64,
) -> Result<Objective> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("no classes to suppress".into()));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= m.classes()) {
        return Err(Error::InvalidArgument(format!("class index {bad} out of range")));
    }
    let perturbed = p.forward(tape, p_params, x)?;
    let scores = m.forward(tape, m_params, perturbed)?;
    let picked = tape.gather(scores, indices)?;
    let score_sum = tape.sum(picked)?;
    let prox = proximity(tape, x, perturbed, lambda)?;
    let loss = tape.add(score_sum, prox)?;
    Ok(Objective { loss, perturbed, scores })
}

/// Builds `(1 − M(P(X))_m) + λ·mean|X − P(X)|` on `tape`.
#[allow(clippy::too_many_arguments)]
pub fn target_objective<R: Real>(
    tape: &mut Tape<R>,
    m: &ClassifierM,
    m_params: &[Var],
    p: &GeneratorP,
    p_params: &[Var],
    x: Var,
    target: usize,
    lambda: f64,
) -> Result<Objective> {
    if target >= m.classes() {
        return Err(Error::InvalidArgument(format!("target class {target} out of range")));
    }
    let perturbed = p.forward(tape, p_params, x)?;
    let scores = m.forward(tape, m_params, perturbed)?;
    let picked = tape.gather(scores, &[target])?;
    let miss = tape.affine(picked, -1.0, 1.0)?;
    let miss = tape.sum(miss)?;
    let prox = proximity(tape, x, perturbed, lambda)?;
    let loss = tape.add(miss, prox)?;
    Ok(Objective { loss, perturbed, scores })
}

#[allow(clippy::too_many_arguments)]
pub fn loss_suppress<R: Real>(
    tape: &mut Tape<R>,
    m: &ClassifierM,
    m_params: &[Var],
    p: &GeneratorP,
    p_params: &[Var],
    x: Var,
    indices: &[usize],
    lambda: f64,
) -> Result<Var> {
    Ok(suppress_objective(tape, m, m_params, p, p_params, x, indices, lambda)?.loss)
}

#[allow(clippy::too_many_arguments)]
pub fn loss_target<R: Real>(
    tape: &mut Tape<R>,
    m: &ClassifierM,
    m_params: &[Var],
    p: &GeneratorP,
    p_params: &[Var],
    x: Var,
    target: usize,
    lambda: f64,
) -> Result<Var> {
    Ok(target_objective(tape, m, m_params, p, p_params, x, target, lambda)?.loss)
}

fn validate(m: &ClassifierM, x: &Tensor, config: &PerturbConfig) -> Result<()> {
    if !m.is_frozen() {
        return Err(Error::ModelNotFrozen);
    }
    if x.shape() != m.input_shape() {
        return Err(Error::ShapeMismatch {
            op: "optimize_perturbation",
            lhs: x.shape().to_vec(),
            rhs: m.input_shape().to_vec(),
        });
    }
    if x.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument("sample values must lie in [0,1]".into()));
    }
    if config.epochs == 0 {
        return Err(Error::InvalidArgument("epochs must be at least 1".into()));
    }
    if config.report_k == 0 || config.report_k > m.classes() {
        return Err(Error::InvalidArgument(format!("report_k must be in 1..={}", m.classes())));
    }
    match config.mode {
        LossMode::SuppressTopK { k } if k == 0 || k >= m.classes() => Err(Error::InvalidArgument(format!(
            "k must be in 1..={} for {} classes",
            m.classes() - 1,
            m.classes()
        ))),
        LossMode::MaximizeClass { m: target } if target >= m.classes() => {
            Err(Error::InvalidArgument(format!("target class {target} out of range")))
        }
        _ => Ok(()),
    }
}

/// Optimizes a fresh identity-initialized generator for one sample and
/// returns the epoch with the lowest loss. `m` is only read.
pub fn optimize_perturbation(m: &ClassifierM, x: &Tensor, config: &PerturbConfig) -> Result<PerturbationResult> {
    validate(m, x, config)?;
    let original_scores = m.predict(x)?;
    let indices = match config.mode {
        LossMode::SuppressTopK { k } => top_k_indices(&original_scores, k)?,
        LossMode::MaximizeClass { m } => vec![m],
    };
    let mut p = build_generator(m.kind());
    let mut adam = AdamState::new(config.adam);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Tensor, Tensor)> = None;

    for epoch in 0..config.epochs {
        let mut tape = Tape::<f32>::new();
        let m_params = tape.bind(&m.params(), false)?;
        let p_params = tape.bind(&p.params(), true)?;
        let xv = tape.constant(x.clone())?;
        let built = match config.mode {
            LossMode::SuppressTopK { .. } => {
                suppress_objective(&mut tape, m, &m_params, &p, &p_params, xv, &indices, config.lambda)
            }
            LossMode::MaximizeClass { m: target } => {
                target_objective(&mut tape, m, &m_params, &p, &p_params, xv, target, config.lambda)
            }
        };
        let obj = match built {
            Ok(obj) => obj,
            Err(Error::NonFinite { .. }) => return Err(Error::Diverged { epoch, history }),
            Err(e) => return Err(e),
        };
        let loss = tape.value(obj.loss).item()? as f64;
        history.push(loss);
        if best.as_ref().map_or(true, |b| loss < b.1) {
            best = Some((
                epoch,
                loss,
                tape.value(obj.perturbed).clone(),
                tape.value(obj.scores).clone(),
            ));
        }
        if epoch + 1 == config.epochs {
            break;
        }
        let grads = tape.backward(obj.loss)?;
        let g: Vec<&Tensor> = p_params.iter().map(|&v| grads.expect(v)).collect::<Result<_>>()?;
        match adam.adam_step(&mut p.params_mut(), &g) {
            Err(Error::NonFiniteGradient { .. }) => return Err(Error::Diverged { epoch, history }),
            other => other?,
        }
    }

    let (best_epoch, best_loss, perturbed, perturbed_scores) = best.expect("at least one epoch ran");
    let (delta, abs_delta) = difference_map(x, &perturbed)?;
    let original_top = table(&original_scores, &top_k_indices(&original_scores, config.report_k)?);
    let perturbed_top = table(&perturbed_scores, &top_k_indices(&perturbed_scores, config.report_k)?);
    Ok(PerturbationResult {
        original: x.clone(),
        perturbed,
        delta,
        abs_delta,
        loss_history: history,
        best_epoch,
        best_loss,
        objective_indices: indices,
        original_scores,
        perturbed_scores,
        original_top,
        perturbed_top,
        converged: best_loss < config.threshold,
        config: config.clone(),
    })
}

/// `δ = X − X'` and `|δ|`.
pub fn difference_map(x: &Tensor, perturbed: &Tensor) -> Result<(Tensor, Tensor)> {
    let delta = x.zip_with(perturbed, "difference_map", |a, b| a - b)?;
    let abs = delta.abs();
    Ok((delta, abs))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityMetrics {
    /// Share of elements with `|δ| < rel_threshold · max|δ|` (1 when δ is all zero).
    pub sparse_fraction: f64,
    pub mean_abs: f64,
    pub max_abs: f64,
}

pub fn sparsity_metrics(delta: &Tensor, rel_threshold: f64) -> Result<SparsityMetrics> {
    if !(rel_threshold > 0.0 && rel_threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("rel_threshold must be in (0,1), got {rel_threshold}")));
    }
    let max_abs = delta.max_abs();
    let mean_abs = delta.data().iter().map(|v| v.abs() as f64).sum::<f64>() / delta.numel() as f64;
    let sparse_fraction = if max_abs == 0.0 {
        1.0
    } else {
        let cut = rel_threshold * max_abs;
        delta.data().iter().filter(|v| (v.abs() as f64) < cut).count() as f64 / delta.numel() as f64
    };
    Ok(SparsityMetrics {
        sparse_fraction,
        mean_abs,
        max_abs,
    })
}
