//! Mini-batch training with Adam and validation-AUC model selection.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{bce_logit_gradient, ClassWeights, PROB_CLAMP};
use super::network::{self, ParamLayout, Workspace};
use super::{EstimatorCheckpoint, EstimatorConfig, Normalization};
use crate::dataset::QuestionGroup;
use crate::math;
use crate::metrics::{auc, LabeledScores};
use crate::trajectory::{head_align, tail_align, AlignedTrajectory};
use crate::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// One labeled, aligned trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub question_id: String,
    pub trace_id: String,
    pub aligned: AlignedTrajectory,
    pub correct: bool,
}

fn examples_with(
    groups: &[QuestionGroup],
    l_max: usize,
    align: fn(&crate::trajectory::ConfidenceTrajectory, usize) -> Result<AlignedTrajectory>,
) -> Result<Vec<TrainingExample>> {
    let mut out = Vec::new();
    for g in groups {
        for t in &g.traces {
            out.push(TrainingExample {
                question_id: t.question_id.clone(),
                trace_id: t.trace_id.clone(),
                aligned: align(&t.trajectory, l_max)?,
                correct: t.correct,
            });
        }
    }
    Ok(out)
}

/// Tail-aligned examples for every trace of `groups`.
pub fn tail_examples(groups: &[QuestionGroup], l_max: usize) -> Result<Vec<TrainingExample>> {
    examples_with(groups, l_max, tail_align)
}

/// Head-aligned examples for every trace of `groups`.
pub fn head_examples(groups: &[QuestionGroup], l_max: usize) -> Result<Vec<TrainingExample>> {
    examples_with(groups, l_max, head_align)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_auc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingOutcome {
    pub checkpoint: EstimatorCheckpoint,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub class_weights: ClassWeights,
}

/// Batch-mean weighted BCE and its gradient with respect to every
/// parameter. Weights may be zero here, which removes a class from the
/// objective.
pub fn loss_and_gradient(
    checkpoint: &EstimatorCheckpoint,
    batch: &[&TrainingExample],
    weights: ClassWeights,
) -> Result<(f64, Vec<f64>)> {
    if !(weights.positive >= 0.0 && weights.negative >= 0.0) {
        return Err(Error::param("class_weights", "must be non-negative"));
    }
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let layout = checkpoint.layout();
    let mut grad = vec![0.0; layout.total()];
    let mut ws = Workspace::default();
    let loss = accumulate(checkpoint, &layout, batch, weights, &mut ws, &mut grad)?;
    Ok((loss, grad))
}

/// Adds the batch-mean gradient into `grad` and returns the batch-mean loss.
fn accumulate(
    checkpoint: &EstimatorCheckpoint,
    layout: &ParamLayout,
    batch: &[&TrainingExample],
    weights: ClassWeights,
    ws: &mut Workspace,
    grad: &mut [f64],
) -> Result<f64> {
    let inv = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for ex in batch {
        let logit = checkpoint.forward_with(layout, &ex.aligned, ws)?.logit;
        let p = math::sigmoid(logit).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let w = weights.of(ex.correct);
        loss -= w * if ex.correct { math::ln(p) } else { math::ln(1.0 - p) };
        let d = bce_logit_gradient(logit, ex.correct, weights) * inv;
        network::backward(layout, checkpoint.params(), ws, d, grad);
    }
    Ok(loss * inv)
}

fn evaluate(
    checkpoint: &EstimatorCheckpoint,
    layout: &ParamLayout,
    examples: &[TrainingExample],
    weights: ClassWeights,
    ws: &mut Workspace,
) -> Result<(f64, f64)> {
    let mut scores = Vec::with_capacity(examples.len());
    let mut labels = Vec::with_capacity(examples.len());
    let mut loss = 0.0;
    for ex in examples {
        let out = checkpoint.forward_with(layout, &ex.aligned, ws)?;
        let p = math::sigmoid(out.logit).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        loss -= weights.of(ex.correct)
            * if ex.correct { math::ln(p) } else { math::ln(1.0 - p) };
        scores.push(out.score);
        labels.push(ex.correct);
    }
    let auc = auc(&LabeledScores::new(scores, labels)?)?;
    Ok((loss / examples.len() as f64, auc))
}

fn single_class_error(split: &str, labels: &[bool]) -> Option<Error> {
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        let only = if pos == 0 { "incorrect" } else { "correct" };
        return Some(Error::Training(format!(
            "{split} split contains only {only} traces; class weights and AUC are undefined, \
             include questions with both correct and incorrect traces"
        )));
    }
    None
}

/// Trains a fresh estimator. Inputs must already be aligned to
/// `config.l_max`; questions may not appear in both sets.
pub fn train(
    config: &EstimatorConfig,
    train: &[TrainingExample],
    val: &[TrainingExample],
) -> Result<TrainingOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training examples"));
    }
    if val.is_empty() {
        return Err(Error::Empty("validation examples"));
    }
    let train_q: BTreeSet<&str> = train.iter().map(|e| e.question_id.as_str()).collect();
    if let Some(q) = val.iter().find(|e| train_q.contains(e.question_id.as_str())) {
        return Err(Error::QuestionLeakage(q.question_id.clone()));
    }
    for ex in train.iter().chain(val) {
        if ex.aligned.len() != config.l_max {
            return Err(Error::Shape {
                expected: config.l_max,
                actual: ex.aligned.len(),
            });
        }
    }
    let train_labels: Vec<bool> = train.iter().map(|e| e.correct).collect();
    if let Some(e) = single_class_error("training", &train_labels) {
        return Err(e);
    }
    let val_labels: Vec<bool> = val.iter().map(|e| e.correct).collect();
    if let Some(e) = single_class_error("validation", &val_labels) {
        return Err(e);
    }
    let weights = ClassWeights::balanced(&train_labels)?;

    let norm = Normalization::fit(train.iter().map(|e| &e.aligned));
    let mut model = EstimatorCheckpoint::initialize(config.clone(), norm)?;
    let layout = model.layout();
    let n_params = layout.total();

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);

    let mut m = vec![0.0; n_params];
    let mut v = vec![0.0; n_params];
    let mut grad = vec![0.0; n_params];
    let mut b1t = 1.0;
    let mut b2t = 1.0;
    let mut ws = Workspace::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut batch: Vec<&TrainingExample> = Vec::with_capacity(config.batch_size);

    let mut log = Vec::new();
    let mut best: Option<(usize, f64, EstimatorCheckpoint)> = None;
    let mut stale = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| &train[i]));
            grad.fill(0.0);
            let loss = accumulate(&model, &layout, &batch, weights, &mut ws, &mut grad)?;
            loss_sum += loss * chunk.len() as f64;

            b1t *= BETA1;
            b2t *= BETA2;
            let lr = config.learning_rate;
            for (((p, g), mi), vi) in model
                .params_mut()
                .iter_mut()
                .zip(&grad)
                .zip(&mut m)
                .zip(&mut v)
            {
                *mi = BETA1 * *mi + (1.0 - BETA1) * g;
                *vi = BETA2 * *vi + (1.0 - BETA2) * g * g;
                let mh = *mi / (1.0 - b1t);
                let vh = *vi / (1.0 - b2t);
                *p -= lr * mh / (math::sqrt(vh) + ADAM_EPS);
            }
        }
        if model.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Training(format!(
                "parameters diverged in epoch {epoch}; lower the learning rate"
            )));
        }
        let (val_loss, val_auc) = evaluate(&model, &layout, val, weights, &mut ws)?;
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss,
            val_auc,
        });
        let improved = best.as_ref().map_or(true, |(_, a, _)| val_auc > *a);
        if improved {
            best = Some((epoch, val_auc, model.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }

    let (best_epoch, best_val_auc, checkpoint) = best.expect("max_epochs >= 1");
    Ok(TrainingOutcome {
        checkpoint,
        log,
        best_epoch,
        best_val_auc,
        class_weights: weights,
    })
}
