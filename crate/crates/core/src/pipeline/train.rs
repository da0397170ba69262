use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Dataset, InputKind, PipelineError, Result, Role, Stage, TrainConfig};
use crate::data::{stack_batch, tsn_sample, Augment, SampleMode, Split};
use crate::distill::{p_stream_loss, LossConfig, TeacherOutputs};
use crate::models::Network;
use crate::seed::{derive_seed, rng_for};
use crate::tensor::{Sgd, Tensor};
use crate::Scalar;

/// One network to train, what it reads, and an optional frozen teacher.
pub struct TrainTarget<'a, T: Scalar> {
    pub stage: Stage,
    pub role: Role,
    pub net: &'a Network<T>,
    pub input: InputKind,
    pub teacher: Option<(&'a Network<T>, InputKind)>,
    pub loss: LossConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub stage: Stage,
    pub role: Role,
    pub epoch: usize,
    pub lr: f64,
    /// Batch means.
    pub loss: f64,
    pub ce: f64,
    pub feature: Option<f64>,
    pub soft: Option<f64>,
    /// Percent of training samples classified correctly while training.
    pub train_top1: f64,
}

struct Batch<T: Scalar> {
    input: Tensor<T>,
    teacher_input: Option<Tensor<T>>,
    labels: Vec<usize>,
}

fn build_batch<T: Scalar>(
    data: &Dataset,
    ids: &[usize],
    target: &TrainTarget<'_, T>,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<Batch<T>> {
    let mut inputs = Vec::with_capacity(ids.len());
    let mut teacher_inputs = Vec::new();
    let mut labels = Vec::new();
    let segments = match target.input {
        InputKind::Rgb => cfg.i_segments,
        _ => cfg.segments,
    };
    let mode = if cfg.augment { SampleMode::Random } else { SampleMode::Uniform };
    for &i in ids {
        let seed = derive_seed(cfg.seed, &[target.stage.tag(), target.role as u64, epoch as u64, i as u64]);
        let plan = tsn_sample(&data.videos[i].video, segments, mode, seed)?;
        let aug = Augment::draw(&cfg.geometry, cfg.augment, seed);
        let x: Tensor<T> = data.input(i, target.input, &plan, &cfg.geometry, &aug)?;
        let per_sample = if target.input == InputKind::Rgb { x.shape()[0] } else { 1 };
        labels.extend(std::iter::repeat_n(data.videos[i].label(), per_sample));
        inputs.push(x);
        if let Some((_, kind)) = target.teacher.filter(|_| target.loss.needs_teacher()) {
            teacher_inputs.push(data.input(i, kind, &plan, &cfg.geometry, &aug)?);
        }
    }
    Ok(Batch {
        input: stack_batch(&inputs)?,
        teacher_input: (!teacher_inputs.is_empty()).then(|| stack_batch(&teacher_inputs)).transpose()?,
        labels,
    })
}

/// Momentum SGD over the train split with step-decayed learning rate. The
/// teacher, when present, runs in inference mode and is never updated.
pub fn train_network<T: Scalar>(target: &TrainTarget<'_, T>, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    target.loss.validate()?;
    if target.loss.needs_teacher() && target.teacher.is_none() {
        return Err(PipelineError::Config(format!("stage {} distils but has no teacher", target.stage)));
    }
    let train = data.indices(Split::Train);
    if train.is_empty() {
        return Err(PipelineError::EmptySplit(Split::Train));
    }
    if let Some((teacher, _)) = target.teacher {
        teacher.freeze();
    }
    let mut opt = Sgd::new(target.net.parameters(), cfg.sgd());
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.rate(epoch, cfg.epochs);
        opt.set_lr(lr);
        let mut order = train.clone();
        order.shuffle(&mut rng_for(cfg.seed, &[target.stage.tag(), target.role as u64, epoch as u64, 0x5F]));
        let (mut loss_sum, mut ce_sum, mut feat_sum, mut soft_sum) = (0.0, 0.0, 0.0, 0.0);
        let (mut correct, mut seen, mut batches) = (0usize, 0usize, 0usize);
        for ids in order.chunks(cfg.batch_size) {
            let batch = build_batch(data, ids, target, cfg, epoch)?;
            let out = target.net.forward(&batch.input, true)?;
            let teacher_out = match (target.teacher, &batch.teacher_input) {
                (Some((teacher, _)), Some(x)) if target.loss.needs_teacher() => Some(teacher.forward(x, false)?),
                _ => None,
            };
            let parts = p_stream_loss(
                &out.logits,
                &batch.labels,
                &out.feature,
                teacher_out.as_ref().map(|t| TeacherOutputs {
                    feature: &t.feature,
                    logits: &t.logits,
                }),
                &target.loss,
            )?;
            let loss = parts.total.item().as_f64();
            if !loss.is_finite() {
                return Err(PipelineError::Diverged {
                    stage: target.stage,
                    epoch,
                    loss,
                });
            }
            parts.total.backward()?;
            opt.step()?;
            loss_sum += loss;
            ce_sum += parts.ce.as_f64();
            feat_sum += parts.feature.map_or(0.0, |v| v.as_f64());
            soft_sum += parts.soft.map_or(0.0, |v| v.as_f64());
            batches += 1;
            let k = data.num_classes();
            let logits = out.logits.data();
            for (row, &label) in logits.chunks_exact(k).zip(&batch.labels) {
                let scores: Vec<f64> = row.iter().map(|v| v.as_f64()).collect();
                correct += usize::from(super::argmax(&scores) == label);
                seen += 1;
            }
        }
        let b = batches as f64;
        logs.push(EpochLog {
            stage: target.stage,
            role: target.role,
            epoch,
            lr,
            loss: loss_sum / b,
            ce: ce_sum / b,
            feature: (target.loss.lambda1 > 0.0).then_some(feat_sum / b),
            soft: (target.loss.lambda2 > 0.0).then_some(soft_sum / b),
            train_top1: 100.0 * correct as f64 / seen as f64,
        });
    }
    Ok(logs)
}
