use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{flip_augment, Sample};
use crate::decoder::{decode_batch, DecodeConfig, Detection};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalResult};
use crate::layers::{Ctx, Mode};
use crate::losses::{total_loss, LossBreakdown};
use crate::network::{Model, RawPredictions};
use crate::optim::{adam_step, AdamConfig, OptimizerState};
use crate::targets::{encode_targets, TrainingTargets};
use crate::tensor::Tensor;

use super::Schedule;

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub mean_total: f64,
}

fn targets_for(model: &Model, s: &Sample) -> Result<TrainingTargets> {
    let (h, w) = model.config.output_size();
    encode_targets(&s.boxes, model.config.num_classes, h, w, model.stride())
}

/// One optimizer step on a batch; returns the loss breakdown.
pub fn train_step(
    model: &mut Model,
    opt: &mut OptimizerState,
    batch: &[Sample],
    lr: f64,
) -> Result<LossBreakdown> {
    let images = Tensor::stack(&batch.iter().map(|s| s.image.clone()).collect::<Vec<_>>())?;
    let targets = TrainingTargets::stack(&batch.iter().map(|s| targets_for(model, s)).collect::<Result<Vec<_>>>()?)?;
    let (tape, updates, breakdown) = {
        let mut ctx = Ctx::new(&model.store, Mode::Train);
        let x = ctx.tape.constant(images);
        let preds = model.forward(&mut ctx, x)?;
        let (loss, breakdown) = total_loss(&mut ctx.tape, &preds, &targets)?;
        if !breakdown.total.is_finite() {
            return Err(Error::invalid(format!("non-finite loss {breakdown:?}")));
        }
        ctx.tape.backward(loss)?;
        (ctx.tape, ctx.bn_updates, breakdown)
    };
    model.store.zero_grads();
    model.store.accumulate_grads(&tape);
    drop(tape);
    model.apply_bn_updates(updates);
    adam_step(&mut model.store, opt, lr, &AdamConfig::default())?;
    Ok(breakdown)
}

/// Runs `schedule` from `start_epoch`, calling `on_step` after every step.
/// Shuffling and flips are drawn from `seed` and the epoch number only.
pub fn train_model(
    model: &mut Model,
    samples: &[Sample],
    schedule: &Schedule,
    seed: u64,
    start_epoch: usize,
    mut on_step: impl FnMut(&StepRecord, &Model) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    if samples.is_empty() {
        return Err(Error::invalid("no training samples"));
    }
    let mut opt = OptimizerState::new();
    let mut step = start_epoch * samples.len().div_ceil(schedule.batch_size);
    let mut epochs = Vec::new();
    for epoch in start_epoch..schedule.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x2545_f491_4f6c_dd1d));
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);
        let lr = schedule.lr_at(epoch);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(schedule.batch_size) {
            let batch: Vec<Sample> = chunk
                .iter()
                .map(|&i| {
                    if schedule.flip && rng.random_bool(0.5) {
                        flip_augment(&samples[i])
                    } else {
                        samples[i].clone()
                    }
                })
                .collect();
            let loss = train_step(model, &mut opt, &batch, lr)?;
            sum += loss.total;
            batches += 1;
            step += 1;
            on_step(&StepRecord { step, epoch, lr, loss }, model)?;
        }
        let rec = EpochRecord {
            epoch,
            lr,
            mean_total: sum / batches as f64,
        };
        log::info!("epoch {} lr {:.2e} mean loss {:.4}", epoch + 1, lr, rec.mean_total);
        epochs.push(rec);
    }
    Ok(epochs)
}

/// Eval-mode predictions, `batch` images at a time.
pub fn predict_images(model: &Model, images: &[&Tensor], batch: usize) -> Result<Vec<RawPredictions>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch.max(1)) {
        let x = Tensor::stack(&chunk.iter().map(|t| (*t).clone()).collect::<Vec<_>>())?;
        let p = model.predict(&x)?;
        out.extend((0..chunk.len()).map(|n| p.item(n)));
    }
    Ok(out)
}

pub fn detect_samples(model: &Model, samples: &[Sample], decode: &DecodeConfig, batch: usize) -> Result<Vec<Vec<Detection>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        let x = Tensor::stack(&chunk.iter().map(|s| s.image.clone()).collect::<Vec<_>>())?;
        out.extend(decode_batch(&model.predict(&x)?, decode)?);
    }
    Ok(out)
}

/// Detections of `model` on `samples` scored at IoU 0.5.
pub fn evaluate_model(model: &Model, samples: &[Sample], decode: &DecodeConfig, batch: usize) -> Result<EvalResult> {
    let dets = detect_samples(model, samples, decode, batch)?;
    let gts: Vec<_> = samples.iter().map(|s| s.boxes.clone()).collect();
    evaluate(&dets, &gts, model.config.num_classes, 0.5)
}
