//! Stage 1: self-supervised pretraining over a concatenated pool of
//! univariate windows drawn from one or more datasets. All parameters
//! train; the objective (next-patch or masked) comes from the plan.

use std::time::Instant;

use crate::backbone::{BackboneState, BoundState, FreezePolicy, ModelConfig};
use crate::data::{windows, SeriesFrame, SplitPart};
use crate::error::{Error, Result};
use crate::patching::WindowSample;
use crate::rng::Rng;
use crate::tensor::{Adam, Graph};

use super::objective::objective_from_stage;
use super::{
    default_threads, epoch_rng, lr_at, normalize_window, parallel_map, EpochLog, TrainLog,
    TrainPlan, Stage, STREAM_MASK, STREAM_SHUFFLE, STREAM_VAL_MASK,
};

/// Train a fresh backbone on the training splits of `frames`. Returns the
/// state with the best validation loss and the per-epoch log.
pub fn pretrain(
    cfg: ModelConfig,
    frames: &[SeriesFrame],
    plan: &TrainPlan,
) -> Result<(BackboneState, TrainLog)> {
    plan.validate()?;
    cfg.validate()?;
    if !matches!(plan.stage, Stage::NextPatch | Stage::MaskedPatch { .. }) {
        return Err(Error::config("pretraining requires a next-patch or masked stage"));
    }
    if frames.is_empty() {
        return Err(Error::Train("no datasets given".to_string()));
    }

    let mut train_pool: Vec<WindowSample> = Vec::new();
    let mut val_pool: Vec<WindowSample> = Vec::new();
    for (i, frame) in frames.iter().enumerate() {
        let mut w = windows(frame, plan.lookback, 0, SplitPart::Train)
            .map_err(|e| Error::Train(format!("dataset {i}: {e}")))?;
        train_pool.append(&mut w);
        if let Ok(mut v) = windows(frame, plan.lookback, 0, SplitPart::Val) {
            val_pool.append(&mut v);
        }
    }
    if train_pool.is_empty() {
        return Err(Error::Train("window pool is empty".to_string()));
    }
    if val_pool.is_empty() {
        return Err(Error::Train(
            "no validation windows; shrink the lookback or enlarge the split".to_string(),
        ));
    }

    let mut rng = Rng::new(plan.seed);
    let mut state = BackboneState::init(cfg, &mut rng)?;
    let objective = objective_from_stage(plan.stage)?;

    let mut adam = Adam::new(plan.adam);
    let mut log = TrainLog {
        trainable_params: state.trainable_params(FreezePolicy::All),
        ..TrainLog::default()
    };
    let mut best: Option<(f64, BackboneState)> = None;
    let mut stale_epochs = 0usize;

    for epoch in 0..plan.epochs {
        let started = Instant::now();
        let lr = lr_at(plan, epoch);
        let mut order: Vec<usize> = (0..train_pool.len()).collect();
        epoch_rng(plan.seed, STREAM_SHUFFLE, epoch).shuffle(&mut order);
        let mask_base = epoch_rng(plan.seed, STREAM_MASK, epoch);

        let mut loss_sum = 0.0;
        for (batch_idx, batch) in order.chunks(plan.batch_size).enumerate() {
            let mut g = Graph::new();
            let bound = BoundState::bind(&mut g, &state, FreezePolicy::All)?;
            let mut batch_loss = None;
            for &wi in batch {
                let (normed, _) = normalize_window(&train_pool[wi].lookback, plan.normalize);
                let mut wrng = mask_base.derive(wi as u64);
                let loss = objective
                    .window_loss(&mut g, &bound, &cfg, &normed, &mut wrng)
                    .map_err(|e| {
                        Error::Train(format!("epoch {epoch} batch {batch_idx}: {e}"))
                    })?;
                batch_loss = Some(match batch_loss {
                    None => loss,
                    Some(acc) => g.add(acc, loss).map_err(divergence(epoch, batch_idx))?,
                });
            }
            let total = batch_loss.expect("nonempty batch");
            let mean = g
                .scale(total, 1.0 / batch.len() as f64)
                .map_err(divergence(epoch, batch_idx))?;
            loss_sum += g.scalar_value(mean) * batch.len() as f64;
            g.backward(mean).map_err(divergence(epoch, batch_idx))?;

            adam.begin_step();
            for (name, tensor) in state.iter_mut() {
                if let Some(grad) = g.grad(bound.get(name)?) {
                    let grad = grad.to_vec();
                    adam.update(name, &mut tensor.data, &grad, lr)?;
                }
            }
        }
        let train_loss = loss_sum / train_pool.len() as f64;
        let val_loss = validation_loss(&state, &cfg, plan, &val_pool, objective.as_ref())?;
        log.epochs.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        });

        match &best {
            Some((best_val, _)) if val_loss >= *best_val => {
                stale_epochs += 1;
                if stale_epochs >= plan.patience {
                    log.notes.push(format!("early stop after epoch {epoch}"));
                    break;
                }
            }
            _ => {
                best = Some((val_loss, state.clone()));
                stale_epochs = 0;
            }
        }
    }

    if let Some((_, best_state)) = best {
        state = best_state;
    }
    Ok((state, log))
}

fn divergence(epoch: usize, batch: usize) -> impl Fn(Error) -> Error {
    move |e| Error::Train(format!("diverged at epoch {epoch} batch {batch}: {e}"))
}

/// Mean objective loss over the validation pool, evaluated without
/// gradients. Mask draws are fixed per window index so epochs compare
/// like for like.
fn validation_loss(
    state: &BackboneState,
    cfg: &ModelConfig,
    plan: &TrainPlan,
    val_pool: &[WindowSample],
    objective: &dyn PretrainObjectiveDyn,
) -> Result<f64> {
    let base = Rng::new(plan.seed).derive(STREAM_VAL_MASK);
    let losses = parallel_map(val_pool, default_threads(), |wi, sample| -> Result<f64> {
        let (normed, _) = normalize_window(&sample.lookback, plan.normalize);
        let mut g = Graph::new();
        let bound = BoundState::bind_frozen(&mut g, state)?;
        let mut wrng = base.derive(wi as u64);
        let loss = objective.window_loss(&mut g, &bound, cfg, &normed, &mut wrng)?;
        Ok(g.scalar_value(loss))
    });
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / val_pool.len() as f64)
}

// Object-safe alias so validation can borrow the boxed objective.
use super::objective::PretrainObjective as PretrainObjectiveDyn;
