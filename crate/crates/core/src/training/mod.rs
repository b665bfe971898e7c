//! The two-stage optimization pipeline: causal next-patch pretraining
//! (stage 1), multi-patch prediction fine-tuning (stage 2), and the
//! inference/evaluation paths both stages share.

mod finetune;
mod forecast;
mod objective;
mod pretrain;

pub use finetune::finetune;
pub use forecast::{evaluate, forecast, EvalOptions};
pub use objective::{
    objective_from_stage, MaskedPatchObjective, NextPatchObjective, PretrainObjective,
};
pub use pretrain::pretrain;

use crate::anchors::AnchorInit;
use crate::backbone::FreezePolicy;
use crate::error::{Error, Result};
use crate::patching::{instance_normalize, NormStats};
use crate::rng::Rng;
use crate::tensor::AdamConfig;

/// Which loss drives a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stage {
    NextPatch,
    MaskedPatch { mask_ratio: f64 },
    MultiPatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderKind {
    PatchWise,
    SequenceWise,
}

/// Attention layout for stage 2; `Causal` is the mask ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    PositionAware,
    Causal,
}

#[derive(Debug, Clone)]
pub struct TrainPlan {
    pub stage: Stage,
    pub lookback: usize,
    pub horizon: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub patience: usize,
    pub normalize: bool,
    pub cosine_lr: bool,
    pub adam: AdamConfig,
    pub anchor_init: AnchorInit,
    pub freeze: FreezePolicy,
    pub decoder: DecoderKind,
    pub attn_mask: MaskKind,
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        if self.lookback == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("lookback, epochs and batch_size must be positive"));
        }
        if self.lr <= 0.0 {
            return Err(Error::config(format!("learning rate {} must be > 0", self.lr)));
        }
        if let Stage::MaskedPatch { mask_ratio } = self.stage {
            if !(0.0 < mask_ratio && mask_ratio < 1.0) {
                return Err(Error::config(format!(
                    "mask ratio {mask_ratio} must lie in (0, 1)"
                )));
            }
        }
        if self.stage == Stage::MultiPatch && self.horizon == 0 {
            return Err(Error::config("multi-patch fine-tuning needs a positive horizon"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub trainable_params: usize,
    pub notes: Vec<String>,
}

impl TrainLog {
    /// `epoch,train_loss,val_loss,seconds`. Timing is written as 0.000
    /// unless requested, keeping the file byte-reproducible across reruns.
    pub fn to_csv(&self, with_timing: bool) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,seconds\n");
        for e in &self.epochs {
            let secs = if with_timing { e.seconds } else { 0.0 };
            out.push_str(&format!(
                "{},{:.16e},{:.16e},{secs:.3}\n",
                e.epoch, e.train_loss, e.val_loss
            ));
        }
        out
    }
}

/// Streams derived from the run seed, so shuffling, masking and anchor
/// noise never share draws.
pub(crate) const STREAM_SHUFFLE: u64 = 0x01;
pub(crate) const STREAM_MASK: u64 = 0x02;
pub(crate) const STREAM_VAL_MASK: u64 = 0x03;
pub(crate) const STREAM_ANCHOR: u64 = 0x04;
pub(crate) const STREAM_DROPOUT: u64 = 0x05;

pub(crate) fn normalize_window(values: &[f64], enabled: bool) -> (Vec<f64>, NormStats) {
    if enabled {
        instance_normalize(values)
    } else {
        (values.to_vec(), NormStats { mean: 0.0, std: 1.0 })
    }
}

/// Map `items` to values on a thread pool, writing each result into its own
/// slot so the outcome is identical for any worker count.
pub(crate) fn parallel_map<T, U, F>(items: &[T], threads: usize, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync,
{
    let threads = threads.max(1).min(items.len().max(1));
    if threads <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let mut slots: Vec<Option<U>> = Vec::with_capacity(items.len());
    slots.resize_with(items.len(), || None);
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|scope| {
        for (c, slot_chunk) in slots.chunks_mut(chunk).enumerate() {
            let f = &f;
            scope.spawn(move || {
                for (off, slot) in slot_chunk.iter_mut().enumerate() {
                    let i = c * chunk + off;
                    *slot = Some(f(i, &items[i]));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("slot filled")).collect()
}

pub(crate) fn default_threads() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get().min(8))
        .unwrap_or(1)
}

/// Cosine-decayed learning rate when enabled, constant otherwise.
pub(crate) fn lr_at(plan: &TrainPlan, epoch: usize) -> f64 {
    if plan.cosine_lr && plan.epochs > 1 {
        let progress = epoch as f64 / plan.epochs as f64;
        plan.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    } else {
        plan.lr
    }
}

pub(crate) fn epoch_rng(seed: u64, stream: u64, epoch: usize) -> Rng {
    Rng::new(seed).derive(stream).derive(epoch as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn base_plan() -> TrainPlan {
        TrainPlan {
            stage: Stage::NextPatch,
            lookback: 32,
            horizon: 0,
            epochs: 2,
            batch_size: 8,
            lr: 1e-3,
            seed: 1,
            patience: 5,
            normalize: true,
            cosine_lr: false,
            adam: AdamConfig::default(),
            anchor_init: AnchorInit::RecentHistory,
            freeze: FreezePolicy::All,
            decoder: DecoderKind::PatchWise,
            attn_mask: MaskKind::PositionAware,
        }
    }

    #[test]
    fn plan_validation() {
        assert!(base_plan().validate().is_ok());
        let mut p = base_plan();
        p.stage = Stage::MaskedPatch { mask_ratio: 1.0 };
        assert!(p.validate().is_err());
        let mut p = base_plan();
        p.stage = Stage::MultiPatch;
        p.horizon = 0;
        assert!(p.validate().is_err());
        let mut p = base_plan();
        p.lr = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn parallel_map_is_thread_count_invariant() {
        let items: Vec<usize> = (0..97).collect();
        let f = |i: usize, &x: &usize| (i * 31 + x) as f64 * 0.5;
        let single = parallel_map(&items, 1, f);
        for threads in [2, 3, 8, 64] {
            assert_eq!(parallel_map(&items, threads, f), single);
        }
    }

    #[test]
    fn trainlog_csv_deterministic_without_timing() {
        let log = TrainLog {
            epochs: vec![EpochLog {
                epoch: 0,
                train_loss: 0.5,
                val_loss: 0.25,
                seconds: 1.234,
            }],
            trainable_params: 10,
            notes: vec![],
        };
        let a = log.to_csv(false);
        assert!(a.contains("0.000"));
        assert!(!a.contains("1.234"));
        let b = log.to_csv(true);
        assert!(b.contains("1.234"));
    }

    #[test]
    fn cosine_schedule_decays() {
        let mut p = base_plan();
        p.cosine_lr = true;
        p.epochs = 10;
        assert_eq!(lr_at(&p, 0), p.lr);
        assert!(lr_at(&p, 9) < lr_at(&p, 1));
    }
}
