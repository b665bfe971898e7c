//! Shared stage-2 assembly: anchors, patch grids, the concatenated forward
//! pass and both decoding paths. Fine-tuning, inference and the attention
//! dump all run through here so they cannot drift apart.

use crate::anchors::AnchorStrategy;
use crate::backbone::{
    build_mask, decode_patchwise, decode_sequencewise, embed_grid, embed_rows, forward,
    AttentionMaskSpec, BoundState, ModelConfig,
};
use crate::error::{Error, Result};
use crate::patching::{patchify, NormStats, PatchGrid};
use crate::rng::Rng;
use crate::tensor::{Graph, TensorRef};

use super::{normalize_window, MaskKind};

/// Normalized history and anchor grids for one window.
pub(crate) struct Stage2Assembly {
    pub history: PatchGrid,
    pub anchors: PatchGrid,
    pub stats: NormStats,
    pub horizon: usize,
}

pub(crate) fn assemble(
    lookback: &[f64],
    horizon: usize,
    cfg: &ModelConfig,
    strategy: &dyn AnchorStrategy,
    normalize: bool,
    rng: &mut Rng,
) -> Result<Stage2Assembly> {
    let (normed, stats) = normalize_window(lookback, normalize);
    let anchor_values = strategy.generate(&normed, horizon, rng)?;
    let history = patchify(&normed, cfg.patch_len, cfg.stride)?;
    let anchors = patchify(&anchor_values, cfg.patch_len, cfg.stride)?;
    Ok(Stage2Assembly {
        history,
        anchors,
        stats,
        horizon,
    })
}

pub(crate) struct Stage2Pass {
    pub hidden: TensorRef,
    pub attention: Vec<Vec<TensorRef>>,
    pub n_history: usize,
    pub n_anchors: usize,
}

/// Embed history and anchor patches as one sequence and run the stack
/// under the requested mask.
pub(crate) fn run_stage2(
    g: &mut Graph,
    bound: &BoundState,
    cfg: &ModelConfig,
    asm: &Stage2Assembly,
    mask_kind: MaskKind,
) -> Result<Stage2Pass> {
    let n_history = asm.history.n_patches;
    let n_anchors = asm.anchors.n_patches;
    let t = n_history + n_anchors;
    if t > cfg.max_positions {
        return Err(Error::shape(format!(
            "{n_history} history + {n_anchors} anchor patches exceed max_positions {}",
            cfg.max_positions
        )));
    }
    let mut rows = asm.history.patches.clone();
    rows.extend_from_slice(&asm.anchors.patches);
    let rows = g.constant(vec![t, cfg.patch_len], rows)?;
    let embedded = embed_rows(g, bound, cfg, rows, t)?;
    let spec = match mask_kind {
        MaskKind::PositionAware => AttentionMaskSpec::PositionAware {
            n_history,
            n_anchors,
        },
        MaskKind::Causal => AttentionMaskSpec::Causal { len: t },
    };
    let mask = build_mask(spec)?;
    let pass = forward(g, bound, cfg, embedded, &mask, None)?;
    Ok(Stage2Pass {
        hidden: pass.hidden,
        attention: pass.attention,
        n_history,
        n_anchors,
    })
}

/// Patch-wise decoding of the optimized anchors back to a `[1, H]` series
/// on the original scale.
pub(crate) fn decode_forecast_patchwise(
    g: &mut Graph,
    bound: &BoundState,
    cfg: &ModelConfig,
    pass: &Stage2Pass,
    asm: &Stage2Assembly,
) -> Result<TensorRef> {
    let anchor_hidden = g.slice_rows(pass.hidden, pass.n_history, pass.n_anchors)?;
    let decoded = decode_patchwise(g, bound, anchor_hidden)?;
    let folded = g.overlap_fold(decoded, cfg.stride, asm.horizon)?;
    denormalize_on_graph(g, folded, asm)
}

/// The sequence-wise ablation path: history patches only, causal mask,
/// one large linear map from the flattened hidden rows to the horizon.
pub(crate) fn seq_decoder_forecast(
    g: &mut Graph,
    bound: &BoundState,
    cfg: &ModelConfig,
    lookback: &[f64],
    horizon: usize,
    normalize: bool,
) -> Result<TensorRef> {
    let (normed, stats) = normalize_window(lookback, normalize);
    let grid = patchify(&normed, cfg.patch_len, cfg.stride)?;
    let t = grid.n_patches;
    let mask = build_mask(AttentionMaskSpec::Causal { len: t })?;
    let embedded = embed_grid(g, bound, cfg, &grid)?;
    let pass = forward(g, bound, cfg, embedded, &mask, None)?;
    let out = decode_sequencewise(g, bound, pass.hidden)?;
    if g.shape(out)[1] != horizon {
        return Err(Error::shape(format!(
            "sequence decoder produces {} values, horizon is {horizon}",
            g.shape(out)[1]
        )));
    }
    let scaled = g.scale(out, stats.std)?;
    let mean = g.constant(vec![1, horizon], vec![stats.mean; horizon])?;
    g.add(scaled, mean)
}

fn denormalize_on_graph(
    g: &mut Graph,
    values: TensorRef,
    asm: &Stage2Assembly,
) -> Result<TensorRef> {
    let scaled = g.scale(values, asm.stats.std)?;
    let mean = g.constant(vec![1, asm.horizon], vec![asm.stats.mean; asm.horizon])?;
    g.add(scaled, mean)
}
