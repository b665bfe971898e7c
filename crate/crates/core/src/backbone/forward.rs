//! Forward passes over the tape: patch embedding, the pre-LN transformer
//! stack with masked multi-head attention, and the two decoders.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::patching::PatchGrid;
use crate::rng::Rng;
use crate::tensor::{Graph, TensorRef};

use super::mask::AttentionMask;
use super::{BackboneState, FreezePolicy, ModelConfig, SEQ_DECODER};

/// Graph leaves for every state tensor of one forward pass.
pub struct BoundState {
    refs: IndexMap<String, TensorRef>,
}

impl BoundState {
    /// Register every tensor of `state` as a leaf; tensors the policy marks
    /// trainable will receive gradients.
    pub fn bind(g: &mut Graph, state: &BackboneState, policy: FreezePolicy) -> Result<Self> {
        let mut refs = IndexMap::new();
        for (name, t) in state.iter() {
            let r = g.param(t.shape.clone(), t.data.clone(), policy.is_trainable(name))?;
            refs.insert(name.to_string(), r);
        }
        Ok(BoundState { refs })
    }

    /// Bind with every tensor frozen, for inference passes.
    pub fn bind_frozen(g: &mut Graph, state: &BackboneState) -> Result<Self> {
        let mut refs = IndexMap::new();
        for (name, t) in state.iter() {
            let r = g.param(t.shape.clone(), t.data.clone(), false)?;
            refs.insert(name.to_string(), r);
        }
        Ok(BoundState { refs })
    }

    pub fn get(&self, name: &str) -> Result<TensorRef> {
        self.refs
            .get(name)
            .copied()
            .ok_or_else(|| Error::config(format!("tensor {name} not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, TensorRef)> + '_ {
        self.refs.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Seeded dropout for training passes; inference passes use `None`.
pub type DropoutCtx<'a> = Option<(&'a mut Rng, f64)>;

fn apply_dropout(g: &mut Graph, x: TensorRef, ctx: &mut DropoutCtx) -> Result<TensorRef> {
    match ctx {
        Some((rng, rate)) if *rate > 0.0 => {
            let keep = 1.0 - *rate;
            let shape = g.shape(x).to_vec();
            let numel: usize = shape.iter().product();
            let mask: Vec<f64> = (0..numel)
                .map(|_| if rng.next_f64() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            let m = g.constant(shape, mask)?;
            g.mul(x, m)
        }
        _ => Ok(x),
    }
}

fn grid_to_const(g: &mut Graph, grid: &PatchGrid) -> Result<TensorRef> {
    g.constant(
        vec![grid.n_patches, grid.patch_len],
        grid.patches.clone(),
    )
}

fn positions(g: &mut Graph, bound: &BoundState, cfg: &ModelConfig, t: usize) -> Result<TensorRef> {
    if t > cfg.max_positions {
        return Err(Error::shape(format!(
            "{t} positions exceed max_positions {}",
            cfg.max_positions
        )));
    }
    let idx: Vec<usize> = (0..t).collect();
    let pos_table = bound.get("pos_table")?;
    g.gather_rows(pos_table, &idx)
}

/// `row_k = grid_k * patch_embed + pos_table[k]`.
pub fn embed_grid(
    g: &mut Graph,
    bound: &BoundState,
    cfg: &ModelConfig,
    grid: &PatchGrid,
) -> Result<TensorRef> {
    let rows = grid_to_const(g, grid)?;
    embed_rows(g, bound, cfg, rows, grid.n_patches)
}

/// Embed an already-built `[T, P]` tensor of patch rows.
pub fn embed_rows(
    g: &mut Graph,
    bound: &BoundState,
    cfg: &ModelConfig,
    rows: TensorRef,
    t: usize,
) -> Result<TensorRef> {
    let embed = bound.get("patch_embed")?;
    let proj = g.matmul(rows, embed)?;
    let pos = positions(g, bound, cfg, t)?;
    g.add(proj, pos)
}

/// Embed a grid with a subset of rows replaced by the learned mask
/// embedding (plus position), for masked-patch pretraining.
pub fn embed_grid_masked(
    g: &mut Graph,
    bound: &BoundState,
    cfg: &ModelConfig,
    grid: &PatchGrid,
    masked: &[usize],
) -> Result<TensorRef> {
    let t = grid.n_patches;
    if let Some(&bad) = masked.iter().find(|&&k| k >= t) {
        return Err(Error::shape(format!("masked row {bad} out of range for {t} patches")));
    }
    let rows = grid_to_const(g, grid)?;
    let embed = bound.get("patch_embed")?;
    let proj = g.matmul(rows, embed)?;
    // Zero out masked rows with a diagonal selector, then add the mask
    // embedding back on exactly those rows.
    let mut sel = vec![0.0; t * t];
    let mut indicator = vec![0.0; t];
    for i in 0..t {
        sel[i * t + i] = 1.0;
    }
    for &k in masked {
        sel[k * t + k] = 0.0;
        indicator[k] = 1.0;
    }
    let sel = g.constant(vec![t, t], sel)?;
    let kept = g.matmul(sel, proj)?;
    let ind = g.constant(vec![t, 1], indicator)?;
    let mask_embed = bound.get("mask_embed")?;
    let mask_row = g.reshape(mask_embed, vec![1, cfg.hidden_dim])?;
    let mask_rows = g.matmul(ind, mask_row)?;
    let combined = g.add(kept, mask_rows)?;
    let pos = positions(g, bound, cfg, t)?;
    g.add(combined, pos)
}

/// Result of one pass through the stack: final hidden rows plus every
/// post-softmax attention matrix, indexed `[layer][head]`.
pub struct ForwardPass {
    pub hidden: TensorRef,
    pub attention: Vec<Vec<TensorRef>>,
}

/// Pre-LN transformer: `x + Attn(LN(x))` then `x + FFN(LN(x))` per layer,
/// final layer norm after the stack. Attention logits are masked additively
/// before the softmax and scaled by `1/sqrt(D/n_heads)`.
pub fn forward(
    g: &mut Graph,
    bound: &BoundState,
    cfg: &ModelConfig,
    embedded: TensorRef,
    mask: &AttentionMask,
    mut dropout: DropoutCtx,
) -> Result<ForwardPass> {
    let t = g.shape(embedded)[0];
    if t != mask.len {
        return Err(Error::shape(format!(
            "mask is {}x{} but input has {t} rows",
            mask.len, mask.len
        )));
    }
    if t > cfg.max_positions {
        return Err(Error::shape(format!(
            "{t} positions exceed max_positions {}",
            cfg.max_positions
        )));
    }
    let d = cfg.hidden_dim;
    let dh = d / cfg.n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mask_bias = g.constant(vec![t, t], mask.bias.clone())?;

    let mut x = embedded;
    let mut attention = Vec::with_capacity(cfg.n_layers);
    for layer in 0..cfg.n_layers {
        let l = format!("layers.{layer}");
        // Attention sub-block.
        let ln1_g = bound.get(&format!("{l}.ln1.g"))?;
        let ln1_b = bound.get(&format!("{l}.ln1.b"))?;
        let normed = g.layer_norm_rows(x, ln1_g, ln1_b, cfg.ln_eps)?;
        let q = project(g, bound, &l, "wq", "bq", normed)?;
        let k = project(g, bound, &l, "wk", "bk", normed)?;
        let v = project(g, bound, &l, "wv", "bv", normed)?;
        let mut heads = Vec::with_capacity(cfg.n_heads);
        let mut ctx: Option<TensorRef> = None;
        for h in 0..cfg.n_heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scaled = g.scale(scores, scale)?;
            let masked = g.add(scaled, mask_bias)?;
            let attn = g.softmax_rows(masked)?;
            heads.push(attn);
            let head_ctx = g.matmul(attn, vh)?;
            ctx = Some(match ctx {
                None => head_ctx,
                Some(prev) => g.concat_cols(prev, head_ctx)?,
            });
        }
        attention.push(heads);
        let ctx = ctx.expect("at least one head");
        let wo = bound.get(&format!("{l}.attn.wo"))?;
        let bo = bound.get(&format!("{l}.attn.bo"))?;
        let proj = g.matmul(ctx, wo)?;
        let proj = g.add_bias(proj, bo)?;
        let proj = apply_dropout(g, proj, &mut dropout)?;
        x = g.add(x, proj)?;

        // Feed-forward sub-block.
        let ln2_g = bound.get(&format!("{l}.ln2.g"))?;
        let ln2_b = bound.get(&format!("{l}.ln2.b"))?;
        let normed = g.layer_norm_rows(x, ln2_g, ln2_b, cfg.ln_eps)?;
        let w_in = bound.get(&format!("{l}.ffn.w_in"))?;
        let b_in = bound.get(&format!("{l}.ffn.b_in"))?;
        let w_out = bound.get(&format!("{l}.ffn.w_out"))?;
        let b_out = bound.get(&format!("{l}.ffn.b_out"))?;
        let h1 = g.matmul(normed, w_in)?;
        let h1 = g.add_bias(h1, b_in)?;
        let h1 = g.gelu(h1)?;
        let h2 = g.matmul(h1, w_out)?;
        let h2 = g.add_bias(h2, b_out)?;
        let h2 = apply_dropout(g, h2, &mut dropout)?;
        x = g.add(x, h2)?;
    }

    let ln_g = bound.get("ln_f.g")?;
    let ln_b = bound.get("ln_f.b")?;
    let hidden = g.layer_norm_rows(x, ln_g, ln_b, cfg.ln_eps)?;
    Ok(ForwardPass { hidden, attention })
}

fn project(
    g: &mut Graph,
    bound: &BoundState,
    layer: &str,
    w: &str,
    b: &str,
    x: TensorRef,
) -> Result<TensorRef> {
    let w = bound.get(&format!("{layer}.attn.{w}"))?;
    let b = bound.get(&format!("{layer}.attn.{b}"))?;
    let p = g.matmul(x, w)?;
    g.add_bias(p, b)
}

/// Decode every hidden row independently to the time domain: `[T, D] ->
/// [T, P]` through the shared patch-wise projection.
pub fn decode_patchwise(g: &mut Graph, bound: &BoundState, hidden: TensorRef) -> Result<TensorRef> {
    let w_p = bound.get("decoder.w_p")?;
    g.matmul(hidden, w_p)
}

/// The sequence-wise ablation decoder: flatten `[L_p, D]` and project to
/// `[1, H]` with one large linear map.
pub fn decode_sequencewise(
    g: &mut Graph,
    bound: &BoundState,
    hidden: TensorRef,
) -> Result<TensorRef> {
    let w_s = bound.get(SEQ_DECODER)?;
    let rows = g.shape(hidden)[0];
    let cols = g.shape(hidden)[1];
    let expect = g.shape(w_s)[0];
    if rows * cols != expect {
        return Err(Error::shape(format!(
            "sequence decoder expects {expect} flattened inputs, hidden is {rows}x{cols}"
        )));
    }
    let flat = g.reshape(hidden, vec![1, rows * cols])?;
    g.matmul(flat, w_s)
}
