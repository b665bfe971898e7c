//! The causal transformer backbone: GPT-2-style pre-LN blocks over patch
//! embeddings, a shared patch-wise decoder, and the sequence-wise decoder
//! kept for the ablation path.

mod checkpoint;
mod forward;
mod mask;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use forward::{
    decode_patchwise, decode_sequencewise, embed_grid, embed_grid_masked, forward, BoundState,
    DropoutCtx, ForwardPass,
};
pub use mask::{build_mask, AttentionMask, AttentionMaskSpec};

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub patch_len: usize,
    pub stride: usize,
    pub max_positions: usize,
    pub dropout: f64,
    pub ln_eps: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.n_layers == 0 || self.n_heads == 0 {
            return Err(Error::config("model dimensions must be positive"));
        }
        if self.hidden_dim % self.n_heads != 0 {
            return Err(Error::config(format!(
                "hidden_dim {} must be divisible by n_heads {}",
                self.hidden_dim, self.n_heads
            )));
        }
        if self.patch_len == 0 || self.stride == 0 || self.stride > self.patch_len {
            return Err(Error::config(format!(
                "patch_len {} / stride {} invalid",
                self.patch_len, self.stride
            )));
        }
        if self.max_positions == 0 {
            return Err(Error::config("max_positions must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} must be in [0, 1)", self.dropout)));
        }
        if self.ln_eps <= 0.0 {
            return Err(Error::config("ln_eps must be positive"));
        }
        Ok(())
    }

    /// Names and shapes of every core tensor, in checkpoint order. The
    /// optional sequence decoder is added separately at fine-tune time.
    pub fn param_specs(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.hidden_dim;
        let mut specs = vec![
            ("patch_embed".to_string(), vec![self.patch_len, d]),
            ("pos_table".to_string(), vec![self.max_positions, d]),
        ];
        for i in 0..self.n_layers {
            let l = format!("layers.{i}");
            specs.push((format!("{l}.ln1.g"), vec![d]));
            specs.push((format!("{l}.ln1.b"), vec![d]));
            for proj in ["wq", "wk", "wv", "wo"] {
                specs.push((format!("{l}.attn.{proj}"), vec![d, d]));
            }
            for bias in ["bq", "bk", "bv", "bo"] {
                specs.push((format!("{l}.attn.{bias}"), vec![d]));
            }
            specs.push((format!("{l}.ln2.g"), vec![d]));
            specs.push((format!("{l}.ln2.b"), vec![d]));
            specs.push((format!("{l}.ffn.w_in"), vec![d, 4 * d]));
            specs.push((format!("{l}.ffn.b_in"), vec![4 * d]));
            specs.push((format!("{l}.ffn.w_out"), vec![4 * d, d]));
            specs.push((format!("{l}.ffn.b_out"), vec![d]));
        }
        specs.push(("ln_f.g".to_string(), vec![d]));
        specs.push(("ln_f.b".to_string(), vec![d]));
        specs.push(("decoder.w_p".to_string(), vec![d, self.patch_len]));
        specs.push(("mask_embed".to_string(), vec![d]));
        specs
    }
}

/// Name of the optional sequence-wise decoder tensor.
pub const SEQ_DECODER: &str = "decoder.w_s";

/// Which tensors an optimizer step may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreezePolicy {
    All,
    /// Position table, every layer-norm scale/shift, and the patch-wise
    /// decoder (plus the sequence decoder when configured).
    LnAndPosOnly,
    /// As above plus the attention projections.
    LnPosAttn,
    /// As above plus the feed-forward blocks.
    LnPosAttnFfn,
}

impl FreezePolicy {
    pub fn is_trainable(&self, name: &str) -> bool {
        let base = name == "pos_table"
            || name.contains(".ln1.")
            || name.contains(".ln2.")
            || name.starts_with("ln_f.")
            || name == "decoder.w_p"
            || name == SEQ_DECODER;
        match self {
            FreezePolicy::All => true,
            FreezePolicy::LnAndPosOnly => base,
            FreezePolicy::LnPosAttn => base || name.contains(".attn."),
            FreezePolicy::LnPosAttnFfn => {
                base || name.contains(".attn.") || name.contains(".ffn.")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// All trainable tensors of the model, keyed by name in a stable order.
#[derive(Debug, Clone)]
pub struct BackboneState {
    pub config: ModelConfig,
    tensors: IndexMap<String, NamedTensor>,
}

const INIT_STD: f64 = 0.02;

impl BackboneState {
    /// Fresh parameters: truncated normal (std 0.02) for weights, zeros for
    /// biases and shifts, ones for layer-norm scales.
    pub fn init(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut tensors = IndexMap::new();
        for (name, shape) in config.param_specs() {
            let data = init_tensor(&name, &shape, rng);
            tensors.insert(name, NamedTensor { shape, data });
        }
        Ok(BackboneState { config, tensors })
    }

    pub fn from_parts(config: ModelConfig, tensors: IndexMap<String, NamedTensor>) -> Self {
        BackboneState { config, tensors }
    }

    pub fn get(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::config(format!("unknown tensor {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut NamedTensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("unknown tensor {name}")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &NamedTensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut NamedTensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn has_seq_decoder(&self) -> bool {
        self.tensors.contains_key(SEQ_DECODER)
    }

    /// Add (or validate) the sequence-wise decoder for a given number of
    /// history patches and horizon length.
    pub fn ensure_seq_decoder(&mut self, n_patches: usize, horizon: usize, rng: &mut Rng) -> Result<()> {
        let expect = vec![n_patches * self.config.hidden_dim, horizon];
        if let Some(t) = self.tensors.get(SEQ_DECODER) {
            if t.shape != expect {
                return Err(Error::config(format!(
                    "{SEQ_DECODER} has shape {:?} but this run needs {:?}",
                    t.shape, expect
                )));
            }
            return Ok(());
        }
        let data = init_tensor(SEQ_DECODER, &expect, rng);
        self.tensors
            .insert(SEQ_DECODER.to_string(), NamedTensor { shape: expect, data });
        Ok(())
    }

    pub fn total_params(&self) -> usize {
        self.tensors.values().map(|t| t.numel()).sum()
    }

    pub fn trainable_params(&self, policy: FreezePolicy) -> usize {
        self.tensors
            .iter()
            .filter(|(name, _)| policy.is_trainable(name))
            .map(|(_, t)| t.numel())
            .sum()
    }

    pub fn trainable_names(&self, policy: FreezePolicy) -> Vec<String> {
        self.tensors
            .keys()
            .filter(|name| policy.is_trainable(name))
            .cloned()
            .collect()
    }
}

fn init_tensor(name: &str, shape: &[usize], rng: &mut Rng) -> Vec<f64> {
    let numel: usize = shape.iter().product();
    if name.ends_with(".g") {
        vec![1.0; numel]
    } else if name.ends_with(".b")
        || name.contains(".attn.b")
        || name.contains(".ffn.b")
    {
        vec![0.0; numel]
    } else {
        (0..numel).map(|_| rng.next_trunc_normal(INIT_STD)).collect()
    }
}

/// Parameter count of the patch-wise decoder: `D * P`.
pub fn patch_decoder_params(hidden_dim: usize, patch_len: usize) -> usize {
    hidden_dim * patch_len
}

/// Parameter count of the sequence-wise decoder: `(L_p * D) * H`.
pub fn seq_decoder_params(n_patches: usize, hidden_dim: usize, horizon: usize) -> usize {
    n_patches * hidden_dim * horizon
}

/// Size ratio of the two decoders, which reduces to `P / (L_p * H)`.
pub fn decoder_param_ratio(patch_len: usize, n_patches: usize, horizon: usize) -> f64 {
    patch_len as f64 / (n_patches as f64 * horizon as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            hidden_dim: 8,
            n_layers: 1,
            n_heads: 2,
            patch_len: 4,
            stride: 2,
            max_positions: 8,
            dropout: 0.0,
            ln_eps: 1e-5,
        }
    }

    #[test]
    fn config_validation() {
        let mut c = tiny_config();
        c.n_heads = 3;
        assert!(c.validate().is_err());
        let mut c = tiny_config();
        c.dropout = 1.0;
        assert!(c.validate().is_err());
        let mut c = tiny_config();
        c.stride = 5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn init_shapes_match_specs() {
        let cfg = tiny_config();
        let state = BackboneState::init(cfg, &mut Rng::new(0)).unwrap();
        for (name, shape) in cfg.param_specs() {
            assert_eq!(state.get(&name).unwrap().shape, shape, "{name}");
        }
        assert!(!state.has_seq_decoder());
    }

    #[test]
    fn layer_norm_scales_start_at_one_biases_at_zero() {
        let state = BackboneState::init(tiny_config(), &mut Rng::new(0)).unwrap();
        assert!(state.get("ln_f.g").unwrap().data.iter().all(|&v| v == 1.0));
        assert!(state.get("ln_f.b").unwrap().data.iter().all(|&v| v == 0.0));
        assert!(state
            .get("layers.0.attn.bq")
            .unwrap()
            .data
            .iter()
            .all(|&v| v == 0.0));
        // Weights are random but bounded by the 2-sigma truncation.
        assert!(state
            .get("layers.0.attn.wq")
            .unwrap()
            .data
            .iter()
            .all(|&v| v.abs() <= 2.0 * INIT_STD));
    }

    #[test]
    fn freeze_policy_sets_nest() {
        let state = BackboneState::init(tiny_config(), &mut Rng::new(1)).unwrap();
        let ln_pos: Vec<String> = state.trainable_names(FreezePolicy::LnAndPosOnly);
        let all: Vec<String> = state.trainable_names(FreezePolicy::All);
        for name in &ln_pos {
            assert!(all.contains(name));
        }
        assert!(ln_pos.contains(&"pos_table".to_string()));
        assert!(ln_pos.contains(&"decoder.w_p".to_string()));
        assert!(ln_pos.contains(&"layers.0.ln1.g".to_string()));
        assert!(ln_pos.contains(&"ln_f.b".to_string()));
        assert!(!ln_pos.contains(&"layers.0.attn.wq".to_string()));
        assert!(!ln_pos.contains(&"patch_embed".to_string()));
        assert!(!ln_pos.contains(&"mask_embed".to_string()));

        let attn = state.trainable_names(FreezePolicy::LnPosAttn);
        assert!(attn.contains(&"layers.0.attn.wq".to_string()));
        assert!(!attn.contains(&"layers.0.ffn.w_in".to_string()));
        let ffn = state.trainable_names(FreezePolicy::LnPosAttnFfn);
        assert!(ffn.contains(&"layers.0.ffn.w_in".to_string()));
    }

    #[test]
    fn trainable_fraction_small_for_desk_gpt2_shape() {
        // 6-layer  D=768 model at desk max_positions: the unfrozen share
        // stays below one percent.
        let cfg = ModelConfig {
            hidden_dim: 768,
            n_layers: 6,
            n_heads: 12,
            patch_len: 16,
            stride: 8,
            max_positions: 130,
            dropout: 0.0,
            ln_eps: 1e-5,
        };
        let total: usize = cfg.param_specs().iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        let trainable: usize = cfg
            .param_specs()
            .iter()
            .filter(|(name, _)| FreezePolicy::LnAndPosOnly.is_trainable(name))
            .map(|(_, s)| s.iter().product::<usize>())
            .sum();
        let fraction = trainable as f64 / total as f64;
        assert!(fraction < 0.01, "fraction {fraction}");
    }

    #[test]
    fn decoder_param_counts() {
        assert_eq!(patch_decoder_params(768, 16), 12288);
        assert_eq!(seq_decoder_params(64, 768, 720), 64 * 768 * 720);
        let ratio = decoder_param_ratio(16, 64, 720);
        assert_eq!(ratio, 16.0 / (64.0 * 720.0));
        assert!((ratio - 3.472e-4).abs() < 1e-7);
    }

    #[test]
    fn seq_decoder_shape_checked() {
        let mut state = BackboneState::init(tiny_config(), &mut Rng::new(2)).unwrap();
        let mut rng = Rng::new(3);
        state.ensure_seq_decoder(4, 6, &mut rng).unwrap();
        assert!(state.has_seq_decoder());
        // Same dims fine, different dims rejected.
        state.ensure_seq_decoder(4, 6, &mut rng).unwrap();
        assert!(state.ensure_seq_decoder(5, 6, &mut rng).is_err());
    }
}
