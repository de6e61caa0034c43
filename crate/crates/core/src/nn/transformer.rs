use candle_core::{Tensor, Var, D};
use serde::{Deserialize, Serialize};

use crate::par::seeded_rng;
use super::{device, CausalLm, Init, Params, Source};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct TransformerConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub context_window: usize,
}

impl TransformerConfig {
    /// Desk-scale defaults for a given vocabulary.
    pub fn small(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            context_window: 192,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.d_model == 0 || self.n_heads == 0 || self.context_window == 0 {
            return Err(Error::Config("transformer dimensions must be positive".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct LayerNorm {
    gain: Var,
    shift: Var,
}

impl LayerNorm {
    fn new(params: &mut Params, src: &mut Source<'_>, prefix: &str, d: usize) -> Result<Self> {
        Ok(Self {
            gain: params.take(src, &format!("{prefix}.gain"), &[d], Init::Ones)?,
            shift: params.take(src, &format!("{prefix}.shift"), &[d], Init::Zeros)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(self.gain.as_tensor())?
            .broadcast_add(self.shift.as_tensor())?)
    }
}

#[derive(Debug, Clone)]
struct Linear {
    weight: Var,
    bias: Var,
}

impl Linear {
    fn new(params: &mut Params, src: &mut Source<'_>, prefix: &str, d_in: usize, d_out: usize, std: f64) -> Result<Self> {
        Ok(Self {
            weight: params.take(src, &format!("{prefix}.weight"), &[d_in, d_out], Init::Normal(std))?,
            bias: params.take(src, &format!("{prefix}.bias"), &[d_out], Init::Zeros)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(self.weight.as_tensor())?
            .broadcast_add(self.bias.as_tensor())?)
    }
}

#[derive(Debug, Clone)]
struct Block {
    ln_attn: LayerNorm,
    qkv: Linear,
    out: Linear,
    ln_mlp: LayerNorm,
    fc_in: Linear,
    fc_out: Linear,
}

/// Decoder-only transformer with learned positions, pre-norm blocks, masked
/// multi-head self-attention and an output head tied to the token embedding.
#[derive(Debug, Clone)]
pub struct TransformerLm {
    config: TransformerConfig,
    params: Params,
    tok_emb: Var,
    pos_emb: Var,
    blocks: Vec<Block>,
    ln_final: LayerNorm,
}

impl TransformerLm {
    pub fn new(config: TransformerConfig, seed: u64) -> Result<Self> {
        let mut rng = seeded_rng(seed);
        Self::from_source(config, &mut Source::Init(&mut rng))
    }

    /// Input token embedding table `[vocab, d_model]`.
    pub fn token_embeddings(&self) -> &Tensor {
        self.tok_emb.as_tensor()
    }

    fn attention(&self, block: &Block, x: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (t, d) = x.dims2()?;
        let h = self.config.n_heads;
        let dh = d / h;
        let qkv = block.qkv.forward(x)?;
        let heads = |i: usize| -> Result<Tensor> {
            Ok(qkv
                .narrow(1, i * d, d)?
                .reshape((t, h, dh))?
                .transpose(0, 1)?
                .contiguous()?)
        };
        let (q, k, v) = (heads(0)?, heads(1)?, heads(2)?);
        let scores = (q.matmul(&k.t()?.contiguous()?)? * (1.0 / (dh as f64).sqrt()))?;
        let weights = candle_nn::ops::softmax(&scores.broadcast_add(mask)?, D::Minus1)?;
        let mixed = weights
            .matmul(&v)?
            .transpose(0, 1)?
            .contiguous()?
            .reshape((t, d))?;
        block.out.forward(&mixed)
    }
}

fn causal_mask(t: usize) -> Result<Tensor> {
    let data: Vec<f64> = (0..t)
        .flat_map(|i| (0..t).map(move |j| if j <= i { 0.0 } else { -1e9 }))
        .collect();
    Ok(Tensor::from_vec(data, (t, t), &device())?)
}

impl CausalLm for TransformerLm {
    const KIND: &'static str = "transformer_lm";
    type Config = TransformerConfig;

    fn config(&self) -> &TransformerConfig {
        &self.config
    }

    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn context_window(&self) -> usize {
        self.config.context_window
    }

    fn forward(&self, ids: &[u32]) -> Result<Tensor> {
        let t = ids.len();
        if t == 0 {
            return Err(Error::invalid("empty input sequence"));
        }
        if t > self.config.context_window {
            return Err(Error::ContextOverflow {
                len: t,
                window: self.config.context_window,
            });
        }
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= self.config.vocab_size) {
            return Err(Error::invalid(format!("token id {bad} outside vocabulary")));
        }
        let idx = Tensor::new(ids, &device())?;
        let mut x = self
            .tok_emb
            .as_tensor()
            .index_select(&idx, 0)?
            .add(&self.pos_emb.as_tensor().narrow(0, 0, t)?)?;
        let mask = causal_mask(t)?;
        for block in &self.blocks {
            x = (&x + self.attention(block, &block.ln_attn.forward(&x)?, &mask)?)?;
            let hidden = block.fc_in.forward(&block.ln_mlp.forward(&x)?)?.gelu()?;
            x = (&x + block.fc_out.forward(&hidden)?)?;
        }
        let x = self.ln_final.forward(&x)?;
        Ok(x.matmul(&self.tok_emb.as_tensor().t()?)?)
    }

    fn params(&self) -> &Params {
        &self.params
    }

    fn from_source(config: TransformerConfig, src: &mut Source<'_>) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let std = 0.02;
        let resid_std = std / (2.0 * config.n_layers.max(1) as f64).sqrt();
        let mut params = Params::default();
        let tok_emb = params.take(src, "tok_emb", &[config.vocab_size, d], Init::Normal(std))?;
        let pos_emb = params.take(src, "pos_emb", &[config.context_window, d], Init::Normal(std))?;
        let mut blocks = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let p = format!("block{l}");
            blocks.push(Block {
                ln_attn: LayerNorm::new(&mut params, src, &format!("{p}.ln_attn"), d)?,
                qkv: Linear::new(&mut params, src, &format!("{p}.qkv"), d, 3 * d, std)?,
                out: Linear::new(&mut params, src, &format!("{p}.out"), d, d, resid_std)?,
                ln_mlp: LayerNorm::new(&mut params, src, &format!("{p}.ln_mlp"), d)?,
                fc_in: Linear::new(&mut params, src, &format!("{p}.fc_in"), d, config.d_ff, std)?,
                fc_out: Linear::new(&mut params, src, &format!("{p}.fc_out"), config.d_ff, d, resid_std)?,
            });
        }
        let ln_final = LayerNorm::new(&mut params, src, "ln_final", d)?;
        Ok(Self {
            config,
            params,
            tok_emb,
            pos_emb,
            blocks,
            ln_final,
        })
    }
}
