//! Causal transformer-encoder language model.
//!
//! Post-norm encoder blocks (self-attention then a two-layer feed-forward
//! net, each wrapped in residual + layer norm) over token and position
//! embeddings, followed by a linear decoder to vocabulary logits. Attention
//! is causally masked so the model is a next-token predictor.
//!
//! Only the attention projections and feed-forward matrices are prunable.
//! Embeddings, biases, layer norms and the decoder stay dense.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::param::{InitDist, ParamStore};
use crate::rng::{RngStreams, StreamRng, INIT};
use crate::tensor::Tensor;

const LN_EPS: f64 = 1e-5;
const EMBED_INIT: f64 = 0.1;
/// Small enough that a fresh model predicts close to uniformly.
const DECODER_INIT: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Small,
    Medium,
    Large,
}

impl Preset {
    /// `(attention heads, encoder layers)`.
    pub fn heads_and_layers(self) -> (usize, usize) {
        match self {
            Preset::Small => (2, 2),
            Preset::Medium => (4, 4),
            Preset::Large => (8, 8),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Positional {
    #[default]
    Learned,
    Sinusoidal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Gelu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ffn: usize,
    pub max_seq_len: usize,
    pub dropout: f64,
    #[serde(default)]
    pub positional: Positional,
    #[serde(default)]
    pub activation: Activation,
}

impl ModelConfig {
    /// Desk-scale defaults with the preset's head and layer counts.
    pub fn preset(preset: Preset, vocab_size: usize) -> Self {
        let (n_heads, n_layers) = preset.heads_and_layers();
        Self {
            vocab_size,
            d_model: 64,
            n_heads,
            n_layers,
            d_ffn: 256,
            max_seq_len: 32,
            dropout: 0.2,
            positional: Positional::Learned,
            activation: Activation::Relu,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.d_model == 0 || self.d_ffn == 0 || self.max_seq_len == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.n_layers == 0 {
            return Err(Error::Config("n_layers must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// `(total, prunable)` parameter counts implied by the architecture.
    pub fn param_counts(&self) -> (usize, usize) {
        let (v, d, f) = (self.vocab_size, self.d_model, self.d_ffn);
        let pos = match self.positional {
            Positional::Learned => self.max_seq_len * d,
            Positional::Sinusoidal => 0,
        };
        let prunable_per_layer = 4 * d * d + 2 * d * f;
        let dense_per_layer = 4 * d + f + d + 4 * d;
        let total = v * d + pos + self.n_layers * (prunable_per_layer + dense_per_layer) + d * v + v;
        (total, self.n_layers * prunable_per_layer)
    }
}

/// Token windows for next-token prediction, flattened row-major
/// `(batch, seq)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub batch: usize,
    pub seq: usize,
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
}

impl Batch {
    pub fn new(batch: usize, seq: usize, inputs: Vec<usize>, targets: Vec<usize>) -> Result<Self> {
        if inputs.len() != batch * seq || targets.len() != batch * seq {
            return Err(Error::Shape(format!(
                "batch {batch}x{seq} with {} inputs and {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        Ok(Self {
            batch,
            seq,
            inputs,
            targets,
        })
    }

    pub fn tokens(&self) -> usize {
        self.batch * self.seq
    }
}

/// Whether dropout is active, and the stream it draws from.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut StreamRng),
}

struct LayerIds {
    q: (usize, usize),
    k: (usize, usize),
    v: (usize, usize),
    o: (usize, usize),
    norm1: (usize, usize),
    up: (usize, usize),
    down: (usize, usize),
    norm2: (usize, usize),
}

struct Layout {
    token: usize,
    position: Option<usize>,
    layers: Vec<LayerIds>,
    decoder: (usize, usize),
}

impl Layout {
    fn resolve(store: &ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let pair = |prefix: &str, a: &str, b: &str| -> Result<(usize, usize)> {
            Ok((
                store.index_of(&format!("{prefix}.{a}"))?,
                store.index_of(&format!("{prefix}.{b}"))?,
            ))
        };
        let layers = (0..cfg.n_layers)
            .map(|l| {
                let p = format!("layers.{l}");
                Ok(LayerIds {
                    q: pair(&format!("{p}.attn.query"), "weight", "bias")?,
                    k: pair(&format!("{p}.attn.key"), "weight", "bias")?,
                    v: pair(&format!("{p}.attn.value"), "weight", "bias")?,
                    o: pair(&format!("{p}.attn.out"), "weight", "bias")?,
                    norm1: pair(&format!("{p}.norm1"), "weight", "bias")?,
                    up: pair(&format!("{p}.ffn.up"), "weight", "bias")?,
                    down: pair(&format!("{p}.ffn.down"), "weight", "bias")?,
                    norm2: pair(&format!("{p}.norm2"), "weight", "bias")?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            token: store.index_of("embed.token")?,
            position: match cfg.positional {
                Positional::Learned => Some(store.index_of("embed.position")?),
                Positional::Sinusoidal => None,
            },
            layers,
            decoder: pair("decoder", "weight", "bias")?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TransformerLm {
    cfg: ModelConfig,
}

/// Deterministically initialized parameters for `cfg`.
pub fn build_model(cfg: &ModelConfig, seed: u64) -> Result<ParamStore> {
    TransformerLm::new(cfg.clone())?.init_params(seed)
}

pub fn perplexity(loss: f64) -> f64 {
    loss.exp()
}

impl TransformerLm {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        let cfg = &self.cfg;
        let mut rng = RngStreams::new(seed).stream(INIT);
        let mut store = ParamStore::new();
        let (v, d, f) = (cfg.vocab_size, cfg.d_model, cfg.d_ffn);

        let mut add = |store: &mut ParamStore, name: String, shape: Vec<usize>, prunable: bool, init: InitDist| {
            let n: usize = shape.iter().product();
            let values = (0..n).map(|_| init.sample(&mut rng)).collect();
            store.register(name, Tensor::new(shape, values)?, prunable, init)
        };
        let uniform = |bound: f64| InitDist::Uniform { bound };
        let xavier = |fan_in: usize, fan_out: usize| uniform((6.0 / (fan_in + fan_out) as f64).sqrt());
        let fan_in = |n: usize| uniform(1.0 / (n as f64).sqrt());

        add(&mut store, "embed.token".into(), vec![v, d], false, uniform(EMBED_INIT))?;
        if cfg.positional == Positional::Learned {
            add(
                &mut store,
                "embed.position".into(),
                vec![cfg.max_seq_len, d],
                false,
                uniform(EMBED_INIT),
            )?;
        }
        for l in 0..cfg.n_layers {
            let p = format!("layers.{l}");
            for proj in ["query", "key", "value"] {
                add(
                    &mut store,
                    format!("{p}.attn.{proj}.weight"),
                    vec![d, d],
                    true,
                    xavier(d, d),
                )?;
                add(
                    &mut store,
                    format!("{p}.attn.{proj}.bias"),
                    vec![d],
                    false,
                    InitDist::Zeros,
                )?;
            }
            add(&mut store, format!("{p}.attn.out.weight"), vec![d, d], true, fan_in(d))?;
            add(
                &mut store,
                format!("{p}.attn.out.bias"),
                vec![d],
                false,
                InitDist::Zeros,
            )?;
            add(&mut store, format!("{p}.norm1.weight"), vec![d], false, InitDist::Ones)?;
            add(&mut store, format!("{p}.norm1.bias"), vec![d], false, InitDist::Zeros)?;
            add(&mut store, format!("{p}.ffn.up.weight"), vec![d, f], true, fan_in(d))?;
            add(&mut store, format!("{p}.ffn.up.bias"), vec![f], false, fan_in(d))?;
            add(&mut store, format!("{p}.ffn.down.weight"), vec![f, d], true, fan_in(f))?;
            add(&mut store, format!("{p}.ffn.down.bias"), vec![d], false, fan_in(f))?;
            add(&mut store, format!("{p}.norm2.weight"), vec![d], false, InitDist::Ones)?;
            add(&mut store, format!("{p}.norm2.bias"), vec![d], false, InitDist::Zeros)?;
        }
        add(
            &mut store,
            "decoder.weight".into(),
            vec![d, v],
            false,
            uniform(DECODER_INIT),
        )?;
        add(&mut store, "decoder.bias".into(), vec![v], false, InitDist::Zeros)?;
        Ok(store)
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.seq > self.cfg.max_seq_len {
            return Err(Error::Shape(format!(
                "sequence length {} exceeds max_seq_len {}",
                batch.seq, self.cfg.max_seq_len
            )));
        }
        let vocab = self.cfg.vocab_size;
        if let Some(bad) = batch.inputs.iter().chain(&batch.targets).find(|&&t| t >= vocab) {
            return Err(Error::Index(format!("token id {bad} >= vocab size {vocab}")));
        }
        Ok(())
    }

    /// Records the forward pass up to `(batch * seq, vocab)` logits.
    pub fn logits(&self, g: &mut Graph, params: &ParamStore, batch: &Batch, mode: &mut Mode) -> Result<NodeId> {
        self.check_batch(batch)?;
        let cfg = &self.cfg;
        let ids = Layout::resolve(params, cfg)?;
        let (b, t, d, h) = (batch.batch, batch.seq, cfg.d_model, cfg.n_heads);
        let p = cfg.dropout;

        let table = g.param(params, ids.token);
        let tok = g.embedding(table, &batch.inputs)?;
        let tok = g.scale(tok, (d as f64).sqrt());
        let positions: Vec<usize> = (0..b).flat_map(|_| 0..t).collect();
        let pos = match ids.position {
            Some(pid) => {
                let table = g.param(params, pid);
                g.embedding(table, &positions)?
            }
            None => g.constant(sinusoidal(&positions, d)),
        };
        let mut x = g.add(tok, pos)?;
        x = dropout(g, x, p, mode)?;

        let linear = |g: &mut Graph, x: NodeId, (w, bias): (usize, usize)| -> Result<NodeId> {
            let w = g.param(params, w);
            let bias = g.param(params, bias);
            let y = g.matmul(x, w)?;
            g.add_row(y, bias)
        };
        let norm = |g: &mut Graph, x: NodeId, (w, bias): (usize, usize)| -> Result<NodeId> {
            let w = g.param(params, w);
            let bias = g.param(params, bias);
            g.layer_norm(x, w, bias, LN_EPS)
        };

        for layer in &ids.layers {
            let q = linear(g, x, layer.q)?;
            let k = linear(g, x, layer.k)?;
            let v = linear(g, x, layer.v)?;
            let q = g.split_heads(q, b, t, h)?;
            let k = g.split_heads(k, b, t, h)?;
            let v = g.split_heads(v, b, t, h)?;
            let scores = g.bmm(q, k, true)?;
            let scores = g.scale(scores, 1.0 / (cfg.head_dim() as f64).sqrt());
            let attn = g.causal_softmax(scores)?;
            let attn = dropout(g, attn, p, mode)?;
            let ctx = g.bmm(attn, v, false)?;
            let ctx = g.merge_heads(ctx, b, t, h)?;
            let out = linear(g, ctx, layer.o)?;
            let out = dropout(g, out, p, mode)?;
            let res = g.add(x, out)?;
            x = norm(g, res, layer.norm1)?;

            let hidden = linear(g, x, layer.up)?;
            let hidden = match cfg.activation {
                Activation::Relu => g.relu(hidden),
                Activation::Gelu => g.gelu(hidden),
            };
            let hidden = dropout(g, hidden, p, mode)?;
            let ff = linear(g, hidden, layer.down)?;
            let ff = dropout(g, ff, p, mode)?;
            let res = g.add(x, ff)?;
            x = norm(g, res, layer.norm2)?;
        }
        linear(g, x, ids.decoder)
    }

    /// Mean next-token cross-entropy of the batch, as a scalar node.
    pub fn forward(&self, g: &mut Graph, params: &ParamStore, batch: &Batch, mode: &mut Mode) -> Result<NodeId> {
        let logits = self.logits(g, params, batch, mode)?;
        g.softmax_cross_entropy(logits, &batch.targets)
    }

    pub fn eval_loss(&self, params: &ParamStore, batch: &Batch) -> Result<f64> {
        let mut g = Graph::new();
        let loss = self.forward(&mut g, params, batch, &mut Mode::Eval)?;
        Ok(g.value(loss).values()[0])
    }

    /// Training-mode forward and backward; gradients are added to `params`.
    pub fn train_loss_and_grad(&self, params: &mut ParamStore, batch: &Batch, rng: &mut StreamRng) -> Result<f64> {
        let mut g = Graph::new();
        let loss = self.forward(&mut g, params, batch, &mut Mode::Train(rng))?;
        g.backward(loss)?;
        g.accumulate_param_grads(params);
        Ok(g.value(loss).values()[0])
    }

    /// Eval-mode cross-entropy at each position, row-major `(batch, seq)`.
    pub fn position_losses(&self, params: &ParamStore, batch: &Batch) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let logits = self.logits(&mut g, params, batch, &mut Mode::Eval)?;
        let vocab = self.cfg.vocab_size;
        Ok(g.value(logits)
            .values()
            .chunks_exact(vocab)
            .zip(&batch.targets)
            .map(|(row, &t)| {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
                lse - row[t]
            })
            .collect())
    }
}

fn dropout(g: &mut Graph, x: NodeId, p: f64, mode: &mut Mode) -> Result<NodeId> {
    match mode {
        Mode::Eval => Ok(x),
        Mode::Train(rng) => g.dropout(x, p, true, *rng),
    }
}

fn sinusoidal(positions: &[usize], d: usize) -> Tensor {
    let mut values = Vec::with_capacity(positions.len() * d);
    for &pos in positions {
        for i in 0..d {
            let freq = (-(10_000f64.ln()) * (2 * (i / 2)) as f64 / d as f64).exp();
            let angle = pos as f64 * freq;
            values.push(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::new(vec![positions.len(), d], values).expect("sinusoidal table shape")
}
