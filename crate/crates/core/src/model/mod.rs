//! Bidirectional transformer encoder plus a linear two-class token head.
//!
//! The encoder is post-norm: embeddings (token + learned position) pass
//! through a layer norm to give layer 0, then every block applies
//! `x = LN(x + Attn(x))` and `x = LN(x + FFN(x))`. All `L + 1` layer outputs
//! are returned so over-smoothing can be measured per layer.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Index of the preserve class in the head's two logits.
pub const PRESERVE_CLASS: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 4,
            dim: 64,
            heads: 4,
            ffn_dim: 256,
            max_len: 256,
            vocab_size: 2,
            dropout: 0.1,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.layers == 0 {
            return fail("at least one encoder layer is required".into());
        }
        if self.heads == 0 || self.dim == 0 || !self.dim.is_multiple_of(self.heads) {
            return fail(format!(
                "model width {} must be a positive multiple of {} heads",
                self.dim, self.heads
            ));
        }
        if self.ffn_dim == 0 || self.max_len == 0 || self.vocab_size < 2 {
            return fail("feed-forward width, max length, and vocabulary must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormWeights<T> {
    pub gain: T,
    pub bias: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T> {
    pub query: T,
    pub query_bias: T,
    pub key: T,
    pub key_bias: T,
    pub value: T,
    pub value_bias: T,
    pub output: T,
    pub output_bias: T,
    pub attn_norm: NormWeights<T>,
    pub ffn_in: T,
    pub ffn_in_bias: T,
    pub ffn_out: T,
    pub ffn_out_bias: T,
    pub ffn_norm: NormWeights<T>,
}

/// Encoder (φ) and classifier (ψ) weights, generic over the leaf type so the
/// same layout holds tensors, tape variables, or shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    pub token_embedding: T,
    pub position_embedding: T,
    pub embed_norm: NormWeights<T>,
    pub layers: Vec<LayerWeights<T>>,
    pub head: T,
    pub head_bias: T,
}

pub type ModelParams = Weights<Tensor>;

impl<T> NormWeights<T> {
    fn map_named<U>(&self, prefix: &str, f: &mut impl FnMut(&str, &T) -> U) -> NormWeights<U> {
        NormWeights {
            gain: f(&format!("{prefix}.gain"), &self.gain),
            bias: f(&format!("{prefix}.bias"), &self.bias),
        }
    }
}

impl<T> LayerWeights<T> {
    fn map_named<U>(&self, prefix: &str, f: &mut impl FnMut(&str, &T) -> U) -> LayerWeights<U> {
        let mut g = |name: &str, t: &T| f(&format!("{prefix}.{name}"), t);
        LayerWeights {
            query: g("attn.query", &self.query),
            query_bias: g("attn.query_bias", &self.query_bias),
            key: g("attn.key", &self.key),
            key_bias: g("attn.key_bias", &self.key_bias),
            value: g("attn.value", &self.value),
            value_bias: g("attn.value_bias", &self.value_bias),
            output: g("attn.output", &self.output),
            output_bias: g("attn.output_bias", &self.output_bias),
            attn_norm: self.attn_norm.map_named(&format!("{prefix}.attn_norm"), f),
            ffn_in: f(&format!("{prefix}.ffn.in"), &self.ffn_in),
            ffn_in_bias: f(&format!("{prefix}.ffn.in_bias"), &self.ffn_in_bias),
            ffn_out: f(&format!("{prefix}.ffn.out"), &self.ffn_out),
            ffn_out_bias: f(&format!("{prefix}.ffn.out_bias"), &self.ffn_out_bias),
            ffn_norm: self.ffn_norm.map_named(&format!("{prefix}.ffn_norm"), f),
        }
    }
}

impl<T> Weights<T> {
    /// Applies `f` to every leaf in a fixed order, passing its dotted name.
    pub fn map_named<U>(&self, mut f: impl FnMut(&str, &T) -> U) -> Weights<U> {
        Weights {
            token_embedding: f("embed.token", &self.token_embedding),
            position_embedding: f("embed.position", &self.position_embedding),
            embed_norm: self.embed_norm.map_named("embed.norm", &mut f),
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| l.map_named(&format!("layers.{i}"), &mut f))
                .collect(),
            head: f("head.weight", &self.head),
            head_bias: f("head.bias", &self.head_bias),
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Weights<U> {
        self.map_named(|_, t| f(t))
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.map_named(|n, _| out.push(n.to_string()));
        out
    }
}

macro_rules! leaf_list {
    ($self:ident, $($r:tt)*) => {{
        let mut out = vec![$($r)* $self.token_embedding, $($r)* $self.position_embedding];
        out.push($($r)* $self.embed_norm.gain);
        out.push($($r)* $self.embed_norm.bias);
        for l in $($r)* $self.layers {
            out.extend([
                $($r)* l.query,
                $($r)* l.query_bias,
                $($r)* l.key,
                $($r)* l.key_bias,
                $($r)* l.value,
                $($r)* l.value_bias,
                $($r)* l.output,
                $($r)* l.output_bias,
                $($r)* l.attn_norm.gain,
                $($r)* l.attn_norm.bias,
                $($r)* l.ffn_in,
                $($r)* l.ffn_in_bias,
                $($r)* l.ffn_out,
                $($r)* l.ffn_out_bias,
                $($r)* l.ffn_norm.gain,
                $($r)* l.ffn_norm.bias,
            ]);
        }
        out.push($($r)* $self.head);
        out.push($($r)* $self.head_bias);
        out
    }};
}

impl<T> Weights<T> {
    /// Leaves in the same order as [`Weights::map_named`].
    pub fn leaves(&self) -> Vec<&T> {
        leaf_list!(self, &)
    }

    pub fn leaves_mut(&mut self) -> Vec<&mut T> {
        leaf_list!(self, &mut)
    }
}

/// Shapes of every parameter for `config`.
pub fn layout(config: &ModelConfig) -> Weights<Vec<usize>> {
    let (d, f) = (config.dim, config.ffn_dim);
    let norm = || NormWeights {
        gain: vec![d],
        bias: vec![d],
    };
    Weights {
        token_embedding: vec![config.vocab_size, d],
        position_embedding: vec![config.max_len, d],
        embed_norm: norm(),
        layers: (0..config.layers)
            .map(|_| LayerWeights {
                query: vec![d, d],
                query_bias: vec![d],
                key: vec![d, d],
                key_bias: vec![d],
                value: vec![d, d],
                value_bias: vec![d],
                output: vec![d, d],
                output_bias: vec![d],
                attn_norm: norm(),
                ffn_in: vec![d, f],
                ffn_in_bias: vec![f],
                ffn_out: vec![f, d],
                ffn_out_bias: vec![d],
                ffn_norm: norm(),
            })
            .collect(),
        head: vec![d, 2],
        head_bias: vec![2],
    }
}

impl ModelParams {
    /// Matrices and embeddings uniform in `±1/√fan_in`, biases zero, norm
    /// gains one. Deterministic in `config.init_seed`.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        Ok(layout(config).map_named(|name, shape| {
            if name.ends_with("gain") {
                Tensor::filled(shape, 1.0)
            } else if shape.len() == 1 {
                Tensor::zeros(shape)
            } else {
                let fan_in = if name.starts_with("embed") { shape[1] } else { shape[0] };
                let bound = 1.0 / (fan_in as f64).sqrt();
                let n = shape.iter().product();
                let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
                Tensor::from_parts(shape.clone(), data)
            }
        }))
    }

    pub fn parameter_count(&self) -> usize {
        self.leaves().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.leaves().iter().all(|t| t.is_finite())
    }

    /// Places every tensor on `tape` as a leaf.
    pub fn register(&self, tape: &mut Tape) -> Weights<Var> {
        self.map(|t| tape.leaf(t.clone()))
    }
}

/// Inverted dropout with a caller-owned RNG.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl Dropout<'_> {
    fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let n = tape.value(x).len();
        let mask = (0..n)
            .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        tape.mul_const(x, mask)
    }
}

fn maybe_dropout(tape: &mut Tape, x: Var, dropout: &mut Option<&mut Dropout>) -> Result<Var> {
    match dropout {
        Some(d) => d.apply(tape, x),
        None => Ok(x),
    }
}

fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

/// Checks length and id range before running the encoder.
pub fn check_input(config: &ModelConfig, ids: &[usize]) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::dim("forward", "empty sequence"));
    }
    if ids.len() > config.max_len {
        return Err(Error::SequenceTooLong {
            len: ids.len(),
            max: config.max_len,
        });
    }
    if let Some(&id) = ids.iter().find(|&&id| id >= config.vocab_size) {
        return Err(Error::TokenOutOfRange {
            id,
            vocab_size: config.vocab_size,
        });
    }
    Ok(())
}

/// Runs the encoder on `tape`, returning the `L + 1` layer outputs
/// (index 0 is the normalized embedding).
pub fn encode_on_tape(
    tape: &mut Tape,
    w: &Weights<Var>,
    config: &ModelConfig,
    ids: &[usize],
    mut dropout: Option<&mut Dropout>,
) -> Result<Vec<Var>> {
    check_input(config, ids)?;
    let n = ids.len();
    let positions: Vec<usize> = (0..n).collect();
    let tok = tape.embedding(w.token_embedding, ids)?;
    let pos = tape.embedding(w.position_embedding, &positions)?;
    let sum = tape.add(tok, pos)?;
    let mut x = tape.layer_norm(sum, w.embed_norm.gain, w.embed_norm.bias)?;
    x = maybe_dropout(tape, x, &mut dropout)?;

    let mut outputs = Vec::with_capacity(config.layers + 1);
    outputs.push(x);
    let dh = config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    for layer in &w.layers {
        let q = linear(tape, x, layer.query, layer.query_bias)?;
        let k = linear(tape, x, layer.key, layer.key_bias)?;
        let v = linear(tape, x, layer.value, layer.value_bias)?;
        let mut heads = Vec::with_capacity(config.heads);
        for h in 0..config.heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax(scores);
            heads.push(tape.matmul(attn, vh)?);
        }
        let merged = tape.concat_cols(&heads)?;
        let attn_out = linear(tape, merged, layer.output, layer.output_bias)?;
        let attn_out = maybe_dropout(tape, attn_out, &mut dropout)?;
        let res = tape.add(x, attn_out)?;
        x = tape.layer_norm(res, layer.attn_norm.gain, layer.attn_norm.bias)?;

        let hidden = linear(tape, x, layer.ffn_in, layer.ffn_in_bias)?;
        let hidden = tape.gelu(hidden);
        let ffn_out = linear(tape, hidden, layer.ffn_out, layer.ffn_out_bias)?;
        let ffn_out = maybe_dropout(tape, ffn_out, &mut dropout)?;
        let res = tape.add(x, ffn_out)?;
        x = tape.layer_norm(res, layer.ffn_norm.gain, layer.ffn_norm.bias)?;
        outputs.push(x);
    }
    Ok(outputs)
}

/// Per-token class logits `[n, 2]` from the last layer.
pub fn head_on_tape(tape: &mut Tape, w: &Weights<Var>, last: Var) -> Result<Var> {
    linear(tape, last, w.head, w.head_bias)
}

/// Token representations `H^0 ..= H^L` for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivations {
    layers: Vec<Tensor>,
}

impl LayerActivations {
    pub fn new(layers: Vec<Tensor>) -> Self {
        LayerActivations { layers }
    }

    /// Number of matrices, i.e. `L + 1`.
    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layer(&self, l: usize) -> &Tensor {
        &self.layers[l]
    }

    pub fn last(&self) -> &Tensor {
        self.layers.last().expect("at least the embedding layer")
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter()
    }
}

/// Deterministic (dropout-free) forward pass.
pub fn forward(params: &ModelParams, config: &ModelConfig, ids: &[usize]) -> Result<LayerActivations> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let outs = encode_on_tape(&mut tape, &vars, config, ids, None)?;
    Ok(LayerActivations::new(
        outs.into_iter().map(|v| tape.value(v).clone()).collect(),
    ))
}

/// Preserve probability from a pair of logits `[discard, preserve]`.
pub fn preserve_probability(logits: [f64; 2]) -> f64 {
    let mut row = logits;
    ops::softmax_in_place(&mut row);
    row[PRESERVE_CLASS]
}

/// Preserve probability for a single last-layer row `h`.
pub fn classify(params: &ModelParams, h: &[f64]) -> Result<f64> {
    let d = params.head.shape()[0];
    if h.len() != d {
        return Err(Error::dim("classify", format!("{} vs width {d}", h.len())));
    }
    let mut logits = [params.head_bias.data()[0], params.head_bias.data()[1]];
    for (i, &x) in h.iter().enumerate() {
        logits[0] += x * params.head.get(i, 0);
        logits[1] += x * params.head.get(i, 1);
    }
    Ok(preserve_probability(logits))
}

/// Config and weights together.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn init(config: ModelConfig) -> Result<Self> {
        let params = ModelParams::init(&config)?;
        Ok(Model { config, params })
    }

    pub fn forward(&self, ids: &[usize]) -> Result<LayerActivations> {
        forward(&self.params, &self.config, ids)
    }

    /// Activations plus the preserve probability of each token.
    pub fn predict(&self, ids: &[usize]) -> Result<(LayerActivations, Vec<f64>)> {
        let acts = self.forward(ids)?;
        let last = acts.last();
        let probs = (0..last.rows())
            .map(|i| classify(&self.params, last.row(i)))
            .collect::<Result<Vec<_>>>()?;
        Ok((acts, probs))
    }
}
