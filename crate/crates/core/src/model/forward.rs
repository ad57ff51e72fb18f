use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, Readout};
use super::params::{AttentionParams, FfnParams, ModelParams, NormParams, TokenizerParams};
use crate::autograd::{NodeId, Tape, Tensor};
use crate::error::{Error, Result};

/// Tape handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardNodes {
    /// `[N, 2]` class logits.
    pub logits: NodeId,
    /// `[N, d_token]` readout vector before the head LayerNorm.
    pub cls: NodeId,
    /// `[N, p + 1, d_token]` output of the last layer.
    pub tokens: NodeId,
    /// Per layer, `[N, heads, p + 1, p + 1]` attention weights (empty for
    /// the feed-forward architecture).
    pub attention: Vec<NodeId>,
}

/// Representation aligned by the MMD term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReprChoice {
    /// Readout vector (the `[CLS]` token for the transformer).
    #[default]
    Cls,
    /// Mean over all final-layer tokens.
    MeanTokens,
    /// All final-layer tokens flattened into one vector.
    AllTokens,
}

/// Embeds `x: [N, p]` as `[N, p + 1, d]`, with token 0 fed the constant 1.
pub fn tokenize(tape: &mut Tape, x: &Tensor, params: &TokenizerParams<NodeId>) -> Result<NodeId> {
    let t = tape.shape(params.weight)[0];
    if x.ndim() != 2 || x.shape()[1] + 1 != t {
        return Err(Error::shape(format!(
            "input of shape {:?} does not match a tokenizer for {} metrics",
            x.shape(),
            t - 1
        )));
    }
    let n = x.shape()[0];
    let mut data = Vec::with_capacity(n * t);
    for i in 0..n {
        data.push(1.0);
        data.extend_from_slice(x.row(i));
    }
    let xc = tape.constant(Tensor::new(vec![n, t, 1], data)?);
    let scaled = tape.mul(xc, params.weight)?;
    tape.add(scaled, params.bias)
}

fn norm(tape: &mut Tape, x: NodeId, p: &NormParams<NodeId>, eps: f64) -> Result<NodeId> {
    tape.layer_norm(x, p.gain, p.bias, eps)
}

/// Pre-norm multi-head self-attention block with residual connection.
/// Returns the block output and the attention weights.
pub fn attention_layer<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: NodeId,
    params: &AttentionParams<NodeId>,
    config: &ModelConfig,
    training: bool,
    rng: &mut R,
) -> Result<(NodeId, NodeId)> {
    let shape = tape.shape(x).to_vec();
    let (n, t, d) = (shape[0], shape[1], shape[2]);
    let (heads, dk) = (config.n_heads, config.head_dim());
    let h = match &params.norm {
        Some(p) => norm(tape, x, p, config.layer_norm_eps)?,
        None => x,
    };
    let split = |tape: &mut Tape, w: NodeId, axes: &[usize]| -> Result<NodeId> {
        let proj = tape.matmul(h, w)?;
        let proj = tape.reshape(proj, &[n, t, heads, dk])?;
        tape.permute(proj, axes)
    };
    let q = split(tape, params.w_q, &[0, 2, 1, 3])?;
    let k_t = split(tape, params.w_k, &[0, 2, 3, 1])?;
    let v = split(tape, params.w_v, &[0, 2, 1, 3])?;
    let scores = tape.matmul(q, k_t)?;
    let scores = tape.mul_scalar(scores, 1.0 / (dk as f64).sqrt());
    let probs = tape.softmax(scores, 3)?;
    let ctx = tape.matmul(probs, v)?;
    let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = tape.reshape(ctx, &[n, t, d])?;
    let out = tape.matmul(ctx, params.w_o)?;
    let out = tape.dropout(out, config.dropout_rate, training, rng)?;
    Ok((tape.add(x, out)?, probs))
}

/// `x + Dropout(W2 ReGLU(W1 LayerNorm(x) + b1) + b2)`.
pub fn ffn_block<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: NodeId,
    params: &FfnParams<NodeId>,
    config: &ModelConfig,
    training: bool,
    rng: &mut R,
) -> Result<NodeId> {
    let h = norm(tape, x, &params.norm, config.layer_norm_eps)?;
    let h = tape.matmul(h, params.w1)?;
    let h = tape.add(h, params.b1)?;
    let h = tape.reglu(h)?;
    let h = tape.matmul(h, params.w2)?;
    let h = tape.add(h, params.b2)?;
    let h = tape.dropout(h, config.dropout_rate, training, rng)?;
    tape.add(x, h)
}

/// Records the full model on `tape`: tokenizer, layer stack, readout,
/// final LayerNorm and linear head.
pub fn forward_on_tape<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: &Tensor,
    params: &ModelParams<NodeId>,
    config: &ModelConfig,
    training: bool,
    rng: &mut R,
) -> Result<ForwardNodes> {
    if params.layers.len() != config.n_layers {
        return Err(Error::shape(format!(
            "parameters hold {} layers, config expects {}",
            params.layers.len(),
            config.n_layers
        )));
    }
    let mut h = tokenize(tape, x, &params.tokenizer)?;
    let mut attention = Vec::new();
    for layer in &params.layers {
        match (&layer.attention, config.has_attention()) {
            (Some(a), true) => {
                let (out, probs) = attention_layer(tape, h, a, config, training, rng)?;
                h = out;
                attention.push(probs);
            }
            (None, false) => {}
            _ => return Err(Error::shape("attention parameters do not match the configured architecture")),
        }
        h = ffn_block(tape, h, &layer.ffn, config, training, rng)?;
    }
    let n = x.shape()[0];
    let cls = match config.readout() {
        Readout::Cls => {
            let first = tape.slice(h, 1, 0, 1)?;
            tape.reshape(first, &[n, config.d_token])?
        }
        Readout::MeanTokens => tape.mean_axis(h, 1)?,
    };
    let z = norm(tape, cls, &params.head.norm, config.layer_norm_eps)?;
    let z = tape.matmul(z, params.head.weight)?;
    let logits = tape.add(z, params.head.bias)?;
    Ok(ForwardNodes { logits, cls, tokens: h, attention })
}

/// Representation of each row used for distribution alignment.
pub fn representation(tape: &mut Tape, out: &ForwardNodes, choice: ReprChoice) -> Result<NodeId> {
    match choice {
        ReprChoice::Cls => Ok(out.cls),
        ReprChoice::MeanTokens => tape.mean_axis(out.tokens, 1),
        ReprChoice::AllTokens => {
            let s = tape.shape(out.tokens).to_vec();
            tape.reshape(out.tokens, &[s[0], s[1] * s[2]])
        }
    }
}

/// Runs the model and returns `(logits [N, 2], readout [N, d_token])`.
pub fn forward<R: Rng + ?Sized>(
    x: &Tensor,
    params: &ModelParams,
    config: &ModelConfig,
    training: bool,
    rng: &mut R,
) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let out = forward_on_tape(&mut tape, x, &bound, config, training, rng)?;
    Ok((tape.value(out.logits).clone(), tape.value(out.cls).clone()))
}

/// Forward pass of the attention-free variant. Fails if `config` enables
/// attention.
pub fn baseline_forward<R: Rng + ?Sized>(
    x: &Tensor,
    params: &ModelParams,
    config: &ModelConfig,
    training: bool,
    rng: &mut R,
) -> Result<(Tensor, Tensor)> {
    if config.has_attention() {
        return Err(Error::config("baseline_forward requires the feed-forward architecture"));
    }
    forward(x, params, config, training, rng)
}

/// Probability of the ARB-prone class for each row of `[N, 2]` logits.
pub fn positive_probabilities(logits: &Tensor) -> Vec<f64> {
    (0..logits.shape()[0])
        .map(|i| {
            let r = logits.row(i);
            // softmax over two classes
            1.0 / (1.0 + (r[0] - r[1]).exp())
        })
        .collect()
}

/// Label 1 iff the ARB-prone probability strictly exceeds `threshold`.
pub fn predict(logits: &Tensor, threshold: f64) -> Vec<u8> {
    positive_probabilities(logits).into_iter().map(|p| u8::from(p > threshold)).collect()
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;
