use rand::Rng;

use super::config::{ModelConfig, N_CLASSES};
use crate::autograd::{NodeId, Tape, Tensor};
use crate::error::{Error, Result};

/// LayerNorm gain and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct NormParams<T = Tensor> {
    pub gain: T,
    pub bias: T,
}

/// Per-feature linear embedding. Row 0 embeds the constant `[CLS]` input,
/// row `j + 1` embeds metric `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenizerParams<T = Tensor> {
    pub weight: T,
    pub bias: T,
}

/// Multi-head attention weights. Columns `h * d_k .. (h + 1) * d_k` of the
/// query, key and value matrices are the projections of head `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<T = Tensor> {
    /// Absent in the first layer, whose input is the raw token embedding.
    pub norm: Option<NormParams<T>>,
    pub w_q: T,
    pub w_k: T,
    pub w_v: T,
    pub w_o: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FfnParams<T = Tensor> {
    pub norm: NormParams<T>,
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T = Tensor> {
    pub attention: Option<AttentionParams<T>>,
    pub ffn: FfnParams<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams<T = Tensor> {
    pub norm: NormParams<T>,
    pub weight: T,
    pub bias: T,
}

/// All trainable parameters. Generic so the same tree can hold tensors,
/// tape handles or gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = Tensor> {
    pub tokenizer: TokenizerParams<T>,
    pub layers: Vec<LayerParams<T>>,
    pub head: HeadParams<T>,
}

impl<T> NormParams<T> {
    fn map<U>(&self, prefix: &str, f: &mut impl FnMut(&str, &T) -> U) -> NormParams<U> {
        NormParams { gain: f(&format!("{prefix}.gain"), &self.gain), bias: f(&format!("{prefix}.bias"), &self.bias) }
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut T>) {
        out.push(&mut self.gain);
        out.push(&mut self.bias);
    }
}

impl<T> ModelParams<T> {
    /// Applies `f` to every parameter in a fixed order, passing its dotted
    /// name.
    pub fn map<U>(&self, mut f: impl FnMut(&str, &T) -> U) -> ModelParams<U> {
        let tokenizer = TokenizerParams {
            weight: f("tokenizer.weight", &self.tokenizer.weight),
            bias: f("tokenizer.bias", &self.tokenizer.bias),
        };
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(l, layer)| {
                let attention = layer.attention.as_ref().map(|a| {
                    let p = format!("layers.{l}.attention");
                    AttentionParams {
                        norm: a.norm.as_ref().map(|n| n.map(&format!("{p}.norm"), &mut f)),
                        w_q: f(&format!("{p}.w_q"), &a.w_q),
                        w_k: f(&format!("{p}.w_k"), &a.w_k),
                        w_v: f(&format!("{p}.w_v"), &a.w_v),
                        w_o: f(&format!("{p}.w_o"), &a.w_o),
                    }
                });
                let p = format!("layers.{l}.ffn");
                let ffn = FfnParams {
                    norm: layer.ffn.norm.map(&format!("{p}.norm"), &mut f),
                    w1: f(&format!("{p}.w1"), &layer.ffn.w1),
                    b1: f(&format!("{p}.b1"), &layer.ffn.b1),
                    w2: f(&format!("{p}.w2"), &layer.ffn.w2),
                    b2: f(&format!("{p}.b2"), &layer.ffn.b2),
                };
                LayerParams { attention, ffn }
            })
            .collect();
        let head = HeadParams {
            norm: self.head.norm.map("head.norm", &mut f),
            weight: f("head.weight", &self.head.weight),
            bias: f("head.bias", &self.head.bias),
        };
        ModelParams { tokenizer, layers, head }
    }

    /// `(name, value)` pairs in traversal order.
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut names = Vec::new();
        self.map(|name, _| names.push(name.to_owned()));
        names.into_iter().zip(self.values()).collect()
    }

    fn visit_refs<'a>(&'a self, out: &mut Vec<&'a T>) {
        out.push(&self.tokenizer.weight);
        out.push(&self.tokenizer.bias);
        for layer in &self.layers {
            if let Some(a) = &layer.attention {
                if let Some(n) = &a.norm {
                    out.push(&n.gain);
                    out.push(&n.bias);
                }
                out.extend([&a.w_q, &a.w_k, &a.w_v, &a.w_o]);
            }
            let f = &layer.ffn;
            out.extend([&f.norm.gain, &f.norm.bias, &f.w1, &f.b1, &f.w2, &f.b2]);
        }
        out.extend([&self.head.norm.gain, &self.head.norm.bias, &self.head.weight, &self.head.bias]);
    }

    /// Parameters in traversal order.
    pub fn values(&self) -> Vec<&T> {
        let mut out = Vec::new();
        self.visit_refs(&mut out);
        out
    }

    /// Same tree shape, filled from `flat` in traversal order.
    pub fn with_values<U: Clone>(&self, flat: &[U]) -> Result<ModelParams<U>> {
        let n = self.values().len();
        if flat.len() != n {
            return Err(Error::shape(format!("{} values for {n} parameters", flat.len())));
        }
        let mut it = flat.iter();
        Ok(self.map(|_, _| it.next().expect("length checked").clone()))
    }

    pub fn values_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::new();
        out.push(&mut self.tokenizer.weight);
        out.push(&mut self.tokenizer.bias);
        for layer in &mut self.layers {
            if let Some(a) = &mut layer.attention {
                if let Some(n) = &mut a.norm {
                    n.collect_mut(&mut out);
                }
                out.extend([&mut a.w_q, &mut a.w_k, &mut a.w_v, &mut a.w_o]);
            }
            let f = &mut layer.ffn;
            f.norm.collect_mut(&mut out);
            out.extend([&mut f.w1, &mut f.b1, &mut f.w2, &mut f.b2]);
        }
        self.head.norm.collect_mut(&mut out);
        out.extend([&mut self.head.weight, &mut self.head.bias]);
        out
    }
}

impl ModelParams<Tensor> {
    /// Records every parameter on `tape` as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> ModelParams<NodeId> {
        self.map(|_, t| tape.param(t.clone()))
    }

    pub fn n_scalars(&self) -> usize {
        self.values().iter().map(|t| t.len()).sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.values().iter().map(|t| t.sq_norm()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values().iter().all(|t| t.all_finite())
    }

    /// Zero tensors with the shapes `config` prescribes.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(build(config, &mut |shape, _| Tensor::zeros(shape.to_vec())))
    }

    /// Reorders the metric embeddings so that new metric `j` uses old
    /// metric `perm[j]`'s weights. `[CLS]` is untouched.
    pub fn permute_features(&self, perm: &[usize]) -> Result<Self> {
        let w = &self.tokenizer.weight;
        let (rows, d) = (w.shape()[0], w.shape()[1]);
        let mut sorted = perm.to_vec();
        sorted.sort_unstable();
        if sorted != (0..rows - 1).collect::<Vec<_>>() {
            return Err(Error::shape(format!("{perm:?} is not a permutation of {} metrics", rows - 1)));
        }
        let order: Vec<usize> = std::iter::once(0).chain(perm.iter().map(|j| j + 1)).collect();
        let pick = |t: &Tensor| {
            let data = order.iter().flat_map(|&r| t.data()[r * d..(r + 1) * d].iter().copied()).collect();
            Tensor::new(vec![rows, d], data).expect("same shape")
        };
        let mut out = self.clone();
        out.tokenizer = TokenizerParams { weight: pick(&self.tokenizer.weight), bias: pick(&self.tokenizer.bias) };
        Ok(out)
    }
}

/// Which kind of tensor an initializer is asked for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Weight matrix or embedding, with its fan-in.
    Weight { fan_in: usize },
    Bias,
    NormGain,
    NormBias,
}

fn build(config: &ModelConfig, make: &mut impl FnMut(&[usize], ParamKind) -> Tensor) -> ModelParams {
    let d = config.d_token;
    let h = config.ffn_hidden();
    let t = config.n_tokens();
    let norm = |make: &mut dyn FnMut(&[usize], ParamKind) -> Tensor| NormParams {
        gain: make(&[d], ParamKind::NormGain),
        bias: make(&[d], ParamKind::NormBias),
    };
    let tokenizer = TokenizerParams {
        weight: make(&[t, d], ParamKind::Weight { fan_in: d }),
        bias: make(&[t, d], ParamKind::Bias),
    };
    let layers = (0..config.n_layers)
        .map(|l| {
            let attention = config.has_attention().then(|| AttentionParams {
                norm: (l > 0).then(|| norm(make)),
                w_q: make(&[d, d], ParamKind::Weight { fan_in: d }),
                w_k: make(&[d, d], ParamKind::Weight { fan_in: d }),
                w_v: make(&[d, d], ParamKind::Weight { fan_in: d }),
                w_o: make(&[d, d], ParamKind::Weight { fan_in: d }),
            });
            let ffn = FfnParams {
                norm: norm(make),
                w1: make(&[d, 2 * h], ParamKind::Weight { fan_in: d }),
                b1: make(&[2 * h], ParamKind::Bias),
                w2: make(&[h, d], ParamKind::Weight { fan_in: h }),
                b2: make(&[d], ParamKind::Bias),
            };
            LayerParams { attention, ffn }
        })
        .collect();
    let head = HeadParams {
        norm: norm(make),
        weight: make(&[d, N_CLASSES], ParamKind::Weight { fan_in: d }),
        bias: make(&[N_CLASSES], ParamKind::Bias),
    };
    ModelParams { tokenizer, layers, head }
}

/// Kaiming-uniform fan-in initialization (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`)
/// for weights and embeddings, zero biases, unit LayerNorm gains.
pub fn init_params<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<ModelParams> {
    config.validate()?;
    Ok(build(config, &mut |shape, kind| match kind {
        ParamKind::Weight { fan_in } => {
            let bound = (6.0 / fan_in as f64).sqrt();
            let n = shape.iter().product();
            Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-bound..bound)).collect()).expect("shape")
        }
        ParamKind::Bias | ParamKind::NormBias => Tensor::zeros(shape.to_vec()),
        ParamKind::NormGain => Tensor::ones(shape.to_vec()),
    }))
}

/// Bound of the uniform initializer for a weight with the given fan-in.
pub fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}
