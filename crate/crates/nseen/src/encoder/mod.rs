//! Character-level Siamese encoder: a stack of bidirectional LSTM layers
//! over character embeddings, pooled and projected to a fixed-size vector.
//!
//! Both towers of the Siamese comparison are the same function over the same
//! parameters, so an embedding is tower-independent by construction. All
//! arithmetic is 64-bit; the analytic gradients in [`backward`] are checked
//! against central finite differences ([`numerical_gradient`]).

mod backward;
mod checkpoint;
mod forward;

pub use backward::{backward, gradient_relative_error, numerical_gradient, pair_loss, PairGradient};
pub use checkpoint::{load_model, model_fingerprint, save_model};
pub use forward::forward;

use std::collections::{BTreeSet, HashMap};

use ndarray::{Array1, Array2};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::refset::ReferenceSet;
use crate::{Error, Result};

/// A name's fixed-size embedding vector.
pub type Embedding = Array1<f64>;

/// Character → dense index map with an unknown-character fallback.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharVocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
    max_sequence_length: usize,
}

impl CharVocab {
    /// Collects every distinct character across the reference names and
    /// assigns dense indices sorted by code point; the unknown token takes
    /// the last index.
    pub fn build(reference: &ReferenceSet, max_sequence_length: usize) -> Result<Self> {
        if reference.is_empty() {
            return Err(Error::EmptyInput("cannot build vocab from empty reference".into()));
        }
        if max_sequence_length == 0 {
            return Err(Error::InvalidArgument("max_sequence_length must be ≥ 1".into()));
        }
        let mut seen = BTreeSet::new();
        for (_, name) in reference.name_pairs() {
            seen.extend(name.chars());
        }
        Ok(Self::from_chars(seen.into_iter().collect(), max_sequence_length))
    }

    pub(crate) fn from_chars(chars: Vec<char>, max_sequence_length: usize) -> Self {
        let index = chars.iter().copied().zip(0..).collect();
        CharVocab {
            chars,
            index,
            max_sequence_length,
        }
    }

    /// Total vocabulary size including the unknown token.
    pub fn size(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn unknown_index(&self) -> usize {
        self.chars.len()
    }

    pub fn max_sequence_length(&self) -> usize {
        self.max_sequence_length
    }

    pub fn char_index(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or_else(|| self.unknown_index())
    }

    /// Encodes a name as character indices, truncated to the maximum
    /// sequence length. Errors if nothing remains.
    pub fn encode(&self, name: &str) -> Result<Vec<usize>> {
        let ids: Vec<usize> = name
            .chars()
            .take(self.max_sequence_length)
            .map(|c| self.char_index(c))
            .collect();
        if ids.is_empty() {
            return Err(Error::EmptyName);
        }
        Ok(ids)
    }

    pub(crate) fn chars(&self) -> &[char] {
        &self.chars
    }
}

/// How the per-position recurrent outputs become one fixed vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    /// Concatenate the final forward and final backward hidden states of the
    /// top layer.
    LastHidden,
    /// Mean of the concatenated per-position outputs of the top layer.
    Mean,
}

impl Pooling {
    pub fn as_str(self) -> &'static str {
        match self {
            Pooling::LastHidden => "last",
            Pooling::Mean => "mean",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "last" => Ok(Pooling::LastHidden),
            "mean" => Ok(Pooling::Mean),
            other => Err(Error::InvalidArgument(format!("unknown pooling {other:?}"))),
        }
    }
}

/// Encoder hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    pub char_embed_dim: usize,
    /// Hidden size per direction.
    pub hidden_dim: usize,
    pub num_recurrent_layers: usize,
    pub output_dim: usize,
    pub max_sequence_length: usize,
    pub pooling: Pooling,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            char_embed_dim: 32,
            hidden_dim: 64,
            num_recurrent_layers: 4,
            output_dim: 128,
            max_sequence_length: 128,
            pooling: Pooling::LastHidden,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        for (what, v) in [
            ("char_embed_dim", self.char_embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("num_recurrent_layers", self.num_recurrent_layers),
            ("output_dim", self.output_dim),
            ("max_sequence_length", self.max_sequence_length),
        ] {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{what} must be ≥ 1")));
            }
        }
        Ok(())
    }

    /// Input width of recurrent layer `l`: character embeddings feed the
    /// first layer, both directions of the previous layer feed the rest.
    pub(crate) fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.char_embed_dim
        } else {
            2 * self.hidden_dim
        }
    }
}

/// One direction of one recurrent layer. Gate rows are packed in the order
/// input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    /// `4H × D`
    pub w_input: Array2<f64>,
    /// `4H × H`
    pub w_recur: Array2<f64>,
    /// `4H`
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmLayer {
    pub fwd: LstmCell,
    pub bwd: LstmCell,
}

/// All trainable parameters. The same structure doubles as a gradient
/// container: [`backward`] returns one with identical shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// `V × E`
    pub char_embed: Array2<f64>,
    pub layers: Vec<BiLstmLayer>,
    /// `O × 2H`
    pub out_weight: Array2<f64>,
    /// `O`
    pub out_bias: Array1<f64>,
}

/// A trained encoder: everything needed to embed a name.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub config: EncoderConfig,
    pub vocab: CharVocab,
    pub params: EncoderParams,
}

impl EncoderModel {
    pub fn embed(&self, name: &str) -> Result<Embedding> {
        forward(&self.params, &self.vocab, self.config.pooling, name)
    }
}

/// Draws initial parameters from per-matrix scaled uniform distributions
/// (bound `sqrt(6 / (fan_in + fan_out))`); forget-gate biases start at 1.
pub fn init_params(config: &EncoderConfig, vocab: &CharVocab, seed: u64) -> Result<EncoderParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = config.hidden_dim;

    let mut glorot = |rows: usize, cols: usize, fan_in: usize, fan_out: usize| -> Array2<f64> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        Array2::from_shape_fn((rows, cols), |_| dist.sample(&mut rng))
    };

    let char_embed = glorot(vocab.size(), config.char_embed_dim, vocab.size(), config.char_embed_dim);
    let mut layers = Vec::with_capacity(config.num_recurrent_layers);
    for l in 0..config.num_recurrent_layers {
        let d = config.layer_input_dim(l);
        let mut cell = || -> LstmCell {
            let w_input = glorot(4 * h, d, d, 4 * h);
            let w_recur = glorot(4 * h, h, h, 4 * h);
            let mut bias = Array1::zeros(4 * h);
            bias.slice_mut(ndarray::s![h..2 * h]).fill(1.0);
            LstmCell {
                w_input,
                w_recur,
                bias,
            }
        };
        let fwd = cell();
        let bwd = cell();
        layers.push(BiLstmLayer { fwd, bwd });
    }
    let out_weight = glorot(config.output_dim, 2 * h, 2 * h, config.output_dim);
    let out_bias = Array1::zeros(config.output_dim);

    Ok(EncoderParams {
        char_embed,
        layers,
        out_weight,
        out_bias,
    })
}

impl EncoderParams {
    /// Zero-valued parameters shaped for a config and vocabulary size.
    pub fn zeros(config: &EncoderConfig, vocab_size: usize) -> Self {
        let h = config.hidden_dim;
        EncoderParams {
            char_embed: Array2::zeros((vocab_size, config.char_embed_dim)),
            layers: (0..config.num_recurrent_layers)
                .map(|l| {
                    let d = config.layer_input_dim(l);
                    let cell = || LstmCell {
                        w_input: Array2::zeros((4 * h, d)),
                        w_recur: Array2::zeros((4 * h, h)),
                        bias: Array1::zeros(4 * h),
                    };
                    BiLstmLayer {
                        fwd: cell(),
                        bwd: cell(),
                    }
                })
                .collect(),
            out_weight: Array2::zeros((config.output_dim, 2 * h)),
            out_bias: Array1::zeros(config.output_dim),
        }
    }

    /// Zero-valued parameters with the same shapes as `self`.
    pub fn zeros_like(&self) -> Self {
        EncoderParams {
            char_embed: Array2::zeros(self.char_embed.raw_dim()),
            layers: self
                .layers
                .iter()
                .map(|l| BiLstmLayer {
                    fwd: LstmCell {
                        w_input: Array2::zeros(l.fwd.w_input.raw_dim()),
                        w_recur: Array2::zeros(l.fwd.w_recur.raw_dim()),
                        bias: Array1::zeros(l.fwd.bias.raw_dim()),
                    },
                    bwd: LstmCell {
                        w_input: Array2::zeros(l.bwd.w_input.raw_dim()),
                        w_recur: Array2::zeros(l.bwd.w_recur.raw_dim()),
                        bias: Array1::zeros(l.bwd.bias.raw_dim()),
                    },
                })
                .collect(),
            out_weight: Array2::zeros(self.out_weight.raw_dim()),
            out_bias: Array1::zeros(self.out_bias.raw_dim()),
        }
    }

    /// Flat views over every parameter tensor, in a fixed canonical order.
    pub fn flat_chunks(&self) -> Vec<&[f64]> {
        let mut chunks = vec![self.char_embed.as_slice().expect("contiguous")];
        for layer in &self.layers {
            for cell in [&layer.fwd, &layer.bwd] {
                chunks.push(cell.w_input.as_slice().expect("contiguous"));
                chunks.push(cell.w_recur.as_slice().expect("contiguous"));
                chunks.push(cell.bias.as_slice().expect("contiguous"));
            }
        }
        chunks.push(self.out_weight.as_slice().expect("contiguous"));
        chunks.push(self.out_bias.as_slice().expect("contiguous"));
        chunks
    }

    pub fn flat_chunks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut chunks = vec![self.char_embed.as_slice_mut().expect("contiguous")];
        for layer in &mut self.layers {
            for cell in [&mut layer.fwd, &mut layer.bwd] {
                chunks.push(cell.w_input.as_slice_mut().expect("contiguous"));
                chunks.push(cell.w_recur.as_slice_mut().expect("contiguous"));
                chunks.push(cell.bias.as_slice_mut().expect("contiguous"));
            }
        }
        chunks.push(self.out_weight.as_slice_mut().expect("contiguous"));
        chunks.push(self.out_bias.as_slice_mut().expect("contiguous"));
        chunks
    }

    pub fn num_params(&self) -> usize {
        self.flat_chunks().iter().map(|c| c.len()).sum()
    }

    /// `self += other`, shape-for-shape.
    pub fn accumulate(&mut self, other: &EncoderParams) {
        for (dst, src) in self.flat_chunks_mut().into_iter().zip(other.flat_chunks()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for chunk in self.flat_chunks_mut() {
            for v in chunk {
                *v *= factor;
            }
        }
    }

    pub fn iter_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.flat_chunks().into_iter().flatten().copied()
    }

    pub fn all_finite(&self) -> bool {
        self.iter_values().all(f64::is_finite)
    }
}

/// Closed-form parameter count for a config over a vocabulary of `v` chars
/// (including the unknown token).
pub fn parameter_count(config: &EncoderConfig, vocab_size: usize) -> usize {
    let h = config.hidden_dim;
    let mut total = vocab_size * config.char_embed_dim;
    for l in 0..config.num_recurrent_layers {
        let d = config.layer_input_dim(l);
        total += 2 * (4 * h * d + 4 * h * h + 4 * h);
    }
    total + config.output_dim * 2 * h + config.output_dim
}
